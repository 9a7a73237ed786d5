#ifndef NLA_MODEL_HPP
#define NLA_MODEL_HPP

// Small differentiable predictors: a linear softmax head (hidden_dim == 0)
// or a one-hidden-layer perceptron with tanh activation, with hand-written
// reverse mode.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nla/numkit.hpp"
#include "nla/rng.hpp"

namespace nla {

struct Architecture {
    int input_dim = 0;
    int hidden_dim = 0; ///< 0 selects the linear model
    int output_dim = 0;

    bool is_linear() const { return hidden_dim == 0; }
    bool operator==(const Architecture&) const = default;
    void validate() const;
};

/// weight is (fan_out x fan_in); the layer computes x W^T + b row-wise.
struct Layer {
    MatrixXd weight;
    VectorXd bias;
};

struct ModelParams {
    Architecture arch;
    std::uint64_t seed = 0;
    std::vector<Layer> layers;

    std::size_t parameter_count() const;
    bool all_finite() const;
};

/// Same shapes as ModelParams::layers.
struct ModelGradients {
    std::vector<Layer> layers;

    ModelGradients& operator+=(const ModelGradients& other);
};

struct ForwardTrace {
    Architecture arch;
    MatrixXd inputs;
    MatrixXd hidden_pre; ///< empty for the linear model
    MatrixXd hidden;     ///< tanh(hidden_pre)
    MatrixXd logits;     ///< one row per sample
};

ModelParams init_params(const Architecture& arch, Rng& rng);

ForwardTrace forward(const ModelParams& params, const MatrixXd& inputs);

/// Logits only, evaluated in `Scalar` arithmetic (parameters are widened
/// first). Used for extended-precision finite differences.
template <typename Scalar>
MatrixX<Scalar> forward_logits(const ModelParams& params, const MatrixX<Scalar>& inputs) {
    if (inputs.cols() != params.arch.input_dim)
        throw std::invalid_argument("forward_logits: input dim mismatch");
    MatrixX<Scalar> h = inputs;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const MatrixX<Scalar> w = params.layers[l].weight.template cast<Scalar>();
        const VectorX<Scalar> b = params.layers[l].bias.template cast<Scalar>();
        MatrixX<Scalar> z = (h * w.transpose()).rowwise() + b.transpose();
        h = l + 1 < params.layers.size() ? MatrixX<Scalar>(z.array().tanh().matrix()) : std::move(z);
    }
    return h;
}

/// Gradient of the batch-mean loss given per-sample d loss / d logits
/// (one row per sample).
ModelGradients backward(const ModelParams& params, const ForwardTrace& trace, const MatrixXd& grad_logits);

ModelGradients zeros_like(const ModelParams& params);

/// Parameters and gradients as one flat vector, layer by layer (weights
/// row-major, then bias).
VectorXd flatten(const std::vector<Layer>& layers);
void unflatten(const VectorXd& flat, std::vector<Layer>& layers);

struct GradientCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    /// Coordinates to probe; 0 means every parameter. Subsets are drawn
    /// without replacement from `seed`.
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 0;
    /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-8;
};

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
    bool passed = true;
};

/// May return extended precision; the central difference is formed in
/// long double before rounding.
using LossClosure = std::function<long double(const ModelParams&)>;

/// Central-difference check of `analytic` against `loss` around `params`.
GradientCheckResult gradient_check(const ModelParams& params, const LossClosure& loss,
                                   const ModelGradients& analytic, const GradientCheckOptions& options = {});

/// Checkpoint layout (all integers and doubles little-endian):
///   "NLACKPT1" | u32 version (=1) | u32 input_dim | u32 hidden_dim |
///   u32 output_dim | u64 seed | per layer: weight row-major f64, bias f64
std::vector<char> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

} // namespace nla

#endif // NLA_MODEL_HPP
