#ifndef NLA_TRAINER_HPP
#define NLA_TRAINER_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nla/data.hpp"
#include "nla/losses.hpp"
#include "nla/model.hpp"
#include "nla/naw.hpp"

namespace nla {

struct TrainConfig {
    double lambda = 0.5;
    int batch_size = 32;
    int epochs = 60;
    double lr0 = 1e-4;
    double lr_gamma = 0.9;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    WeightPolicyd policy;
    LossMode mode = LossMode::NLA;

    void validate() const;
};

/// Adam with decoupled weight decay:
///   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
///   p -= lr * wd * p + lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamOptimizer {
public:
    AdamOptimizer(const ModelParams& params, double beta1, double beta2, double epsilon);

    void step(ModelParams& params, const ModelGradients& grads, double lr, double weight_decay);
    long steps_taken() const { return t_; }

private:
    double beta1_;
    double beta2_;
    double epsilon_;
    long t_ = 0;
    ModelGradients m_;
    ModelGradients v_;
};

struct Quartiles {
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
};

/// Linear-interpolation quartiles (the usual "type 7" definition). Empty
/// input yields NaNs.
Quartiles quartiles(std::vector<double> values);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double ce = 0.0;
    double naw_ce = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double weight_mean = 0.0;
    double overall_accuracy = 0.0;
    double mean_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<Quartiles> weight_quartiles;
};

struct EvalResult {
    double overall = 0.0;
    double mean = 0.0;
    std::vector<double> per_class;
    std::vector<std::vector<long>> confusion; ///< [truth][predicted]
};

struct RunRecord {
    std::vector<EpochMetrics> epochs;
    ModelParams final_params;

    const EpochMetrics& final_epoch() const { return epochs.back(); }
    const EpochMetrics& best_by_mean_accuracy() const;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int epoch, long step)
        : std::runtime_error(what), epoch_(epoch), step_(step) {}
    int epoch() const { return epoch_; }
    long step() const { return step_; }

private:
    int epoch_;
    long step_;
};

struct BatchResult {
    double ce = 0.0;
    double naw_ce = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double weight_mean = 0.0;
    std::vector<double> weights;
    ModelGradients grads;
};

/// Mean objective and parameter gradient over one batch. `flipped` is the
/// view-transformed copy of `inputs` (ignored for CE and NAW). When
/// `frozen_weights` is given, those per-sample weights replace the kernel
/// evaluation, which is how finite-difference checks hold the weight fixed.
/// Overflowing logits give an infinite total and zero gradients.
BatchResult evaluate_batch(const ModelParams& params, const MatrixXd& inputs, const MatrixXd& flipped,
                           const std::vector<int>& labels, const EpochKernels<double>& kernels, double lambda,
                           LossMode mode, const std::vector<double>* frozen_weights = nullptr);

int predict(const VectorXd& logits);

/// Requires every class to appear in `test`.
EvalResult evaluate(const ModelParams& params, const Dataset& test);

/// Per-class quartiles of the weight each training sample receives from the
/// given epoch's kernels (grouped by the observed label).
std::vector<Quartiles> collect_weight_stats(const ModelParams& params, const Dataset& train, int epoch,
                                            const WeightPolicyd& policy);

/// The policy horizon is taken from config.epochs; epoch e (0-based) trains
/// with the true-branch kernel at CS(e, E) and reports the learning rate
/// lr0 * gamma^e used during that epoch.
RunRecord run_training(const TrainConfig& config, const Dataset& train, const Dataset& test,
                       const Architecture& arch);

/// Metric CSV columns, in order:
///   epoch, lr, ce, naw_ce, reg, total, weight_mean, overall_acc, mean_acc,
///   acc_0..acc_{K-1}, then for each class k: wq1_k, wmed_k, wq3_k.
/// Numbers are written in shortest round-trip form.
std::string metrics_csv(const RunRecord& record);

} // namespace nla

#endif // NLA_TRAINER_HPP
