#include "nla/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "nla/binio.hpp"

namespace nla {

namespace {

constexpr std::string_view kCheckpointMagic = "NLACKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::pair<int, int>> layer_shapes(const Architecture& arch) {
    if (arch.is_linear())
        return {{arch.output_dim, arch.input_dim}};
    return {{arch.hidden_dim, arch.input_dim}, {arch.output_dim, arch.hidden_dim}};
}

void check_shapes(const ModelParams& params) {
    const auto shapes = layer_shapes(params.arch);
    if (shapes.size() != params.layers.size())
        throw InvalidStateError("model: layer count does not match architecture");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& l = params.layers[i];
        if (l.weight.rows() != shapes[i].first || l.weight.cols() != shapes[i].second ||
            l.bias.size() != shapes[i].first)
            throw InvalidStateError("model: layer " + std::to_string(i) + " shape mismatch");
    }
}

} // namespace

void Architecture::validate() const {
    if (input_dim < 1 || output_dim < 1 || hidden_dim < 0)
        throw std::invalid_argument("Architecture: dims must be >= 1 (hidden_dim >= 0)");
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& l : layers)
        if (!l.weight.allFinite() || !l.bias.allFinite())
            return false;
    return true;
}

ModelGradients& ModelGradients::operator+=(const ModelGradients& other) {
    if (other.layers.size() != layers.size())
        throw std::invalid_argument("ModelGradients: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

ModelParams init_params(const Architecture& arch, Rng& rng) {
    arch.validate();
    ModelParams params;
    params.arch = arch;
    params.seed = rng.seed();
    for (auto [rows, cols] : layer_shapes(arch)) {
        Layer l;
        l.weight.resize(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                l.weight(r, c) = scale * rng.normal();
        l.bias = VectorXd::Zero(rows);
        params.layers.push_back(std::move(l));
    }
    return params;
}

ForwardTrace forward(const ModelParams& params, const MatrixXd& inputs) {
    check_shapes(params);
    if (inputs.cols() != params.arch.input_dim)
        throw std::invalid_argument("forward: input dim " + std::to_string(inputs.cols()) +
                                    " does not match model input dim " +
                                    std::to_string(params.arch.input_dim));
    ForwardTrace t;
    t.arch = params.arch;
    t.inputs = inputs;
    const auto& first = params.layers.front();
    if (params.arch.is_linear()) {
        t.logits = (inputs * first.weight.transpose()).rowwise() + first.bias.transpose();
        return t;
    }
    const auto& second = params.layers.back();
    t.hidden_pre = (inputs * first.weight.transpose()).rowwise() + first.bias.transpose();
    t.hidden = t.hidden_pre.array().tanh().matrix();
    t.logits = (t.hidden * second.weight.transpose()).rowwise() + second.bias.transpose();
    return t;
}

ModelGradients backward(const ModelParams& params, const ForwardTrace& trace, const MatrixXd& grad_logits) {
    check_shapes(params);
    if (!(trace.arch == params.arch))
        throw InvalidStateError("backward: trace was produced by a different architecture");
    const auto n = trace.inputs.rows();
    if (grad_logits.rows() != n || grad_logits.cols() != params.arch.output_dim)
        throw std::invalid_argument("backward: grad_logits shape does not match trace");
    if (n == 0)
        throw std::invalid_argument("backward: empty batch");
    const double inv_n = 1.0 / static_cast<double>(n);

    ModelGradients g;
    if (params.arch.is_linear()) {
        Layer l;
        l.weight = grad_logits.transpose() * trace.inputs * inv_n;
        l.bias = grad_logits.colwise().sum().transpose() * inv_n;
        g.layers.push_back(std::move(l));
        return g;
    }
    if (trace.hidden.rows() != n || trace.hidden.cols() != params.arch.hidden_dim)
        throw InvalidStateError("backward: trace hidden activations are missing or mis-shaped");
    const auto& second = params.layers.back();
    Layer out;
    out.weight = grad_logits.transpose() * trace.hidden * inv_n;
    out.bias = grad_logits.colwise().sum().transpose() * inv_n;
    const MatrixXd grad_hidden = grad_logits * second.weight;
    const MatrixXd grad_pre = (grad_hidden.array() * (1.0 - trace.hidden.array().square())).matrix();
    Layer in;
    in.weight = grad_pre.transpose() * trace.inputs * inv_n;
    in.bias = grad_pre.colwise().sum().transpose() * inv_n;
    g.layers.push_back(std::move(in));
    g.layers.push_back(std::move(out));
    return g;
}

ModelGradients zeros_like(const ModelParams& params) {
    ModelGradients g;
    for (const auto& l : params.layers)
        g.layers.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())});
    return g;
}

VectorXd flatten(const std::vector<Layer>& layers) {
    Eigen::Index n = 0;
    for (const auto& l : layers)
        n += l.weight.size() + l.bias.size();
    VectorXd flat(n);
    Eigen::Index at = 0;
    for (const auto& l : layers) {
        flat.segment(at, l.weight.size()) = l.weight.reshaped<Eigen::RowMajor>();
        at += l.weight.size();
        flat.segment(at, l.bias.size()) = l.bias;
        at += l.bias.size();
    }
    return flat;
}

void unflatten(const VectorXd& flat, std::vector<Layer>& layers) {
    Eigen::Index at = 0;
    for (auto& l : layers) {
        if (at + l.weight.size() + l.bias.size() > flat.size())
            throw std::invalid_argument("unflatten: vector too short");
        l.weight.reshaped<Eigen::RowMajor>() = flat.segment(at, l.weight.size());
        at += l.weight.size();
        l.bias = flat.segment(at, l.bias.size());
        at += l.bias.size();
    }
    if (at != flat.size())
        throw std::invalid_argument("unflatten: vector too long");
}

GradientCheckResult gradient_check(const ModelParams& params, const LossClosure& loss,
                                   const ModelGradients& analytic, const GradientCheckOptions& options) {
    const VectorXd base = flatten(params.layers);
    const VectorXd grad = flatten(analytic.layers);
    if (grad.size() != base.size())
        throw std::invalid_argument("gradient_check: gradient shape does not match parameters");

    const auto total = static_cast<std::size_t>(base.size());
    std::vector<std::size_t> coords;
    if (options.max_coordinates == 0 || options.max_coordinates >= total) {
        coords.resize(total);
        for (std::size_t i = 0; i < total; ++i)
            coords[i] = i;
    } else {
        Rng rng(options.seed);
        coords = rng.sample_without_replacement(total, options.max_coordinates);
    }

    GradientCheckResult result;
    ModelParams probe = params;
    VectorXd x = base;
    for (std::size_t c : coords) {
        const auto i = static_cast<Eigen::Index>(c);
        const double hi = base[i] + options.step;
        const double lo = base[i] - options.step;
        x[i] = hi;
        unflatten(x, probe.layers);
        const long double up = loss(probe);
        x[i] = lo;
        unflatten(x, probe.layers);
        const long double down = loss(probe);
        x[i] = base[i];

        // Divide by the step actually taken after rounding.
        const auto numeric = static_cast<double>((up - down) / static_cast<long double>(hi - lo));
        const double a = grad[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > result.max_relative_error || result.coordinates_checked == 0) {
            result.max_relative_error = rel;
            result.worst_coordinate = c;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
        ++result.coordinates_checked;
    }
    result.passed = result.max_relative_error <= options.tolerance;
    return result;
}

std::vector<char> encode_checkpoint(const ModelParams& params) {
    check_shapes(params);
    ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(params.arch.input_dim));
    w.u32(static_cast<std::uint32_t>(params.arch.hidden_dim));
    w.u32(static_cast<std::uint32_t>(params.arch.output_dim));
    w.u64(params.seed);
    for (const auto& l : params.layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                w.f64(l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            w.f64(l.bias[r]);
    }
    return w.buffer();
}

ModelParams decode_checkpoint(const std::vector<char>& bytes) {
    ByteReader r(bytes);
    if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
        throw FormatError("checkpoint: bad magic", 0);
    const auto version_at = r.offset();
    if (r.u32() != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version", version_at);
    ModelParams params;
    params.arch.input_dim = static_cast<int>(r.u32());
    params.arch.hidden_dim = static_cast<int>(r.u32());
    params.arch.output_dim = static_cast<int>(r.u32());
    params.seed = r.u64();
    try {
        params.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what(), kCheckpointMagic.size() + 4);
    }
    for (auto [rows, cols] : layer_shapes(params.arch)) {
        Layer l;
        l.weight.resize(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                l.weight(i, j) = r.f64();
        l.bias.resize(rows);
        for (int i = 0; i < rows; ++i)
            l.bias[i] = r.f64();
        params.layers.push_back(std::move(l));
    }
    if (r.remaining() != 0)
        throw FormatError("checkpoint: trailing bytes", r.offset());
    return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

} // namespace nla
