#include "nla/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "nla/binio.hpp"

namespace nla {

void TrainConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("TrainConfig: lambda must lie in [0, 1]");
    if (batch_size < 1)
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 1)
        throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(lr0 > 0.0) || !(lr_gamma > 0.0) || !(weight_decay >= 0.0) || !(epsilon > 0.0))
        throw std::invalid_argument("TrainConfig: rates must be positive (weight decay non-negative)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("TrainConfig: Adam betas must lie in [0, 1)");
    policy.validate();
}

// Adam ------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const ModelParams& params, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(zeros_like(params)), v_(zeros_like(params)) {}

void AdamOptimizer::step(ModelParams& params, const ModelGradients& grads, double lr, double weight_decay) {
    if (grads.layers.size() != params.layers.size())
        throw std::invalid_argument("AdamOptimizer: gradient layout does not match parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        p -= lr * weight_decay * p;
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
    };
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight, v_.layers[i].weight);
        update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias);
    }
}

// Statistics ------------------------------------------------------------------------

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan};
    }
    std::sort(values.begin(), values.end());
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] + frac * (values[hi] - values[lo]);
    };
    return {at(0.25), at(0.5), at(0.75)};
}

const EpochMetrics& RunRecord::best_by_mean_accuracy() const {
    if (epochs.empty())
        throw std::logic_error("RunRecord: no epochs recorded");
    return *std::max_element(epochs.begin(), epochs.end(), [](const auto& a, const auto& b) {
        return a.mean_accuracy < b.mean_accuracy;
    });
}

// Batch objective ------------------------------------------------------------------------

BatchResult evaluate_batch(const ModelParams& params, const MatrixXd& inputs, const MatrixXd& flipped,
                           const std::vector<int>& labels, const EpochKernels<double>& kernels, double lambda,
                           LossMode mode, const std::vector<double>* frozen_weights) {
    const auto n = inputs.rows();
    if (static_cast<std::size_t>(n) != labels.size() || n == 0)
        throw std::invalid_argument("evaluate_batch: inputs/labels mismatch or empty batch");
    if (frozen_weights && frozen_weights->size() != labels.size())
        throw std::invalid_argument("evaluate_batch: frozen weight count mismatch");
    const bool two_views = mode == LossMode::NLA;
    if (two_views && (flipped.rows() != n || flipped.cols() != inputs.cols()))
        throw std::invalid_argument("evaluate_batch: flipped view shape mismatch");

    const ForwardTrace trace = forward(params, inputs);
    ForwardTrace trace_flip;
    if (two_views)
        trace_flip = forward(params, flipped);

    BatchResult out;
    if (!trace.logits.allFinite() || (two_views && !trace_flip.logits.allFinite())) {
        out.ce = out.naw_ce = out.total = std::numeric_limits<double>::infinity();
        out.grads = zeros_like(params);
        return out;
    }

    const auto k = params.arch.output_dim;
    MatrixXd grad(n, k);
    MatrixXd grad_aux;
    if (two_views)
        grad_aux.resize(n, k);

    out.weights.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const auto z = trace.logits.row(i).transpose();
        double w = 0.0;
        if (mode != LossMode::CE)
            w = frozen_weights ? (*frozen_weights)[static_cast<std::size_t>(i)]
                               : kernels.weight(softmax(z), y);
        const LossBreakdown<double> lb =
            two_views ? total_loss_with_weight(z, trace_flip.logits.row(i).transpose(), y, w, lambda, mode)
                      : total_loss_with_weight(z, z, y, w, lambda, mode);
        out.ce += lb.ce;
        out.naw_ce += lb.naw_ce;
        out.reg += lb.reg;
        out.total += lb.total;
        out.weight_mean += lb.weight;
        out.weights[static_cast<std::size_t>(i)] = lb.weight;
        grad.row(i) = lb.grad_logits.transpose();
        if (two_views)
            grad_aux.row(i) = lb.grad_logits_aux.transpose();
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.ce *= inv_n;
    out.naw_ce *= inv_n;
    out.reg *= inv_n;
    out.total *= inv_n;
    out.weight_mean *= inv_n;
    out.grads = backward(params, trace, grad);
    if (two_views)
        out.grads += backward(params, trace_flip, grad_aux);
    return out;
}

// Evaluation ------------------------------------------------------------------------

int predict(const VectorXd& logits) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
}

EvalResult evaluate(const ModelParams& params, const Dataset& test) {
    if (test.size() == 0)
        throw std::invalid_argument("evaluate: empty test split");
    const int k = params.arch.output_dim;
    if (test.num_classes != k)
        throw std::invalid_argument("evaluate: test split class count differs from model output");
    EvalResult r;
    r.confusion.assign(static_cast<std::size_t>(k), std::vector<long>(static_cast<std::size_t>(k), 0));
    const MatrixXd logits = forward(params, test.inputs).logits;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int truth = test.labels[static_cast<std::size_t>(i)];
        ++r.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predict(logits.row(i).transpose()))];
    }
    long correct = 0;
    r.per_class.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const auto& row = r.confusion[static_cast<std::size_t>(c)];
        const long row_sum = std::accumulate(row.begin(), row.end(), 0L);
        if (row_sum == 0)
            throw std::invalid_argument("evaluate: class " + std::to_string(c) + " missing from test split");
        correct += row[static_cast<std::size_t>(c)];
        r.per_class[static_cast<std::size_t>(c)] =
            static_cast<double>(row[static_cast<std::size_t>(c)]) / static_cast<double>(row_sum);
    }
    r.overall = static_cast<double>(correct) / static_cast<double>(test.size());
    double sum = 0.0;
    for (double a : r.per_class)
        sum += a;
    r.mean = sum / static_cast<double>(k);
    return r;
}

std::vector<Quartiles> collect_weight_stats(const ModelParams& params, const Dataset& train, int epoch,
                                            const WeightPolicyd& policy) {
    const EpochKernels<double> kernels(policy, epoch);
    const MatrixXd logits = forward(params, train.inputs).logits;
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(train.num_classes));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = train.labels[static_cast<std::size_t>(i)];
        per_class[static_cast<std::size_t>(y)].push_back(kernels.weight(softmax(logits.row(i).transpose()), y));
    }
    std::vector<Quartiles> out;
    out.reserve(per_class.size());
    for (auto& w : per_class)
        out.push_back(quartiles(std::move(w)));
    return out;
}

// Training loop --------------------------------------------------------------------------

RunRecord run_training(const TrainConfig& config, const Dataset& train, const Dataset& test,
                       const Architecture& arch) {
    config.validate();
    train.validate();
    test.validate();
    if (train.size() == 0)
        throw std::invalid_argument("run_training: empty train split");
    if (arch.input_dim != train.dim() || arch.output_dim != train.num_classes)
        throw std::invalid_argument("run_training: architecture does not match the dataset");

    WeightPolicyd policy = config.policy;
    policy.total_epochs = config.epochs;

    const Rng root(config.seed);
    Rng init_rng = root.split(1);
    Rng shuffle_rng = root.split(2);

    RunRecord record;
    record.final_params = init_params(arch, init_rng);
    ModelParams& params = record.final_params;
    AdamOptimizer adam(params, config.beta1, config.beta2, config.epsilon);

    const ViewTransform view = ViewTransform::for_dataset(train);
    const MatrixXd flipped_all = config.mode == LossMode::NLA ? view.apply(train.inputs) : MatrixXd();

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);
    long step = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.lr0 * std::pow(config.lr_gamma, static_cast<double>(epoch));
        const EpochKernels<double> kernels(policy, epoch);
        shuffle_rng.shuffle(order);

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            MatrixXd xb(static_cast<Eigen::Index>(len), train.inputs.cols());
            MatrixXd xf;
            if (config.mode == LossMode::NLA)
                xf.resize(static_cast<Eigen::Index>(len), train.inputs.cols());
            std::vector<int> yb(len);
            for (std::size_t i = 0; i < len; ++i) {
                const auto row = static_cast<Eigen::Index>(order[start + i]);
                xb.row(static_cast<Eigen::Index>(i)) = train.inputs.row(row);
                if (config.mode == LossMode::NLA)
                    xf.row(static_cast<Eigen::Index>(i)) = flipped_all.row(row);
                yb[i] = train.labels[order[start + i]];
            }
            BatchResult br = evaluate_batch(params, xb, xf, yb, kernels, config.lambda, config.mode);
            if (!std::isfinite(br.total)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", step " << step << " (lr " << lr
                    << ", ce " << br.ce << ", reg " << br.reg << ")";
                throw DivergenceError(msg.str(), epoch, step);
            }
            const auto w = static_cast<double>(len);
            m.ce += br.ce * w;
            m.naw_ce += br.naw_ce * w;
            m.reg += br.reg * w;
            m.total += br.total * w;
            m.weight_mean += br.weight_mean * w;
            adam.step(params, br.grads, lr, config.weight_decay);
            ++step;
        }
        if (!params.all_finite())
            throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch), epoch, step);

        const double inv = 1.0 / static_cast<double>(train.size());
        m.ce *= inv;
        m.naw_ce *= inv;
        m.reg *= inv;
        m.total *= inv;
        m.weight_mean *= inv;

        const EvalResult eval = evaluate(params, test);
        m.overall_accuracy = eval.overall;
        m.mean_accuracy = eval.mean;
        m.per_class_accuracy = eval.per_class;
        m.weight_quartiles = collect_weight_stats(params, train, epoch, policy);
        record.epochs.push_back(std::move(m));
    }
    return record;
}

std::string metrics_csv(const RunRecord& record) {
    std::ostringstream out;
    const std::size_t k = record.epochs.empty() ? 0 : record.epochs.front().per_class_accuracy.size();
    out << "epoch,lr,ce,naw_ce,reg,total,weight_mean,overall_acc,mean_acc";
    for (std::size_t c = 0; c < k; ++c)
        out << ",acc_" << c;
    for (std::size_t c = 0; c < k; ++c)
        out << ",wq1_" << c << ",wmed_" << c << ",wq3_" << c;
    out << '\n';
    for (const auto& m : record.epochs) {
        out << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.ce) << ','
            << format_double(m.naw_ce) << ',' << format_double(m.reg) << ',' << format_double(m.total) << ','
            << format_double(m.weight_mean) << ',' << format_double(m.overall_accuracy) << ','
            << format_double(m.mean_accuracy);
        for (double a : m.per_class_accuracy)
            out << ',' << format_double(a);
        for (const auto& q : m.weight_quartiles)
            out << ',' << format_double(q.q1) << ',' << format_double(q.median) << ',' << format_double(q.q3);
        out << '\n';
    }
    return out.str();
}

} // namespace nla
