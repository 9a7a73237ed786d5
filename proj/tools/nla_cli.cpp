#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "nla/binio.hpp"
#include "nla/checks.hpp"
#include "nla/experiment.hpp"

using namespace nla;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kPartial = 3 };

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::string noise;
    std::string imbalance;
    std::string mode;
    std::optional<int> epochs;
    std::string out;
    bool force = false;
    int workers = 1;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "single run seed (same as --seeds N..N)");
    cmd->add_option("--seeds", f.seeds, "inclusive run seed range A..B");
    cmd->add_option("--noise", f.noise, "comma-separated noise rates");
    cmd->add_option("--imbalance", f.imbalance, "comma-separated imbalance factors");
    cmd->add_option("--mode", f.mode, "loss mode")->check(CLI::IsMember({"ce", "naw", "nla"}));
    cmd->add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "output root (default $NLA_OUT_DIR, else ./nla_out)");
    cmd->add_flag("--force", f.force, "regenerate caches and rerun completed cells");
    cmd->add_option("--workers", f.workers, "parallel sweep cells")->check(CLI::PositiveNumber);
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || *end != '\0')
            throw ConfigError(std::string(flag) + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty())
        throw ConfigError(std::string(flag) + ": empty list");
    return out;
}

std::vector<std::uint64_t> parse_range(const std::string& text) {
    const auto dots = text.find("..");
    try {
        if (dots == std::string::npos)
            return {std::stoull(text)};
        const auto a = std::stoull(text.substr(0, dots));
        const auto b = std::stoull(text.substr(dots + 2));
        if (b < a)
            throw ConfigError("--seeds: empty range " + text);
        std::vector<std::uint64_t> out;
        for (auto s = a; s <= b; ++s)
            out.push_back(s);
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError("--seeds: expected A..B, got '" + text + "'");
    }
}

ExperimentSpec resolve(const Flags& f) {
    ExperimentSpec spec = standard_instance();
    if (const char* env = std::getenv("NLA_OUT_DIR"); env && *env)
        spec.out_dir = env;
    if (!f.config.empty())
        spec = load_spec(f.config, spec);
    if (f.seed && !f.seeds.empty())
        throw ConfigError("--seed and --seeds are mutually exclusive");
    if (f.seed)
        spec.seeds = {*f.seed};
    if (!f.seeds.empty())
        spec.seeds = parse_range(f.seeds);
    if (!f.noise.empty())
        spec.noise_rates = parse_list(f.noise, "--noise");
    if (!f.imbalance.empty())
        spec.imbalance_factors = parse_list(f.imbalance, "--imbalance");
    if (!f.mode.empty())
        spec.modes = {parse_loss_mode(f.mode)};
    if (f.epochs)
        spec.train.epochs = *f.epochs;
    if (!f.out.empty())
        spec.out_dir = f.out;
    spec.validate();
    return spec;
}

int cmd_generate(const ExperimentSpec& spec, const Flags& f) {
    for (const auto& a : generate_datasets(spec, f.force)) {
        char line[256];
        std::snprintf(line, sizeof line, "%s: n=%zu flipped=%zu (%.4f) max/min=%d/%d (%.2f) sha256=%s",
                      a.data_id.c_str(), a.size, a.flipped, static_cast<double>(a.flipped) / static_cast<double>(a.size),
                      a.max_count, a.min_count, static_cast<double>(a.max_count) / a.min_count,
                      a.fingerprint.c_str());
        std::cout << line << '\n';
    }
    std::cout << "fingerprints: " << Layout{spec.out_dir}.fingerprints().string() << '\n';
    return kOk;
}

int cmd_train(const ExperimentSpec& spec, const Flags& f) {
    if (spec.noise_rates.size() != 1 || spec.imbalance_factors.size() != 1 || spec.modes.size() != 1 ||
        spec.seeds.size() != 1) {
        std::cerr << "train runs one cell: give exactly one noise rate, imbalance factor, mode and seed\n";
        return kUsage;
    }
    const Cell cell{spec.noise_rates[0], spec.imbalance_factors[0], spec.modes[0], spec.seeds[0]};
    try {
        const auto o = run_cell(spec, cell, f.force);
        const auto dir = Layout{spec.out_dir}.run_dir(cell).string();
        if (o.status == CellOutcome::Status::Skipped)
            std::cout << cell.id() << ": manifest exists, skipped (use --force to rerun) " << dir << '\n';
        else
            std::cout << cell.id() << ": done " << dir << '\n';
    } catch (const DivergenceError& e) {
        std::cerr << cell.id() << ": diverged at epoch " << e.epoch() << " step " << e.step() << ": " << e.what()
                  << '\n';
        return kRuntime;
    }
    return kOk;
}

int cmd_sweep(const ExperimentSpec& spec, const Flags& f) {
    const auto summary = run_sweep(spec, f.workers, f.force, [](const std::string& line) {
        std::cout << line << std::endl;
    });
    std::cout << "mode,noise,imbalance,completed,overall_mean,overall_std,mean_acc_mean,mean_acc_std\n";
    for (const auto& c : summary.cells)
        std::cout << to_string(c.mode) << ',' << format_double(c.noise) << ',' << format_double(c.imbalance) << ','
                  << c.completed_seeds.size() << '/' << c.expected << ',' << c.overall_mean << ',' << c.overall_std
                  << ',' << c.mean_acc_mean << ',' << c.mean_acc_std << (c.complete() ? "" : " (incomplete)") << '\n';
    std::cout << "summary: " << Layout{spec.out_dir}.summary_dir().string() << '\n';
    for (const auto& o : summary.outcomes)
        if (o.status == CellOutcome::Status::Failed)
            return kPartial;
    return kOk;
}

int cmd_plotdata(const ExperimentSpec& spec) {
    std::vector<std::string> missing;
    const auto runs = write_plotdata(spec, missing);
    for (const auto& m : missing)
        std::cerr << "missing run record: " << m << '\n';
    if (runs == 0) {
        std::cerr << "no run records under " << spec.out_dir.string() << '\n';
        return kRuntime;
    }
    std::cout << runs << " runs -> " << Layout{spec.out_dir}.plot_dir().string() << '\n';
    return kOk;
}

int cmd_check() {
    bool ok = true;
    for (const auto& r : run_invariant_checks()) {
        std::cout << format_check(r) << std::endl;
        ok = ok && r.passed;
    }
    return ok ? kOk : kRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"NLA training harness"};
    app.set_version_flag("--version", kCodeVersion);
    app.require_subcommand(1);
    Flags flags;
    auto* gen = app.add_subcommand("generate", "write dataset caches and fingerprints");
    auto* train = app.add_subcommand("train", "run one cell");
    auto* sweep = app.add_subcommand("sweep", "run all cells and aggregate across seeds");
    auto* plot = app.add_subcommand("plotdata", "emit tidy CSVs for plotting");
    auto* check = app.add_subcommand("check", "run the invariant and gradient checks");
    for (auto* c : {gen, train, sweep, plot, check})
        add_flags(c, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (check->parsed())
            return cmd_check();
        const ExperimentSpec spec = resolve(flags);
        if (gen->parsed())
            return cmd_generate(spec, flags);
        if (train->parsed())
            return cmd_train(spec, flags);
        if (sweep->parsed())
            return cmd_sweep(spec, flags);
        return cmd_plotdata(spec);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
}
