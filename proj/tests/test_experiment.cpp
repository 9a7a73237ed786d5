#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "nla/binio.hpp"
#include "nla/experiment.hpp"

using namespace nla;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentSpec small_spec(const char* name) {
    ExperimentSpec s = standard_instance();
    s.data.synthetic.n_per_class = 40;
    s.data.synthetic.n_test_per_class = 20;
    s.hidden_dim = 8;
    s.train.epochs = 3;
    s.seeds = {1, 2};
    s.noise_rates = {0.2};
    s.modes = {LossMode::CE, LossMode::NLA};
    s.out_dir = fs::temp_directory_path() / (std::string("nla_exp_") + name);
    fs::remove_all(s.out_dir);
    return s;
}

std::size_t count_lines(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

} // namespace

TEST_CASE("standard instance") {
    const auto s = standard_instance();
    CHECK(s.data.synthetic.num_classes == 7);
    CHECK(s.data.synthetic.dim == 8);
    CHECK(s.data.synthetic.n_per_class == 500);
    CHECK(s.data.synthetic.ambiguity == 0.3);
    CHECK(s.hidden_dim == 64);
    CHECK(s.train.lr0 == 1e-2);
    CHECK(s.train.epochs == 60);
    CHECK(s.train.lambda == 0.5);
    CHECK(s.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("config overlay and round trip") {
    const json doc = json::parse(R"({
        "out_dir": "elsewhere",
        "data": {"ambiguity": 0.4, "n_per_class": 100},
        "sweep": {"noise": [0.1, 0.2, 0.3], "modes": ["ce", "naw", "nla"], "seeds": [7, 8], "selector": "best_mean"},
        "model": {"hidden_dim": 0},
        "train": {"epochs": 5, "lambda": 0.25},
        "policy": {"mu_true": [0.6, 0.4], "axis_ratio_false": 3}
    })");
    const auto s = spec_from_json(doc);
    CHECK(s.out_dir == "elsewhere");
    CHECK(s.data.synthetic.ambiguity == 0.4);
    CHECK(s.data.synthetic.n_per_class == 100);
    CHECK(s.data.synthetic.dim == 8);
    CHECK(s.noise_rates.size() == 3);
    CHECK(s.modes.size() == 3);
    CHECK(s.selector == Selector::BestMean);
    CHECK(s.hidden_dim == 0);
    CHECK(s.train.epochs == 5);
    CHECK(s.train.lambda == 0.25);
    CHECK(s.train.lr0 == 1e-2);
    CHECK(s.train.policy.mu_true == Vec2d(0.6, 0.4));
    CHECK(s.train.policy.axis_ratio_false == 3.0);

    CHECK(spec_to_json(spec_from_json(spec_to_json(s))) == spec_to_json(s));
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"trian": {}})")), ConfigError);
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"train": {"epoch": 3}})")), ConfigError);
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"train": {"epochs": "three"}})")), ConfigError);
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"sweep": {"modes": ["focal"]}})")), ConfigError);
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"policy": {"mu_true": [0.5]}})")), ConfigError);
    CHECK_THROWS_AS(spec_from_json(json::parse(R"({"data": {"source": "hdf5"}})")), ConfigError);

    auto s = standard_instance();
    s.noise_rates = {0.1, 0.1};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = standard_instance();
    s.imbalance_factors = {0.5};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = standard_instance();
    s.train.lambda = 2.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(load_spec("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("cell enumeration") {
    auto s = standard_instance();
    s.noise_rates = {0.1, 0.2, 0.3};
    const auto cells = enumerate_cells(s);
    CHECK(cells.size() == 30);
    std::set<std::string> ids;
    for (const auto& c : cells)
        ids.insert(c.id());
    CHECK(ids.size() == 30);
    CHECK(cells.front().id() == "ce_n0.1_i1_s1");
    CHECK(Cell{0.3, 100.0, LossMode::NAW, 2}.id() == "naw_n0.3_i100_s2");
}

TEST_CASE("seed derivation") {
    CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
    CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
    CHECK(fnv1a64("foobar") == 0x85944171F73967E8ULL);

    auto s = standard_instance();
    const Cell a{0.3, 1.0, LossMode::CE, 3};
    const Cell b{0.3, 1.0, LossMode::NLA, 3};
    CHECK(data_seed(s, a) == data_seed(s, b));
    CHECK(train_seed(s, a) == train_seed(s, b));
    CHECK(data_seed(s, a) != train_seed(s, a));
    CHECK(data_seed(s, a) != data_seed(s, Cell{0.3, 1.0, LossMode::CE, 4}));
    CHECK(data_seed(s, a) == split_seed(0, fnv1a64("data|n0.3_i1_s3")));

    const auto before = data_seed(s, a);
    s.noise_rates = {0.1, 0.2, 0.3};
    s.seeds = {9, 3};
    CHECK(data_seed(s, a) == before);
    s.base_seed = 1;
    CHECK(data_seed(s, a) != before);
}

TEST_CASE("corrupt_train_set") {
    Rng g(5);
    SyntheticSpec syn;
    syn.n_per_class = 200;
    const auto data = make_synthetic(syn, g);
    const Dataset noisy = corrupt_train_set(data.train, 0.2, 1.0, 11);
    CHECK(noisy.flipped_count() == 280);
    const Dataset both = corrupt_train_set(data.train, 0.2, 50.0, 11);
    CHECK(both.size() < noisy.size());
    const auto [lo, hi] = std::minmax_element(both.class_counts.begin(), both.class_counts.end());
    CHECK(std::abs(static_cast<double>(*hi) / *lo - 50.0) < 5.0);
    CHECK(dataset_fingerprint(corrupt_train_set(data.train, 0.2, 50.0, 11)) == dataset_fingerprint(both));
    CHECK(dataset_fingerprint(corrupt_train_set(data.train, 0.2, 50.0, 12)) != dataset_fingerprint(both));
}

TEST_CASE("mean_std") {
    const auto [m, sd] = mean_std({1.0, 2.0, 3.0, 4.0});
    CHECK(m == 2.5);
    CHECK(std::abs(sd - std::sqrt(5.0 / 3.0)) < 1e-15);
    CHECK(std::isnan(mean_std({1.0}).second));
    CHECK(mean_std({1.0}).first == 1.0);
    CHECK(std::isnan(mean_std({}).first));
}

TEST_CASE("metrics csv parses back exactly") {
    auto s = small_spec("parse");
    BaseData base = load_base_data(s.data);
    const Cell cell{0.0, 1.0, LossMode::NLA, 1};
    const auto rec = run_training(cell_config(s, cell), base.train, base.test, cell_architecture(s, base.train));
    const std::string text = metrics_csv(rec);
    RunRecord back;
    back.epochs = parse_metrics_csv(text);
    CHECK(metrics_csv(back) == text);
    CHECK_THROWS_AS(parse_metrics_csv("epoch,lr\n"), std::invalid_argument);
}

TEST_CASE("generate writes caches and reproducible fingerprints") {
    auto s = small_spec("gen");
    s.imbalance_factors = {1.0, 10.0};
    const auto audit = generate_datasets(s, false);
    CHECK(audit.size() == 4);
    CHECK(audit[0].flipped == static_cast<std::size_t>(std::llround(0.2 * 280)));
    BaseData base = load_base_data(s.data);
    for (double f : s.imbalance_factors) {
        const Cell cell{0.2, f, LossMode::CE, 2};
        const Dataset noisy = corrupt_train_set(base.train, 0.2, 1.0, data_seed(s, cell));
        const int smallest = *std::min_element(noisy.class_counts.begin(), noisy.class_counts.end());
        const auto expected = f > 1.0 ? imbalance_profile(smallest, f, 7) : noisy.class_counts;
        const Dataset cached = load_dataset(Layout{s.out_dir}.train_cache(cell));
        CHECK(cached.class_counts == expected);
    }
    const std::string first = read_file_text(Layout{s.out_dir}.fingerprints());
    generate_datasets(s, true);
    CHECK(read_file_text(Layout{s.out_dir}.fingerprints()) == first);
    fs::remove_all(s.out_dir);
}

TEST_CASE("run_cell writes a resumable record") {
    auto s = small_spec("cell");
    const Layout layout{s.out_dir};
    const Cell ce{0.2, 1.0, LossMode::CE, 1};
    const Cell nla{0.2, 1.0, LossMode::NLA, 1};
    CHECK(run_cell(s, ce, false).status == CellOutcome::Status::Done);
    const std::string metrics = read_file_text(layout.run_dir(ce) / "metrics.csv");
    CHECK(count_lines(metrics) == 4);
    CHECK(fs::exists(layout.run_dir(ce) / "checkpoint.nlack"));
    CHECK(load_checkpoint(layout.run_dir(ce) / "checkpoint.nlack").arch == Architecture{8, 8, 7});

    CHECK(run_cell(s, ce, false).status == CellOutcome::Status::Skipped);
    CHECK(run_cell(s, ce, true).status == CellOutcome::Status::Done);
    CHECK(read_file_text(layout.run_dir(ce) / "metrics.csv") == metrics);

    run_cell(s, nla, false);
    json ma = json::parse(read_file_text(layout.run_dir(ce) / "manifest.json"));
    json mb = json::parse(read_file_text(layout.run_dir(nla) / "manifest.json"));
    CHECK(ma["mode"] == "ce");
    CHECK(mb["mode"] == "nla");
    CHECK(ma["code_version"] == std::string(kCodeVersion));
    CHECK(ma["fingerprints"]["train"].get<std::string>().size() == 64);
    ma.erase("mode");
    mb.erase("mode");
    CHECK(ma == mb);
    fs::remove_all(s.out_dir);
}

TEST_CASE("sweep summary is independent of worker count and marks failures") {
    auto s1 = small_spec("sweep1");
    auto s2 = small_spec("sweep2");
    const auto a = run_sweep(s1, 1, false);
    const auto b = run_sweep(s2, 3, false);
    CHECK(a.cells.size() == 2);
    CHECK(a.deltas.size() == 1);
    for (const char* f : {"summary.csv", "table_noise.csv", "table_imbalance.csv", "summary.json"})
        CHECK(read_file_text(Layout{s1.out_dir}.summary_dir() / f) ==
              read_file_text(Layout{s2.out_dir}.summary_dir() / f));
    for (const auto& c : a.cells) {
        CHECK(c.complete());
        CHECK(c.per_class_mean.size() == 7);
        CHECK(std::isfinite(c.overall_std));
    }

    std::vector<CellOutcome> outcomes = a.outcomes;
    outcomes[0].status = CellOutcome::Status::Failed;
    outcomes[0].error = "synthetic failure";
    const auto partial = summarize(s1, outcomes);
    CHECK_FALSE(partial.cells[0].complete());
    CHECK(partial.cells[0].completed_seeds == std::vector<std::uint64_t>{2});
    CHECK(std::isnan(partial.cells[0].overall_std));
    CHECK(partial.deltas[0].paired == 1);
    write_summary(s1, partial);
    const json doc = json::parse(read_file_text(Layout{s1.out_dir}.summary_dir() / "summary.json"));
    CHECK(doc["cells"][0]["complete"] == false);
    CHECK(doc["cells"][0]["overall_std"].is_null());
    CHECK(doc["failures"].size() == 1);

    std::vector<std::string> missing;
    CHECK(write_plotdata(s1, missing) == 4);
    CHECK(missing.empty());
    const std::string wq = read_file_text(Layout{s1.out_dir}.plot_dir() / "weight_quartiles.csv");
    CHECK(wq.substr(0, wq.find('\n')) == "run,mode,noise,imbalance,seed,epoch,class,q1,median,q3");
    CHECK(count_lines(wq) == 1 + 4 * 3 * 7);
    CHECK(count_lines(read_file_text(Layout{s1.out_dir}.plot_dir() / "accuracy_curves.csv")) == 1 + 4 * 3 * 7);
    CHECK(count_lines(read_file_text(Layout{s1.out_dir}.plot_dir() / "loss_curves.csv")) == 1 + 4 * 3 * 5);

    s1.seeds = {1, 2, 3};
    missing.clear();
    CHECK(write_plotdata(s1, missing) == 4);
    CHECK(missing.size() == 2);
    fs::remove_all(s1.out_dir);
    fs::remove_all(s2.out_dir);
}
