#ifndef NLA_EXPERIMENT_HPP
#define NLA_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nla/data.hpp"
#include "nla/trainer.hpp"

namespace nla {

#ifndef NLA_VERSION
#define NLA_VERSION "0.0.0"
#endif

inline constexpr const char* kCodeVersion = NLA_VERSION;

/// Malformed or inconsistent experiment configuration (exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DataKind { Synthetic, Idx, Csv };

struct DataSource {
    DataKind kind = DataKind::Synthetic;
    SyntheticSpec synthetic;
    std::uint64_t generator_seed = 12345;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::filesystem::path train_csv, test_csv;
    int num_classes = 0; ///< csv only; 0 infers from labels
};

enum class Selector { Final, BestMean };

struct ExperimentSpec {
    DataSource data;
    std::vector<double> noise_rates{0.0};
    std::vector<double> imbalance_factors{1.0};
    std::vector<LossMode> modes{LossMode::CE, LossMode::NLA};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::uint64_t base_seed = 0;
    int hidden_dim = 64;
    TrainConfig train;
    Selector selector = Selector::Final;
    std::filesystem::path out_dir = "nla_out";

    void validate() const;
};

/// K = 7, d = 8, 500 train / 300 test per class, ambiguity 0.3, tanh MLP with
/// 64 hidden units, lr0 = 1e-2, 60 epochs, seeds 1..5.
ExperimentSpec standard_instance();

/// Overlays a JSON document on `base`. Unknown keys raise ConfigError.
ExperimentSpec spec_from_json(const nlohmann::json& doc, ExperimentSpec base = standard_instance());
ExperimentSpec load_spec(const std::filesystem::path& path, ExperimentSpec base = standard_instance());
nlohmann::json spec_to_json(const ExperimentSpec& spec);

struct Cell {
    double noise = 0.0;
    double imbalance = 1.0;
    LossMode mode = LossMode::NLA;
    std::uint64_t seed = 1;

    /// e.g. "nla_n0.3_i100_s2"; unique within a sweep.
    std::string id() const;
    /// e.g. "n0.3_i100_s2"; shared by all modes of one (noise, imbalance, seed).
    std::string data_id() const;
};

/// Noise-major, then imbalance, mode and seed.
std::vector<Cell> enumerate_cells(const ExperimentSpec& spec);

/// 64-bit FNV-1a of a string.
std::uint64_t fnv1a64(std::string_view text);

/// Seed for noise injection and imbalance subsampling of one training set:
///   split_seed(base_seed, fnv1a64("data|" + data_id))
/// Independent of the mode so every mode trains on the same corrupted set.
std::uint64_t data_seed(const ExperimentSpec& spec, const Cell& cell);
/// Seed for initialization and shuffling:
///   split_seed(base_seed, fnv1a64("train|" + data_id))
std::uint64_t train_seed(const ExperimentSpec& spec, const Cell& cell);

struct BaseData {
    Dataset train;
    Dataset test;
    std::optional<SyntheticMixture> mixture;
};

BaseData load_base_data(const DataSource& source);

/// Noise first, then imbalance, from one rng seeded with `seed`.
Dataset corrupt_train_set(const Dataset& train, double noise, double imbalance, std::uint64_t seed);

TrainConfig cell_config(const ExperimentSpec& spec, const Cell& cell);
Architecture cell_architecture(const ExperimentSpec& spec, const Dataset& train);

const EpochMetrics& selected_epoch(const RunRecord& record, Selector selector);

/// Output layout under spec.out_dir:
///   data/base_train.nlad, data/base_test.nlad, data/train_<data_id>.nlad,
///   data/fingerprints.json, runs/<cell_id>/{manifest.json, metrics.csv,
///   checkpoint.nlack}, summary/*, plotdata/*
struct Layout {
    std::filesystem::path root;
    std::filesystem::path data_dir() const { return root / "data"; }
    std::filesystem::path base_train() const { return data_dir() / "base_train.nlad"; }
    std::filesystem::path base_test() const { return data_dir() / "base_test.nlad"; }
    std::filesystem::path train_cache(const Cell& c) const { return data_dir() / ("train_" + c.data_id() + ".nlad"); }
    std::filesystem::path fingerprints() const { return data_dir() / "fingerprints.json"; }
    std::filesystem::path run_dir(const Cell& c) const { return root / "runs" / c.id(); }
    std::filesystem::path summary_dir() const { return root / "summary"; }
    std::filesystem::path plot_dir() const { return root / "plotdata"; }
};

struct AuditLine {
    std::string data_id;
    std::size_t size = 0;
    std::size_t flipped = 0;
    int max_count = 0;
    int min_count = 0;
    std::string fingerprint;
};

/// Writes base caches and one training cache per (noise, imbalance, seed),
/// then the fingerprint JSON. Existing caches are reused unless `force`.
std::vector<AuditLine> generate_datasets(const ExperimentSpec& spec, bool force);

struct CellOutcome {
    Cell cell;
    enum class Status { Done, Skipped, Failed } status = Status::Failed;
    std::string error;
    bool diverged = false;
};

/// Runs one cell from the caches (generated on demand), writing metrics,
/// checkpoint and finally the manifest. Skips when the manifest exists unless
/// `force`. Training errors are thrown, not caught.
CellOutcome run_cell(const ExperimentSpec& spec, const Cell& cell, bool force);

struct CellSummary {
    double noise = 0.0;
    double imbalance = 1.0;
    LossMode mode = LossMode::NLA;
    std::size_t expected = 0;
    std::vector<std::uint64_t> completed_seeds;
    double overall_mean = 0.0, overall_std = 0.0;
    double mean_acc_mean = 0.0, mean_acc_std = 0.0;
    std::vector<double> per_class_mean;
    bool complete() const { return completed_seeds.size() == expected; }
};

struct ModeDelta {
    double noise = 0.0;
    double imbalance = 1.0;
    LossMode a = LossMode::CE;
    LossMode b = LossMode::NLA;
    std::size_t paired = 0;
    double overall_delta = 0.0; ///< mean over paired seeds of (b - a)
    double mean_acc_delta = 0.0;
};

struct SweepSummary {
    std::vector<CellSummary> cells;
    std::vector<ModeDelta> deltas;
    std::vector<CellOutcome> outcomes;
};

/// Mean and unbiased (n - 1) standard deviation; std is NaN for n < 2.
std::pair<double, double> mean_std(const std::vector<double>& xs);

/// Reads the selected epoch of every completed run under the layout.
SweepSummary summarize(const ExperimentSpec& spec, const std::vector<CellOutcome>& outcomes);

/// Writes summary.csv, summary.json, table_noise.csv and table_imbalance.csv.
void write_summary(const ExperimentSpec& spec, const SweepSummary& summary);

/// Runs every cell with up to `workers` threads, then summarizes. `log`
/// receives one line per finished cell.
SweepSummary run_sweep(const ExperimentSpec& spec, int workers, bool force,
                       const std::function<void(const std::string&)>& log = {});

/// Emits accuracy_curves.csv, weight_quartiles.csv and loss_curves.csv for
/// every run of the spec that has a manifest. Returns the run count; missing
/// runs are appended to `missing`.
std::size_t write_plotdata(const ExperimentSpec& spec, std::vector<std::string>& missing);

/// Parses a metrics CSV written by metrics_csv back into epoch records.
std::vector<EpochMetrics> parse_metrics_csv(const std::string& text);

} // namespace nla

#endif // NLA_EXPERIMENT_HPP
