#include "nla/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "nla/binio.hpp"

namespace nla {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) { return format_double(v); }

template <typename T>
bool has_duplicates(std::vector<T> v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) != v.end();
}

// Reads known keys out of one JSON object and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object())
            throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end())
            return;
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string kind_name(DataKind k) {
    switch (k) {
    case DataKind::Synthetic:
        return "synthetic";
    case DataKind::Idx:
        return "idx";
    case DataKind::Csv:
        return "csv";
    }
    return "synthetic";
}

DataKind parse_kind(const std::string& s) {
    if (s == "synthetic")
        return DataKind::Synthetic;
    if (s == "idx")
        return DataKind::Idx;
    if (s == "csv")
        return DataKind::Csv;
    throw ConfigError("data.source: expected synthetic, idx or csv, got '" + s + "'");
}

std::string selector_name(Selector s) { return s == Selector::Final ? "final" : "best_mean"; }

Selector parse_selector(const std::string& s) {
    if (s == "final")
        return Selector::Final;
    if (s == "best_mean")
        return Selector::BestMean;
    throw ConfigError("sweep.selector: expected final or best_mean, got '" + s + "'");
}

json vec2_json(const Vec2d& v) { return json::array({v[0], v[1]}); }

Vec2d vec2_from(const std::vector<double>& v, const char* where) {
    if (v.size() != 2)
        throw ConfigError(std::string(where) + ": expected two numbers");
    return Vec2d(v[0], v[1]);
}

json data_json(const DataSource& d) {
    json j;
    j["source"] = kind_name(d.kind);
    switch (d.kind) {
    case DataKind::Synthetic:
        j["generator_seed"] = d.generator_seed;
        j["num_classes"] = d.synthetic.num_classes;
        j["dim"] = d.synthetic.dim;
        j["n_per_class"] = d.synthetic.n_per_class;
        j["n_test_per_class"] = d.synthetic.n_test_per_class;
        j["ambiguity"] = d.synthetic.ambiguity;
        j["center_radius"] = d.synthetic.center_radius;
        j["pairs_per_class"] = d.synthetic.pairs_per_class;
        j["mirror_offset"] = d.synthetic.mirror_offset;
        break;
    case DataKind::Idx:
        j["train_images"] = d.train_images.string();
        j["train_labels"] = d.train_labels.string();
        j["test_images"] = d.test_images.string();
        j["test_labels"] = d.test_labels.string();
        break;
    case DataKind::Csv:
        j["train_csv"] = d.train_csv.string();
        j["test_csv"] = d.test_csv.string();
        j["num_classes"] = d.num_classes;
        break;
    }
    return j;
}

json train_json(const TrainConfig& t) {
    return json{{"lambda", t.lambda},         {"batch_size", t.batch_size}, {"epochs", t.epochs},
                {"lr0", t.lr0},               {"lr_gamma", t.lr_gamma},     {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},           {"beta2", t.beta2},           {"epsilon", t.epsilon}};
}

json policy_json(const WeightPolicyd& p) {
    return json{{"mu_true", vec2_json(p.mu_true)},
                {"mu_false", vec2_json(p.mu_false)},
                {"sigma_diag", p.sigma_diag},
                {"axis_ratio_true", p.axis_ratio_true},
                {"axis_ratio_false", p.axis_ratio_false}};
}

std::vector<std::string> mode_names(const std::vector<LossMode>& modes) {
    std::vector<std::string> out;
    for (auto m : modes)
        out.emplace_back(to_string(m));
    return out;
}

json fingerprint_entry(const Dataset& ds) {
    return json{{"sha256", dataset_fingerprint(ds)}, {"n", ds.size()}, {"class_counts", ds.class_counts}};
}

void ensure_base_caches(const ExperimentSpec& spec, const Layout& layout, bool force, BaseData* keep = nullptr) {
    if (!force && fs::exists(layout.base_train()) && fs::exists(layout.base_test())) {
        if (keep) {
            keep->train = load_dataset(layout.base_train());
            keep->test = load_dataset(layout.base_test());
        }
        return;
    }
    BaseData base = load_base_data(spec.data);
    fs::create_directories(layout.data_dir());
    save_dataset(base.train, layout.base_train());
    save_dataset(base.test, layout.base_test());
    if (keep)
        *keep = std::move(base);
}

Dataset ensure_train_cache(const ExperimentSpec& spec, const Layout& layout, const Cell& cell, const Dataset& base,
                           bool force) {
    const auto path = layout.train_cache(cell);
    if (!force && fs::exists(path))
        return load_dataset(path);
    Dataset ds = corrupt_train_set(base, cell.noise, cell.imbalance, data_seed(spec, cell));
    save_dataset(ds, path);
    return ds;
}

json manifest_json(const ExperimentSpec& spec, const Cell& cell, const Dataset& base_train, const Dataset& base_test,
                   const Dataset& train) {
    json j;
    j["code_version"] = kCodeVersion;
    j["mode"] = std::string(to_string(cell.mode));
    j["noise"] = cell.noise;
    j["imbalance"] = cell.imbalance;
    j["seed"] = cell.seed;
    j["seeds"] = json{{"base_seed", spec.base_seed},
                      {"data_seed", data_seed(spec, cell)},
                      {"train_seed", train_seed(spec, cell)}};
    j["config"] = json{{"data", data_json(spec.data)},
                       {"model", json{{"hidden_dim", spec.hidden_dim}}},
                       {"train", train_json(spec.train)},
                       {"policy", policy_json(spec.train.policy)},
                       {"selector", selector_name(spec.selector)}};
    j["fingerprints"] = json{{"base_train", dataset_fingerprint(base_train)},
                             {"base_test", dataset_fingerprint(base_test)},
                             {"train", dataset_fingerprint(train)}};
    return j;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fmt_optional(double v) { return std::isfinite(v) ? num(v) : std::string(); }

} // namespace

// Spec -----------------------------------------------------------------------

void ExperimentSpec::validate() const {
    if (noise_rates.empty() || imbalance_factors.empty() || modes.empty() || seeds.empty())
        throw ConfigError("sweep lists must be non-empty");
    for (double r : noise_rates)
        if (!(r >= 0.0 && r < 1.0))
            throw ConfigError("noise rates must lie in [0, 1)");
    for (double f : imbalance_factors)
        if (!(f >= 1.0) || !std::isfinite(f))
            throw ConfigError("imbalance factors must be >= 1");
    if (has_duplicates(noise_rates) || has_duplicates(imbalance_factors) || has_duplicates(seeds) ||
        has_duplicates(mode_names(modes)))
        throw ConfigError("sweep lists must not repeat values");
    if (hidden_dim < 0)
        throw ConfigError("model.hidden_dim must be >= 0");
    if (data.kind == DataKind::Synthetic) {
        const auto& s = data.synthetic;
        if (s.num_classes < 2 || s.dim < 1 || s.n_per_class < 1 || s.n_test_per_class < 1 || !(s.ambiguity >= 0.0) ||
            s.pairs_per_class < 1)
            throw ConfigError("data: invalid synthetic generator parameters");
    }
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentSpec standard_instance() {
    ExperimentSpec s;
    s.data.synthetic.ambiguity = 0.3;
    s.train.lr0 = 1e-2;
    return s;
}

ExperimentSpec spec_from_json(const json& doc, ExperimentSpec s) {
    ObjectReader top(doc, "config");
    std::string out = s.out_dir.string();
    top.get("out_dir", out);
    s.out_dir = out;

    if (const json* d = top.child("data")) {
        ObjectReader r(*d, "data");
        std::string kind = kind_name(s.data.kind);
        r.get("source", kind);
        s.data.kind = parse_kind(kind);
        r.get("generator_seed", s.data.generator_seed);
        auto& syn = s.data.synthetic;
        r.get("dim", syn.dim);
        r.get("n_per_class", syn.n_per_class);
        r.get("n_test_per_class", syn.n_test_per_class);
        r.get("ambiguity", syn.ambiguity);
        r.get("center_radius", syn.center_radius);
        r.get("pairs_per_class", syn.pairs_per_class);
        r.get("mirror_offset", syn.mirror_offset);
        int k = s.data.kind == DataKind::Synthetic ? syn.num_classes : s.data.num_classes;
        r.get("num_classes", k);
        if (s.data.kind == DataKind::Synthetic)
            syn.num_classes = k;
        else
            s.data.num_classes = k;
        std::string ti = s.data.train_images.string(), tl = s.data.train_labels.string();
        std::string vi = s.data.test_images.string(), vl = s.data.test_labels.string();
        std::string tc = s.data.train_csv.string(), vc = s.data.test_csv.string();
        r.get("train_images", ti);
        r.get("train_labels", tl);
        r.get("test_images", vi);
        r.get("test_labels", vl);
        r.get("train_csv", tc);
        r.get("test_csv", vc);
        s.data.train_images = ti;
        s.data.train_labels = tl;
        s.data.test_images = vi;
        s.data.test_labels = vl;
        s.data.train_csv = tc;
        s.data.test_csv = vc;
        r.finish();
    }
    if (const json* w = top.child("sweep")) {
        ObjectReader r(*w, "sweep");
        r.get("noise", s.noise_rates);
        r.get("imbalance", s.imbalance_factors);
        std::vector<std::string> modes = mode_names(s.modes);
        r.get("modes", modes);
        s.modes.clear();
        for (const auto& m : modes) {
            try {
                s.modes.push_back(parse_loss_mode(m));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("sweep.modes: ") + e.what());
            }
        }
        r.get("seeds", s.seeds);
        r.get("base_seed", s.base_seed);
        std::string sel = selector_name(s.selector);
        r.get("selector", sel);
        s.selector = parse_selector(sel);
        r.finish();
    }
    if (const json* m = top.child("model")) {
        ObjectReader r(*m, "model");
        r.get("hidden_dim", s.hidden_dim);
        r.finish();
    }
    if (const json* t = top.child("train")) {
        ObjectReader r(*t, "train");
        r.get("lambda", s.train.lambda);
        r.get("batch_size", s.train.batch_size);
        r.get("epochs", s.train.epochs);
        r.get("lr0", s.train.lr0);
        r.get("lr_gamma", s.train.lr_gamma);
        r.get("weight_decay", s.train.weight_decay);
        r.get("beta1", s.train.beta1);
        r.get("beta2", s.train.beta2);
        r.get("epsilon", s.train.epsilon);
        r.finish();
    }
    if (const json* p = top.child("policy")) {
        ObjectReader r(*p, "policy");
        auto& pol = s.train.policy;
        std::vector<double> mt{pol.mu_true[0], pol.mu_true[1]};
        std::vector<double> mf{pol.mu_false[0], pol.mu_false[1]};
        r.get("mu_true", mt);
        r.get("mu_false", mf);
        pol.mu_true = vec2_from(mt, "policy.mu_true");
        pol.mu_false = vec2_from(mf, "policy.mu_false");
        r.get("sigma_diag", pol.sigma_diag);
        r.get("axis_ratio_true", pol.axis_ratio_true);
        r.get("axis_ratio_false", pol.axis_ratio_false);
        r.finish();
    }
    top.finish();
    return s;
}

ExperimentSpec load_spec(const fs::path& path, ExperimentSpec base) {
    std::string text;
    try {
        text = read_file_text(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return spec_from_json(doc, std::move(base));
}

json spec_to_json(const ExperimentSpec& s) {
    json j;
    j["out_dir"] = s.out_dir.string();
    j["data"] = data_json(s.data);
    j["sweep"] = json{{"noise", s.noise_rates},
                      {"imbalance", s.imbalance_factors},
                      {"modes", mode_names(s.modes)},
                      {"seeds", s.seeds},
                      {"base_seed", s.base_seed},
                      {"selector", selector_name(s.selector)}};
    j["model"] = json{{"hidden_dim", s.hidden_dim}};
    j["train"] = train_json(s.train);
    j["policy"] = policy_json(s.train.policy);
    return j;
}

// Cells and seeds ------------------------------------------------------------

std::string Cell::data_id() const {
    return "n" + num(noise) + "_i" + num(imbalance) + "_s" + std::to_string(seed);
}

std::string Cell::id() const { return std::string(to_string(mode)) + "_" + data_id(); }

std::vector<Cell> enumerate_cells(const ExperimentSpec& spec) {
    std::vector<Cell> cells;
    for (double r : spec.noise_rates)
        for (double f : spec.imbalance_factors)
            for (auto m : spec.modes)
                for (auto s : spec.seeds)
                    cells.push_back(Cell{r, f, m, s});
    return cells;
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t data_seed(const ExperimentSpec& spec, const Cell& cell) {
    return split_seed(spec.base_seed, fnv1a64("data|" + cell.data_id()));
}

std::uint64_t train_seed(const ExperimentSpec& spec, const Cell& cell) {
    return split_seed(spec.base_seed, fnv1a64("train|" + cell.data_id()));
}

// Data -----------------------------------------------------------------------

BaseData load_base_data(const DataSource& source) {
    BaseData out;
    switch (source.kind) {
    case DataKind::Synthetic: {
        Rng rng(source.generator_seed);
        auto syn = make_synthetic(source.synthetic, rng);
        out.train = std::move(syn.train);
        out.test = std::move(syn.test);
        out.mixture = std::move(syn.mixture);
        break;
    }
    case DataKind::Idx:
        out.train = ingest_idx(source.train_images, source.train_labels, Split::Train);
        out.test = ingest_idx(source.test_images, source.test_labels, Split::Test);
        break;
    case DataKind::Csv:
        out.train = ingest_csv(source.train_csv, Split::Train, source.num_classes);
        out.test = ingest_csv(source.test_csv, Split::Test, source.num_classes);
        break;
    }
    if (out.train.dim() != out.test.dim() || out.train.num_classes != out.test.num_classes)
        throw std::invalid_argument("train and test sets disagree on dimension or class count");
    return out;
}

Dataset corrupt_train_set(const Dataset& train, double noise, double imbalance, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds = train;
    if (noise > 0.0)
        ds = inject_noise(ds, noise, rng);
    if (imbalance > 1.0)
        ds = apply_imbalance(ds, imbalance, rng);
    ds.seed = seed;
    return ds;
}

TrainConfig cell_config(const ExperimentSpec& spec, const Cell& cell) {
    TrainConfig c = spec.train;
    c.mode = cell.mode;
    c.seed = train_seed(spec, cell);
    return c;
}

Architecture cell_architecture(const ExperimentSpec& spec, const Dataset& train) {
    return Architecture{train.dim(), spec.hidden_dim, train.num_classes};
}

const EpochMetrics& selected_epoch(const RunRecord& record, Selector selector) {
    return selector == Selector::Final ? record.final_epoch() : record.best_by_mean_accuracy();
}

// Generate and train ---------------------------------------------------------

std::vector<AuditLine> generate_datasets(const ExperimentSpec& spec, bool force) {
    spec.validate();
    const Layout layout{spec.out_dir};
    BaseData base;
    ensure_base_caches(spec, layout, force, &base);

    json fp;
    fp["code_version"] = kCodeVersion;
    fp["generator"] = data_json(spec.data);
    fp["base_seed"] = spec.base_seed;
    fp["base_train"] = fingerprint_entry(base.train);
    fp["base_test"] = fingerprint_entry(base.test);
    if (base.mixture)
        fp["bayes_test_accuracy"] = base.mixture->bayes_accuracy(base.test);
    json sets = json::object();

    std::vector<AuditLine> audit;
    for (double r : spec.noise_rates)
        for (double f : spec.imbalance_factors)
            for (auto s : spec.seeds) {
                const Cell cell{r, f, spec.modes.front(), s};
                const Dataset ds = ensure_train_cache(spec, layout, cell, base.train, force);
                AuditLine line;
                line.data_id = cell.data_id();
                line.size = ds.size();
                line.flipped = ds.flipped_count();
                line.max_count = *std::max_element(ds.class_counts.begin(), ds.class_counts.end());
                line.min_count = *std::min_element(ds.class_counts.begin(), ds.class_counts.end());
                line.fingerprint = dataset_fingerprint(ds);
                sets[line.data_id] = json{{"sha256", line.fingerprint},
                                          {"noise", r},
                                          {"imbalance", f},
                                          {"seed", s},
                                          {"data_seed", data_seed(spec, cell)},
                                          {"n", ds.size()},
                                          {"flipped", line.flipped},
                                          {"class_counts", ds.class_counts}};
                audit.push_back(std::move(line));
            }
    fp["train_sets"] = std::move(sets);
    write_file_atomic(layout.fingerprints(), fp.dump(2) + "\n");
    return audit;
}

CellOutcome run_cell(const ExperimentSpec& spec, const Cell& cell, bool force) {
    const Layout layout{spec.out_dir};
    const fs::path dir = layout.run_dir(cell);
    const fs::path manifest = dir / "manifest.json";
    if (!force && fs::exists(manifest))
        return CellOutcome{cell, CellOutcome::Status::Skipped, {}, false};

    BaseData base;
    ensure_base_caches(spec, layout, false, &base);
    const Dataset train = ensure_train_cache(spec, layout, cell, base.train, false);

    fs::create_directories(dir);
    fs::remove(manifest);
    const RunRecord record =
        run_training(cell_config(spec, cell), train, base.test, cell_architecture(spec, train));
    write_file_atomic(dir / "metrics.csv", metrics_csv(record));
    save_checkpoint(record.final_params, dir / "checkpoint.nlack");
    write_file_atomic(manifest, manifest_json(spec, cell, base.train, base.test, train).dump(2) + "\n");
    return CellOutcome{cell, CellOutcome::Status::Done, {}, false};
}

// Aggregation ----------------------------------------------------------------

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (xs.empty())
        return {nan, nan};
    double sum = 0.0;
    for (double x : xs)
        sum += x;
    const double mean = sum / static_cast<double>(xs.size());
    if (xs.size() < 2)
        return {mean, nan};
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::vector<EpochMetrics> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("metrics csv: empty");
    std::size_t k = 0;
    {
        std::istringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.rfind("acc_", 0) == 0)
                ++k;
    }
    const std::size_t expected = 9 + 4 * k;
    std::vector<EpochMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<double> v;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            v.push_back(std::strtod(cell.c_str(), nullptr));
        if (v.size() != expected)
            throw std::invalid_argument("metrics csv: row has " + std::to_string(v.size()) + " fields, expected " +
                                        std::to_string(expected));
        EpochMetrics m;
        m.epoch = static_cast<int>(v[0]);
        m.lr = v[1];
        m.ce = v[2];
        m.naw_ce = v[3];
        m.reg = v[4];
        m.total = v[5];
        m.weight_mean = v[6];
        m.overall_accuracy = v[7];
        m.mean_accuracy = v[8];
        m.per_class_accuracy.assign(v.begin() + 9, v.begin() + 9 + static_cast<long>(k));
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t o = 9 + k + 3 * c;
            m.weight_quartiles.push_back(Quartiles{v[o], v[o + 1], v[o + 2]});
        }
        rows.push_back(std::move(m));
    }
    if (rows.empty())
        throw std::invalid_argument("metrics csv: no rows");
    return rows;
}

namespace {

std::optional<EpochMetrics> read_selected(const Layout& layout, const Cell& cell, Selector selector) {
    const fs::path dir = layout.run_dir(cell);
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "metrics.csv"))
        return std::nullopt;
    RunRecord rec;
    rec.epochs = parse_metrics_csv(read_file_text(dir / "metrics.csv"));
    return selected_epoch(rec, selector);
}

} // namespace

SweepSummary summarize(const ExperimentSpec& spec, const std::vector<CellOutcome>& outcomes) {
    const Layout layout{spec.out_dir};
    SweepSummary out;
    out.outcomes = outcomes;
    std::set<std::string> failed;
    for (const auto& o : outcomes)
        if (o.status == CellOutcome::Status::Failed)
            failed.insert(o.cell.id());

    for (double r : spec.noise_rates)
        for (double f : spec.imbalance_factors) {
            std::map<LossMode, std::map<std::uint64_t, EpochMetrics>> by_mode;
            for (auto m : spec.modes) {
                CellSummary cs;
                cs.noise = r;
                cs.imbalance = f;
                cs.mode = m;
                cs.expected = spec.seeds.size();
                std::vector<double> overall, mean;
                std::vector<std::vector<double>> per_class;
                for (auto s : spec.seeds) {
                    const Cell cell{r, f, m, s};
                    if (failed.count(cell.id()))
                        continue;
                    auto sel = read_selected(layout, cell, spec.selector);
                    if (!sel)
                        continue;
                    cs.completed_seeds.push_back(s);
                    overall.push_back(sel->overall_accuracy);
                    mean.push_back(sel->mean_accuracy);
                    per_class.push_back(sel->per_class_accuracy);
                    by_mode[m][s] = *sel;
                }
                std::tie(cs.overall_mean, cs.overall_std) = mean_std(overall);
                std::tie(cs.mean_acc_mean, cs.mean_acc_std) = mean_std(mean);
                if (!per_class.empty()) {
                    cs.per_class_mean.assign(per_class.front().size(), 0.0);
                    for (std::size_t c = 0; c < cs.per_class_mean.size(); ++c) {
                        std::vector<double> col;
                        for (const auto& pc : per_class)
                            col.push_back(pc[c]);
                        cs.per_class_mean[c] = mean_std(col).first;
                    }
                }
                out.cells.push_back(std::move(cs));
            }
            for (std::size_t i = 0; i < spec.modes.size(); ++i)
                for (std::size_t j = i + 1; j < spec.modes.size(); ++j) {
                    ModeDelta d;
                    d.noise = r;
                    d.imbalance = f;
                    d.a = spec.modes[i];
                    d.b = spec.modes[j];
                    std::vector<double> dov, dme;
                    for (auto s : spec.seeds) {
                        auto ia = by_mode[d.a].find(s);
                        auto ib = by_mode[d.b].find(s);
                        if (ia == by_mode[d.a].end() || ib == by_mode[d.b].end())
                            continue;
                        dov.push_back(ib->second.overall_accuracy - ia->second.overall_accuracy);
                        dme.push_back(ib->second.mean_accuracy - ia->second.mean_accuracy);
                    }
                    d.paired = dov.size();
                    d.overall_delta = mean_std(dov).first;
                    d.mean_acc_delta = mean_std(dme).first;
                    out.deltas.push_back(d);
                }
        }
    return out;
}

void write_summary(const ExperimentSpec& spec, const SweepSummary& summary) {
    const Layout layout{spec.out_dir};
    fs::create_directories(layout.summary_dir());
    std::size_t k = 0;
    for (const auto& c : summary.cells)
        k = std::max(k, c.per_class_mean.size());

    std::ostringstream csv;
    csv << "mode,noise,imbalance,expected,completed,complete,overall_mean,overall_std,mean_acc_mean,mean_acc_std";
    for (std::size_t c = 0; c < k; ++c)
        csv << ",class_mean_" << c;
    csv << '\n';
    json cells = json::array();
    for (const auto& c : summary.cells) {
        csv << to_string(c.mode) << ',' << num(c.noise) << ',' << num(c.imbalance) << ',' << c.expected << ','
            << c.completed_seeds.size() << ',' << (c.complete() ? 1 : 0) << ',' << fmt_optional(c.overall_mean)
            << ',' << fmt_optional(c.overall_std) << ',' << fmt_optional(c.mean_acc_mean) << ','
            << fmt_optional(c.mean_acc_std);
        for (std::size_t i = 0; i < k; ++i)
            csv << ',' << (i < c.per_class_mean.size() ? num(c.per_class_mean[i]) : std::string());
        csv << '\n';
        json pcm = json::array();
        for (double v : c.per_class_mean)
            pcm.push_back(v);
        cells.push_back(json{{"mode", std::string(to_string(c.mode))},
                             {"noise", c.noise},
                             {"imbalance", c.imbalance},
                             {"expected", c.expected},
                             {"completed_seeds", c.completed_seeds},
                             {"complete", c.complete()},
                             {"overall_mean", nullable(c.overall_mean)},
                             {"overall_std", nullable(c.overall_std)},
                             {"mean_acc_mean", nullable(c.mean_acc_mean)},
                             {"mean_acc_std", nullable(c.mean_acc_std)},
                             {"per_class_mean", pcm}});
    }
    json deltas = json::array();
    for (const auto& d : summary.deltas)
        deltas.push_back(json{{"noise", d.noise},
                              {"imbalance", d.imbalance},
                              {"a", std::string(to_string(d.a))},
                              {"b", std::string(to_string(d.b))},
                              {"paired", d.paired},
                              {"overall_delta", nullable(d.overall_delta)},
                              {"mean_acc_delta", nullable(d.mean_acc_delta)}});
    json failures = json::array();
    for (const auto& o : summary.outcomes)
        if (o.status == CellOutcome::Status::Failed)
            failures.push_back(json{{"cell", o.cell.id()}, {"error", o.error}, {"diverged", o.diverged}});

    json doc{{"code_version", kCodeVersion},
             {"selector", selector_name(spec.selector)},
             {"std", "unbiased (n - 1); null when fewer than two seeds completed"},
             {"cells", cells},
             {"deltas", deltas},
             {"failures", failures}};

    auto find = [&](LossMode m, double r, double f) -> const CellSummary* {
        for (const auto& c : summary.cells)
            if (c.mode == m && c.noise == r && c.imbalance == f)
                return &c;
        return nullptr;
    };

    std::ostringstream tn;
    tn << "mode,imbalance";
    for (double r : spec.noise_rates)
        tn << ",n" << num(r) << "_overall_mean,n" << num(r) << "_overall_std";
    tn << '\n';
    for (auto m : spec.modes)
        for (double f : spec.imbalance_factors) {
            tn << to_string(m) << ',' << num(f);
            for (double r : spec.noise_rates) {
                const auto* c = find(m, r, f);
                tn << ',' << fmt_optional(c->overall_mean) << ',' << fmt_optional(c->overall_std);
            }
            tn << '\n';
        }

    std::ostringstream ti;
    ti << "mode,noise";
    for (double f : spec.imbalance_factors) {
        const std::string p = ",i" + num(f);
        ti << p << "_overall_mean" << p << "_overall_std" << p << "_mean_acc_mean" << p << "_mean_acc_std";
    }
    ti << '\n';
    for (auto m : spec.modes)
        for (double r : spec.noise_rates) {
            ti << to_string(m) << ',' << num(r);
            for (double f : spec.imbalance_factors) {
                const auto* c = find(m, r, f);
                ti << ',' << fmt_optional(c->overall_mean) << ',' << fmt_optional(c->overall_std) << ','
                   << fmt_optional(c->mean_acc_mean) << ',' << fmt_optional(c->mean_acc_std);
            }
            ti << '\n';
        }

    write_file_atomic(layout.summary_dir() / "summary.csv", csv.str());
    write_file_atomic(layout.summary_dir() / "summary.json", doc.dump(2) + "\n");
    write_file_atomic(layout.summary_dir() / "table_noise.csv", tn.str());
    write_file_atomic(layout.summary_dir() / "table_imbalance.csv", ti.str());
}

SweepSummary run_sweep(const ExperimentSpec& spec, int workers, bool force,
                       const std::function<void(const std::string&)>& log) {
    spec.validate();
    generate_datasets(spec, force);
    const auto cells = enumerate_cells(spec);
    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            CellOutcome o{cells[i], CellOutcome::Status::Failed, {}, false};
            try {
                o = run_cell(spec, cells[i], force);
            } catch (const DivergenceError& e) {
                o.error = e.what();
                o.diverged = true;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
            outcomes[i] = o;
            if (log) {
                const char* status = o.status == CellOutcome::Status::Done      ? "done"
                                     : o.status == CellOutcome::Status::Skipped ? "skipped"
                                                                                : "FAILED";
                std::lock_guard<std::mutex> lock(log_mutex);
                log(cells[i].id() + ": " + status + (o.error.empty() ? "" : " (" + o.error + ")"));
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    SweepSummary summary = summarize(spec, outcomes);
    write_summary(spec, summary);
    return summary;
}

// Plot data ------------------------------------------------------------------

std::size_t write_plotdata(const ExperimentSpec& spec, std::vector<std::string>& missing) {
    const Layout layout{spec.out_dir};
    std::ostringstream acc, wq, loss;
    const char* key = "run,mode,noise,imbalance,seed,";
    acc << key << "epoch,class,accuracy\n";
    wq << key << "epoch,class,q1,median,q3\n";
    loss << key << "epoch,component,value\n";
    std::size_t runs = 0;
    for (const auto& cell : enumerate_cells(spec)) {
        const fs::path dir = layout.run_dir(cell);
        if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "metrics.csv")) {
            missing.push_back(cell.id());
            continue;
        }
        const auto rows = parse_metrics_csv(read_file_text(dir / "metrics.csv"));
        const std::string prefix = cell.id() + "," + std::string(to_string(cell.mode)) + "," + num(cell.noise) + "," +
                                   num(cell.imbalance) + "," + std::to_string(cell.seed) + ",";
        for (const auto& m : rows) {
            for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c)
                acc << prefix << m.epoch << ',' << c << ',' << num(m.per_class_accuracy[c]) << '\n';
            for (std::size_t c = 0; c < m.weight_quartiles.size(); ++c) {
                const auto& q = m.weight_quartiles[c];
                wq << prefix << m.epoch << ',' << c << ',' << num(q.q1) << ',' << num(q.median) << ','
                   << num(q.q3) << '\n';
            }
            const std::pair<const char*, double> parts[] = {{"ce", m.ce},
                                                            {"naw_ce", m.naw_ce},
                                                            {"reg", m.reg},
                                                            {"total", m.total},
                                                            {"weight_mean", m.weight_mean}};
            for (const auto& [name, v] : parts)
                loss << prefix << m.epoch << ',' << name << ',' << num(v) << '\n';
        }
        ++runs;
    }
    fs::create_directories(layout.plot_dir());
    write_file_atomic(layout.plot_dir() / "accuracy_curves.csv", acc.str());
    write_file_atomic(layout.plot_dir() / "weight_quartiles.csv", wq.str());
    write_file_atomic(layout.plot_dir() / "loss_curves.csv", loss.str());
    return runs;
}

} // namespace nla
