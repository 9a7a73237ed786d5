#include "nla/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "nla/binio.hpp"

namespace nla {

namespace {

constexpr std::string_view kDatasetMagic = "NLADSET1";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

} // namespace

// Dataset -------------------------------------------------------------------

void Dataset::validate() const {
    if (num_classes < 1)
        throw std::invalid_argument("Dataset: num_classes must be positive");
    if (static_cast<std::size_t>(inputs.rows()) != labels.size())
        throw std::invalid_argument("Dataset: inputs and labels differ in length");
    if (clean_labels && clean_labels->size() != labels.size())
        throw std::invalid_argument("Dataset: clean_labels length mismatch");
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("Dataset: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    if (counts != class_counts)
        throw std::invalid_argument("Dataset: class_counts do not match labels");
    if (clean_labels)
        for (int y : *clean_labels)
            if (y < 0 || y >= num_classes)
                throw std::invalid_argument("Dataset: clean label out of range");
    if (!inputs.allFinite())
        throw std::invalid_argument("Dataset: non-finite inputs");
}

void Dataset::recount() {
    class_counts.assign(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels)
        if (y >= 0 && y < num_classes)
            ++class_counts[static_cast<std::size_t>(y)];
}

std::size_t Dataset::flipped_count() const {
    if (!clean_labels)
        return 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        n += labels[i] != (*clean_labels)[i];
    return n;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out = *this;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
    out.labels.resize(rows.size());
    if (clean_labels)
        out.clean_labels->resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = rows[i];
        if (r >= labels.size())
            throw std::out_of_range("Dataset::subset: row out of range");
        out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(r));
        out.labels[i] = labels[r];
        if (clean_labels)
            (*out.clean_labels)[i] = (*clean_labels)[r];
    }
    out.recount();
    return out;
}

// ViewTransform ----------------------------------------------------------------

ViewTransform::ViewTransform(std::vector<int> perm, std::vector<double> sign)
    : perm_(std::move(perm)), sign_(std::move(sign)) {
    const auto d = perm_.size();
    if (d == 0 || sign_.size() != d)
        throw std::invalid_argument("ViewTransform: perm and sign must be non-empty and equal length");
    for (std::size_t j = 0; j < d; ++j) {
        const int p = perm_[j];
        if (p < 0 || static_cast<std::size_t>(p) >= d)
            throw std::invalid_argument("ViewTransform: permutation index out of range");
        if (sign_[j] != 1.0 && sign_[j] != -1.0)
            throw std::invalid_argument("ViewTransform: signs must be +1 or -1");
        if (static_cast<std::size_t>(perm_[static_cast<std::size_t>(p)]) != j ||
            sign_[j] != sign_[static_cast<std::size_t>(p)])
            throw std::invalid_argument("ViewTransform: map is not an involution");
    }
}

ViewTransform ViewTransform::mirror_first(int dim) {
    if (dim < 1)
        throw std::invalid_argument("mirror_first: dim must be positive");
    std::vector<int> perm(static_cast<std::size_t>(dim));
    std::vector<double> sign(static_cast<std::size_t>(dim), 1.0);
    for (int j = 0; j < dim; ++j)
        perm[static_cast<std::size_t>(j)] = j;
    sign[0] = -1.0;
    return {std::move(perm), std::move(sign)};
}

ViewTransform ViewTransform::horizontal_flip(int rows, int cols) {
    if (rows < 1 || cols < 1)
        throw std::invalid_argument("horizontal_flip: grid dims must be positive");
    std::vector<int> perm(static_cast<std::size_t>(rows * cols));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            perm[static_cast<std::size_t>(r * cols + c)] = r * cols + (cols - 1 - c);
    std::vector<double> sign(perm.size(), 1.0);
    return {std::move(perm), std::move(sign)};
}

ViewTransform ViewTransform::for_dataset(const Dataset& ds) {
    if (ds.image_rows > 0 && ds.image_cols > 0 && ds.image_rows * ds.image_cols == ds.dim())
        return horizontal_flip(ds.image_rows, ds.image_cols);
    return mirror_first(ds.dim());
}

VectorXd ViewTransform::apply(const VectorXd& x) const {
    if (x.size() != dim())
        throw std::invalid_argument("ViewTransform: dim mismatch");
    VectorXd out(x.size());
    for (int j = 0; j < dim(); ++j)
        out[j] = sign_[static_cast<std::size_t>(j)] * x[perm_[static_cast<std::size_t>(j)]];
    return out;
}

MatrixXd ViewTransform::apply(const MatrixXd& inputs) const {
    if (inputs.cols() != dim())
        throw std::invalid_argument("ViewTransform: dim mismatch");
    MatrixXd out(inputs.rows(), inputs.cols());
    for (int j = 0; j < dim(); ++j)
        out.col(j) = sign_[static_cast<std::size_t>(j)] * inputs.col(perm_[static_cast<std::size_t>(j)]);
    return out;
}

MatrixXd apply_view(const MatrixXd& inputs, const ViewTransform& view) { return view.apply(inputs); }

// Synthetic generator --------------------------------------------------------------

int SyntheticMixture::bayes_predict(const VectorXd& x) const {
    std::vector<double> score(static_cast<std::size_t>(num_classes), -std::numeric_limits<double>::infinity());
    if (spread <= 0.0) {
        // Degenerate mixture: nearest center.
        double best = std::numeric_limits<double>::infinity();
        int label = 0;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double dist = (x - centers[c]).squaredNorm();
            if (dist < best) {
                best = dist;
                label = class_of_center(c);
            }
        }
        return label;
    }
    // log sum over the class's two components of exp(-|x - c|^2 / (2 s^2)).
    const double inv = 1.0 / (2.0 * spread * spread);
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double e = -(x - centers[c]).squaredNorm() * inv;
        double& s = score[static_cast<std::size_t>(class_of_center(c))];
        const double hi = std::max(s, e);
        s = std::isinf(s) ? e : hi + std::log1p(std::exp(std::min(s, e) - hi));
    }
    return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
}

double SyntheticMixture::bayes_accuracy(const Dataset& ds) const {
    if (ds.size() == 0)
        throw std::invalid_argument("bayes_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int truth = ds.clean_labels ? (*ds.clean_labels)[i] : ds.labels[i];
        correct += bayes_predict(ds.inputs.row(static_cast<Eigen::Index>(i)).transpose()) == truth;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace {

Dataset sample_split(const SyntheticMixture& mix, int per_class, int dim, Split split, Rng& rng) {
    Dataset ds;
    ds.num_classes = mix.num_classes;
    ds.split = split;
    ds.seed = rng.seed();
    const auto n = static_cast<Eigen::Index>(per_class) * mix.num_classes;
    ds.inputs.resize(n, dim);
    ds.labels.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (int k = 0; k < mix.num_classes; ++k) {
        for (int i = 0; i < per_class; ++i, ++row) {
            const auto per = static_cast<std::size_t>(2 * mix.pairs_per_class);
            const auto& center = mix.centers[per * static_cast<std::size_t>(k) + rng.below(per)];
            for (int j = 0; j < dim; ++j)
                ds.inputs(row, j) = center[j] + mix.spread * rng.normal();
            ds.labels.push_back(k);
        }
    }
    ds.recount();
    return ds;
}

} // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec, Rng& rng) {
    if (spec.num_classes < 2)
        throw std::invalid_argument("make_synthetic: need at least 2 classes");
    if (spec.dim < 2)
        throw std::invalid_argument("make_synthetic: need dim >= 2");
    if (spec.n_per_class < 1 || spec.n_test_per_class < 1)
        throw std::invalid_argument("make_synthetic: per-class counts must be positive");
    if (!(spec.ambiguity >= 0.0) || !(spec.center_radius > 0.0) || !(spec.mirror_offset >= 0.0))
        throw std::invalid_argument("make_synthetic: ambiguity >= 0, radius > 0 and mirror_offset >= 0 required");
    if (spec.pairs_per_class < 1)
        throw std::invalid_argument("make_synthetic: pairs_per_class must be >= 1");

    SyntheticMixture mix;
    mix.num_classes = spec.num_classes;
    mix.spread = spec.ambiguity;
    mix.pairs_per_class = spec.pairs_per_class;
    const auto mirror = ViewTransform::mirror_first(spec.dim);
    for (int k = 0; k < spec.num_classes * spec.pairs_per_class; ++k) {
        VectorXd c(spec.dim);
        for (int j = 0; j < spec.dim; ++j)
            c[j] = rng.normal();
        c *= spec.center_radius / c.norm();
        c[0] = std::abs(c[0]) + spec.mirror_offset;
        mix.centers.push_back(c);
        mix.centers.push_back(mirror.apply(c));
    }

    SyntheticData out;
    out.train = sample_split(mix, spec.n_per_class, spec.dim, Split::Train, rng);
    out.test = sample_split(mix, spec.n_test_per_class, spec.dim, Split::Test, rng);
    out.train.seed = out.test.seed = rng.seed();
    out.mixture = std::move(mix);
    return out;
}

// Corruptions ---------------------------------------------------------------------

Dataset inject_noise(const Dataset& ds, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate <= 0.5))
        throw std::invalid_argument("inject_noise: rate must lie in [0, 0.5]");
    if (ds.split != Split::Train)
        throw std::invalid_argument("inject_noise: only the train split may be corrupted");
    if (ds.num_classes < 2)
        throw std::invalid_argument("inject_noise: need at least 2 classes");
    Dataset out = ds;
    if (!out.clean_labels)
        out.clean_labels = out.labels;
    out.noise_rate = rate;
    const auto n = ds.size();
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
    for (std::size_t i : rng.sample_without_replacement(n, count)) {
        const int y = out.labels[i];
        const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.num_classes - 1)));
        out.labels[i] = r < y ? r : r + 1;
    }
    out.recount();
    return out;
}

std::vector<int> imbalance_profile(int base, double factor, int num_classes) {
    if (num_classes < 2)
        throw std::invalid_argument("imbalance_profile: need at least 2 classes");
    if (!(factor >= 1.0))
        throw std::invalid_argument("imbalance_profile: factor must be >= 1");
    if (factor > static_cast<double>(base))
        throw std::invalid_argument("imbalance_profile: factor exceeds the per-class count");
    std::vector<int> counts(static_cast<std::size_t>(num_classes));
    for (int k = 0; k < num_classes; ++k) {
        const double e = -static_cast<double>(k) / static_cast<double>(num_classes - 1);
        counts[static_cast<std::size_t>(k)] =
            static_cast<int>(std::llround(static_cast<double>(base) * std::pow(factor, e)));
    }
    return counts;
}

Dataset apply_imbalance(const Dataset& ds, double factor, Rng& rng) {
    if (ds.split != Split::Train)
        throw std::invalid_argument("apply_imbalance: only the train split may be subsampled");
    if (ds.class_counts.empty())
        throw std::invalid_argument("apply_imbalance: empty dataset");
    const int base = *std::min_element(ds.class_counts.begin(), ds.class_counts.end());
    const auto targets = imbalance_profile(base, factor, ds.num_classes);

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<std::size_t> keep;
    for (int k = 0; k < ds.num_classes; ++k) {
        const auto& members = by_class[static_cast<std::size_t>(k)];
        auto chosen = rng.sample_without_replacement(members.size(), static_cast<std::size_t>(targets[static_cast<std::size_t>(k)]));
        std::sort(chosen.begin(), chosen.end());
        for (std::size_t c : chosen)
            keep.push_back(members[c]);
    }
    std::sort(keep.begin(), keep.end());
    Dataset out = ds.subset(keep);
    out.imbalance_factor = factor;
    return out;
}

// Ingestion -----------------------------------------------------------------------

Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
    ByteReader img(read_file_bytes(images));
    const std::uint32_t img_magic = img.u32_be();
    if (img_magic != kIdxImages)
        throw FormatError("IDX images: bad magic in " + images.string(), 0);
    const std::uint32_t count = img.u32_be();
    const std::uint32_t rows = img.u32_be();
    const std::uint32_t cols = img.u32_be();
    if (rows == 0 || cols == 0)
        throw FormatError("IDX images: zero image dimension", 8);

    ByteReader lab(read_file_bytes(labels));
    if (lab.u32_be() != kIdxLabels)
        throw FormatError("IDX labels: bad magic in " + labels.string(), 0);
    const std::uint32_t label_count = lab.u32_be();
    if (label_count != count)
        throw FormatError("IDX labels: " + std::to_string(label_count) + " labels for " +
                              std::to_string(count) + " images",
                          4);

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    if (img.remaining() < pixels * count)
        throw FormatError("IDX images: truncated pixel payload", img.offset() + img.remaining());
    if (lab.remaining() < count)
        throw FormatError("IDX labels: truncated label payload", lab.offset() + lab.remaining());

    Dataset ds;
    ds.split = split;
    ds.image_rows = static_cast<int>(rows);
    ds.image_cols = static_cast<int>(cols);
    ds.inputs.resize(count, static_cast<Eigen::Index>(pixels));
    for (std::uint32_t i = 0; i < count; ++i)
        for (std::size_t p = 0; p < pixels; ++p)
            ds.inputs(i, static_cast<Eigen::Index>(p)) = static_cast<double>(img.u8()) / 255.0;
    int max_label = 0;
    ds.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ds.labels[i] = lab.u8();
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max(2, max_label + 1);
    ds.recount();
    return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, Split split, int num_classes) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("CSV: missing header in " + path.string(), 0);
    std::size_t offset = line.size() + 1;
    const auto header = split_csv_line(line);
    int label_col = -1;
    std::vector<int> feature_col;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "label") {
            label_col = static_cast<int>(c);
        } else if (header[c].size() > 1 && header[c][0] == 'f') {
            int j = -1;
            const auto* b = header[c].data() + 1;
            const auto* e = header[c].data() + header[c].size();
            if (auto [p, ec] = std::from_chars(b, e, j); ec != std::errc() || p != e || j < 0)
                throw FormatError("CSV: bad feature column name '" + header[c] + "'", 0);
            if (static_cast<std::size_t>(j) >= feature_col.size())
                feature_col.resize(static_cast<std::size_t>(j) + 1, -1);
            feature_col[static_cast<std::size_t>(j)] = static_cast<int>(c);
        }
    }
    if (label_col < 0)
        throw FormatError("CSV: no 'label' column", 0);
    if (feature_col.empty() || std::find(feature_col.begin(), feature_col.end(), -1) != feature_col.end())
        throw FormatError("CSV: feature columns must be f0..f{d-1} with no gaps", 0);

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        const auto row_offset = offset;
        offset += line.size() + 1;
        if (trim(line).empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw FormatError("CSV: row has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()),
                              row_offset);
        auto parse = [&](const std::string& s, auto& value) {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
            if (ec != std::errc() || p != s.data() + s.size())
                throw FormatError("CSV: cannot parse '" + s + "'", row_offset);
        };
        int y = 0;
        parse(cells[static_cast<std::size_t>(label_col)], y);
        std::vector<double> x(feature_col.size());
        for (std::size_t j = 0; j < feature_col.size(); ++j)
            parse(cells[static_cast<std::size_t>(feature_col[j])], x[j]);
        labels.push_back(y);
        rows.push_back(std::move(x));
    }

    Dataset ds;
    ds.split = split;
    ds.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_col.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    ds.labels = std::move(labels);
    int max_label = 1;
    for (int y : ds.labels) {
        if (y < 0)
            throw FormatError("CSV: negative label", 0);
        max_label = std::max(max_label, y);
    }
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    if (max_label >= ds.num_classes && !ds.labels.empty())
        throw std::invalid_argument("CSV: label exceeds num_classes");
    ds.recount();
    return ds;
}

// Cache --------------------------------------------------------------------------

std::vector<char> encode_dataset(const Dataset& ds) {
    ds.validate();
    ByteWriter w;
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.split));
    w.u64(ds.size());
    w.u32(static_cast<std::uint32_t>(ds.dim()));
    w.u32(static_cast<std::uint32_t>(ds.num_classes));
    w.u64(ds.seed);
    w.f64(ds.noise_rate);
    w.f64(ds.imbalance_factor);
    w.u32(ds.clean_labels ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(ds.image_rows));
    w.u32(static_cast<std::uint32_t>(ds.image_cols));
    for (int y : ds.labels)
        w.i32(y);
    if (ds.clean_labels)
        for (int y : *ds.clean_labels)
            w.i32(y);
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i)
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j)
            w.f64(ds.inputs(i, j));
    return w.buffer();
}

Dataset decode_dataset(const std::vector<char>& bytes) {
    ByteReader r(bytes);
    if (r.bytes(kDatasetMagic.size()) != kDatasetMagic)
        throw FormatError("dataset cache: bad magic", 0);
    const auto version_at = r.offset();
    if (r.u32() != kDatasetVersion)
        throw FormatError("dataset cache: unsupported version", version_at);
    Dataset ds;
    const auto split_at = r.offset();
    const std::uint32_t split = r.u32();
    if (split > 1)
        throw FormatError("dataset cache: bad split tag", split_at);
    ds.split = static_cast<Split>(split);
    const std::uint64_t n = r.u64();
    const std::uint32_t d = r.u32();
    ds.num_classes = static_cast<int>(r.u32());
    ds.seed = r.u64();
    ds.noise_rate = r.f64();
    ds.imbalance_factor = r.f64();
    const bool has_clean = r.u32() != 0;
    ds.image_rows = static_cast<int>(r.u32());
    ds.image_cols = static_cast<int>(r.u32());
    const std::uint64_t payload = n * (has_clean ? 8u : 4u) + n * d * 8u;
    if (r.remaining() != payload)
        throw FormatError("dataset cache: payload size does not match header", r.offset());
    ds.labels.resize(n);
    for (auto& y : ds.labels)
        y = r.i32();
    if (has_clean) {
        ds.clean_labels.emplace(n);
        for (auto& y : *ds.clean_labels)
            y = r.i32();
    }
    ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < ds.inputs.rows(); ++i)
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j)
            ds.inputs(i, j) = r.f64();
    ds.recount();
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

std::string dataset_fingerprint(const Dataset& ds) {
    const auto bytes = encode_dataset(ds);
    return sha256_hex(std::string_view(bytes.data(), bytes.size()));
}

} // namespace nla
