#ifndef NLA_DATA_HPP
#define NLA_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "nla/numkit.hpp"
#include "nla/rng.hpp"

namespace nla {

enum class Split : std::uint32_t { Train = 0, Test = 1 };

struct Dataset {
    MatrixXd inputs; ///< n x d, row-major
    std::vector<int> labels;
    std::optional<std::vector<int>> clean_labels;
    std::vector<int> class_counts;
    int num_classes = 0;
    Split split = Split::Train;

    // Provenance, persisted in the cache header.
    std::uint64_t seed = 0;
    double noise_rate = 0.0;
    double imbalance_factor = 1.0;
    // Non-zero for image corpora; selects the horizontal-mirror view.
    int image_rows = 0;
    int image_cols = 0;

    std::size_t size() const { return labels.size(); }
    int dim() const { return static_cast<int>(inputs.cols()); }

    /// Throws std::invalid_argument if counts, shapes or label ranges disagree.
    void validate() const;
    void recount();
    /// Number of indices where labels differ from clean_labels (0 when absent).
    std::size_t flipped_count() const;
    Dataset subset(const std::vector<std::size_t>& rows) const;
};

/// Signed permutation x'_j = sign_j * x_{perm_j}, restricted to involutions.
class ViewTransform {
public:
    ViewTransform(std::vector<int> perm, std::vector<double> sign);

    /// Negates coordinate 0.
    static ViewTransform mirror_first(int dim);
    /// Mirrors each row of a row-major rows x cols pixel grid.
    static ViewTransform horizontal_flip(int rows, int cols);
    static ViewTransform for_dataset(const Dataset& ds);

    int dim() const { return static_cast<int>(perm_.size()); }
    VectorXd apply(const VectorXd& x) const;
    MatrixXd apply(const MatrixXd& inputs) const;

private:
    std::vector<int> perm_;
    std::vector<double> sign_;
};

MatrixXd apply_view(const MatrixXd& inputs, const ViewTransform& view);

struct SyntheticSpec {
    int num_classes = 7;
    int dim = 8;
    int n_per_class = 500;
    int n_test_per_class = 300;
    double ambiguity = 0.5; ///< isotropic spread of every cluster
    double center_radius = 1.0;
    /// Mirror-symmetric center pairs per class.
    int pairs_per_class = 1;
    /// Added to |c_0| of every center before mirroring; larger values push
    /// each pair apart along the mirrored coordinate.
    double mirror_offset = 0.0;
};

/// Each class is an equal mixture of two isotropic Gaussians whose centers
/// are mirror images under ViewTransform::mirror_first.
struct SyntheticMixture {
    std::vector<VectorXd> centers; ///< class k owns [2 P k, 2 P (k + 1)); each center is followed by its mirror
    double spread = 0.0;
    int num_classes = 0;
    int pairs_per_class = 1;

    int class_of_center(std::size_t c) const { return static_cast<int>(c / (2 * static_cast<std::size_t>(pairs_per_class))); }
    /// Bayes-optimal label under equal class priors.
    int bayes_predict(const VectorXd& x) const;
    double bayes_accuracy(const Dataset& ds) const;
};

struct SyntheticData {
    Dataset train;
    Dataset test;
    SyntheticMixture mixture;
};

SyntheticData make_synthetic(const SyntheticSpec& spec, Rng& rng);

/// Flips exactly round(rate * n) labels, each to a uniformly chosen other
/// category. clean_labels keeps the pre-noise labels.
Dataset inject_noise(const Dataset& ds, double rate, Rng& rng);

/// Per-class target counts round(base * factor^(-k / (K - 1))).
std::vector<int> imbalance_profile(int base, double factor, int num_classes);

/// Long-tail subsample by (observed) label with category 0 largest. `base`
/// is the smallest class count of the input, which equals n_per_class for a
/// balanced split.
Dataset apply_imbalance(const Dataset& ds, double factor, Rng& rng);

/// IDX byte layout: big-endian magic (0x00000803 images / 0x00000801
/// labels), big-endian u32 dims, then unsigned-byte payload.
Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                   Split split = Split::Train);

/// Header row with a `label` column and `f0..f{d-1}` feature columns.
Dataset ingest_csv(const std::filesystem::path& path, Split split = Split::Train, int num_classes = 0);

/// Cache layout (little-endian):
///   "NLADSET1" | u32 version (=1) | u32 split | u64 n | u32 d | u32 K |
///   u64 seed | f64 noise_rate | f64 imbalance_factor | u32 has_clean |
///   u32 image_rows | u32 image_cols | i32 labels[n] | i32 clean[n] (if
///   has_clean) | f64 inputs[n * d] row-major
std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<char>& bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// SHA-256 of the cache encoding.
std::string dataset_fingerprint(const Dataset& ds);

} // namespace nla

#endif // NLA_DATA_HPP
