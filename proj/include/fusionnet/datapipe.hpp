#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fusionnet/image_io.hpp"
#include "fusionnet/rng.hpp"

namespace fusionnet {

/// Label 0 = normal, 1 = ALL (the positive class). Directory names match.
inline constexpr std::array<const char*, 2> kClassNames = {"normal", "all"};

struct ImageSample {
    Image pixels;  // [3,H,W] in [0,1] until normalized
    int label = 0;
    std::string id;  // path relative to the dataset root, e.g. "all/x.png"
};

enum class Split : std::uint8_t { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct DatasetManifest {
    std::vector<ImageSample> samples;   // lexicographic path order
    std::array<std::size_t, 2> counts{};  // per class
    std::vector<Split> split;           // parallel to samples once assigned

    std::vector<std::size_t> indices(Split which) const;
};

/// Reads root/normal/*.png and root/all/*.png.
DatasetManifest load_dataset(const std::filesystem::path& root);

// --- preprocessing --------------------------------------------------------

/// Sub-window at offset (floor((H-h)/2), floor((W-w)/2)), copied bit-exact.
Image center_crop(const Image& image, std::size_t height, std::size_t width);

/// Keys cubic convolution (a = -0.5), clamped edges, pixel-centre mapping
/// (align_corners = false). Targets must be at least 2 in each extent.
Image bicubic_resize(const Image& image, std::size_t height, std::size_t width);

/// Keys kernel weight for a tap at distance x (a = -0.5).
double cubic_weight(double x);

enum class NormalizationMode { dataset, constant };
std::string_view to_string(NormalizationMode mode);
NormalizationMode parse_normalization(std::string_view text);

/// Per-channel statistics. Dataset mode standardizes (x - mean) / std on the
/// [0,1] scale; constant mode subtracts mean from x * 255 and ignores std.
struct NormalizationStats {
    std::array<double, 3> mean{};
    std::array<double, 3> std{1.0, 1.0, 1.0};
    NormalizationMode source = NormalizationMode::dataset;
};

inline constexpr std::array<double, 3> kImagenetMean = {123.68, 116.78, 103.94};

/// Mean and population std over every pixel of every image; data error for an
/// empty set or a zero-variance channel.
NormalizationStats compute_dataset_stats(std::span<const Image* const> images);
NormalizationStats constant_stats(std::array<double, 3> mean = kImagenetMean);

Image normalize(const Image& image, const NormalizationStats& stats);

/// Three mean lines then three std lines, decimal.
void write_stats(const std::filesystem::path& path, const NormalizationStats& stats);
NormalizationStats read_stats(const std::filesystem::path& path, NormalizationMode source);

// --- augmentation ---------------------------------------------------------

enum class AugmentOp { flip_h, flip_v, brightness, contrast, intensity };
std::string_view to_string(AugmentOp op);
AugmentOp parse_augment_op(std::string_view text);

struct AugmentConfig {
    std::vector<AugmentOp> ops = {AugmentOp::flip_h, AugmentOp::flip_v, AugmentOp::brightness,
                                  AugmentOp::contrast, AugmentOp::intensity};
    std::array<std::size_t, 2> variants = {7, 7};  // augmented copies per image, per class
    double brightness = 0.2;                      // delta in [-b, b]
    double contrast_min = 0.8, contrast_max = 1.2;
    double gamma_min = 0.8, gamma_max = 1.2;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Applies one op. Flips ignore `param`; brightness adds a delta, contrast
/// scales around 0.5, intensity raises to a gamma. Results are clamped to
/// [0,1]. Config error when `param` lies outside the configured range.
Image augment(const Image& image, AugmentOp op, double param, const AugmentConfig& ranges = {});

/// Each input followed by its `variants[label]` augmented copies. Every copy
/// applies a random non-empty subset of the enabled ops (in enum order) with
/// parameters drawn from a stream keyed by (seed, sample id, copy index).
std::vector<ImageSample> augment_expand(std::span<const ImageSample> train, const AugmentConfig& config);

// --- splitting and batching -----------------------------------------------

struct SplitConfig {
    double train = 0.70;
    double val = 0.20;
    double test = 0.10;
    std::uint64_t seed = 0;
    bool stratified = true;

    void validate() const;
};

/// Per class: shuffle by seed, then cut at floor(train n) and
/// floor((train + val) n). Data error when a label that occurs has fewer than 3 samples.
std::vector<Split> stratified_split(std::span<const int> labels, const SplitConfig& config);

/// Shuffled index batches keyed by (seed, epoch); the final partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

// --- synthetic data -------------------------------------------------------

/// Renders one synthetic cell image of either class.
Image synth_image(int label, std::size_t size, Rng& rng);

/// Writes out/normal/*.png and out/all/*.png, per_class images each.
void synth_generate(const std::filesystem::path& out, std::size_t per_class, std::size_t size,
                    std::uint64_t seed);

std::uint64_t fnv1a(std::string_view text);

}  // namespace fusionnet
