#include "fusionnet/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw_error(ErrorKind::config, "unknown split '" + std::string(text) + "' (train|val|test)");
}

std::vector<std::size_t> DatasetManifest::indices(Split which) const {
    if (split.size() != samples.size()) {
        throw_error(ErrorKind::config, "dataset split has not been assigned");
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (split[i] == which) {
            out.push_back(i);
        }
    }
    return out;
}

DatasetManifest load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw_error(ErrorKind::data, "dataset root '" + root.string() + "' is not a directory");
    }
    DatasetManifest manifest;
    for (int label = 0; label < 2; ++label) {
        const fs::path dir = root / kClassNames[static_cast<std::size_t>(label)];
        if (!fs::is_directory(dir)) {
            throw_error(ErrorKind::data, "missing class directory '" + dir.string() + "'");
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                files.push_back(entry.path());
            }
        }
        if (files.empty()) {
            throw_error(ErrorKind::data, std::string("class '") + kClassNames[static_cast<std::size_t>(label)] +
                                             "' has no images");
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& file : files) {
            ImageSample sample;
            sample.pixels = read_png(file);
            sample.label = label;
            sample.id = fs::relative(file, root).generic_string();
            manifest.samples.push_back(std::move(sample));
        }
        manifest.counts[static_cast<std::size_t>(label)] = files.size();
    }
    std::stable_sort(manifest.samples.begin(), manifest.samples.end(),
                     [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
    const Shape& first = manifest.samples.front().pixels.shape();
    for (const ImageSample& s : manifest.samples) {
        if (s.pixels.shape() != first) {
            throw_error(ErrorKind::data, "mixed image dimensions: " + s.id + " is " + shape_string(s.pixels.shape()) +
                                             ", expected " + shape_string(first));
        }
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// preprocessing

namespace {

void check_image(const Image& image, const char* op) {
    if (image.rank() != 3) {
        throw_error(ErrorKind::dimension, std::string(op) + " expects [C,H,W], got " + shape_string(image.shape()));
    }
}

}  // namespace

Image center_crop(const Image& image, std::size_t height, std::size_t width) {
    check_image(image, "center_crop");
    const std::size_t channels = image.dim(0);
    const std::size_t src_h = image.dim(1);
    const std::size_t src_w = image.dim(2);
    if (height == 0 || width == 0 || height > src_h || width > src_w) {
        throw_error(ErrorKind::dimension, "crop " + std::to_string(height) + "x" + std::to_string(width) +
                                              " does not fit inside " + shape_string(image.shape()));
    }
    const std::size_t top = (src_h - height) / 2;
    const std::size_t left = (src_w - width) / 2;
    Image out({channels, height, width});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
            const float* src = image.data() + (c * src_h + top + y) * src_w + left;
            std::copy(src, src + width, out.data() + (c * height + y) * width);
        }
    }
    return out;
}

double cubic_weight(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) {
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    }
    if (x < 2.0) {
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    }
    return 0.0;
}

namespace {

struct Taps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
};

std::vector<Taps> resize_taps(std::size_t in, std::size_t out) {
    std::vector<Taps> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const auto last = static_cast<std::ptrdiff_t>(in) - 1;
    for (std::size_t o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        for (int k = 0; k < 4; ++k) {
            const auto i = static_cast<std::ptrdiff_t>(base) + k - 1;
            taps[o].index[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
            taps[o].weight[static_cast<std::size_t>(k)] = cubic_weight(t - static_cast<double>(k - 1));
        }
    }
    return taps;
}

}  // namespace

Image bicubic_resize(const Image& image, std::size_t height, std::size_t width) {
    check_image(image, "bicubic_resize");
    if (height < 2 || width < 2) {
        throw_error(ErrorKind::dimension, "bicubic_resize target must be at least 2x2");
    }
    const std::size_t channels = image.dim(0);
    const std::size_t src_h = image.dim(1);
    const std::size_t src_w = image.dim(2);
    const std::vector<Taps> xs = resize_taps(src_w, width);
    const std::vector<Taps> ys = resize_taps(src_h, height);

    std::vector<double> rows(src_h * width);
    Image out({channels, height, width});
    for (std::size_t c = 0; c < channels; ++c) {
        const float* src = image.data() + c * src_h * src_w;
        for (std::size_t y = 0; y < src_h; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    acc += xs[x].weight[k] * src[y * src_w + xs[x].index[k]];
                }
                rows[y * width + x] = acc;
            }
        }
        float* dst = out.data() + c * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) {
                    acc += ys[y].weight[k] * rows[ys[y].index[k] * width + x];
                }
                dst[y * width + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization

std::string_view to_string(NormalizationMode mode) {
    return mode == NormalizationMode::dataset ? "dataset" : "constant";
}

NormalizationMode parse_normalization(std::string_view text) {
    if (text == "dataset") return NormalizationMode::dataset;
    if (text == "constant" || text == "imagenet") return NormalizationMode::constant;
    throw_error(ErrorKind::config, "unknown normalization '" + std::string(text) + "' (dataset|constant)");
}

NormalizationStats compute_dataset_stats(std::span<const Image* const> images) {
    if (images.empty()) {
        throw_error(ErrorKind::data, "cannot compute statistics of an empty training split");
    }
    // Welford per channel, merged image by image.
    std::array<double, 3> mean{};
    std::array<double, 3> m2{};
    std::array<double, 3> count{};
    for (const Image* image : images) {
        if (image->rank() != 3 || image->dim(0) != 3) {
            throw_error(ErrorKind::dimension, "statistics need [3,H,W] images");
        }
        const std::size_t plane = image->dim(1) * image->dim(2);
        for (std::size_t c = 0; c < 3; ++c) {
            const float* src = image->data() + c * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                count[c] += 1.0;
                const double delta = src[p] - mean[c];
                mean[c] += delta / count[c];
                m2[c] += delta * (src[p] - mean[c]);
            }
        }
    }
    NormalizationStats stats;
    stats.source = NormalizationMode::dataset;
    for (std::size_t c = 0; c < 3; ++c) {
        stats.mean[c] = mean[c];
        stats.std[c] = std::sqrt(m2[c] / count[c]);
        if (!(stats.std[c] > 0.0)) {
            throw_error(ErrorKind::data, "channel " + std::to_string(c) + " has zero variance in the training split");
        }
    }
    return stats;
}

NormalizationStats constant_stats(std::array<double, 3> mean) {
    return {mean, {1.0, 1.0, 1.0}, NormalizationMode::constant};
}

Image normalize(const Image& image, const NormalizationStats& stats) {
    check_image(image, "normalize");
    if (image.dim(0) != 3) {
        throw_error(ErrorKind::dimension, "normalize expects 3 channels");
    }
    const std::size_t plane = image.dim(1) * image.dim(2);
    Image out(image.shape());
    for (std::size_t c = 0; c < 3; ++c) {
        const float* src = image.data() + c * plane;
        float* dst = out.data() + c * plane;
        if (stats.source == NormalizationMode::dataset) {
            for (std::size_t p = 0; p < plane; ++p) {
                dst[p] = static_cast<float>((src[p] - stats.mean[c]) / stats.std[c]);
            }
        } else {
            for (std::size_t p = 0; p < plane; ++p) {
                dst[p] = static_cast<float>(static_cast<double>(src[p]) * 255.0 - stats.mean[c]);
            }
        }
    }
    return out;
}

void write_stats(const fs::path& path, const NormalizationStats& stats) {
    std::ofstream out(path);
    if (!out) {
        throw_error(ErrorKind::io, "cannot write " + path.string());
    }
    out << std::setprecision(17);
    for (double m : stats.mean) {
        out << m << '\n';
    }
    for (double s : stats.std) {
        out << s << '\n';
    }
    if (!out) {
        throw_error(ErrorKind::io, "failed writing " + path.string());
    }
}

NormalizationStats read_stats(const fs::path& path, NormalizationMode source) {
    std::ifstream in(path);
    if (!in) {
        throw_error(ErrorKind::io, "cannot read " + path.string());
    }
    NormalizationStats stats;
    stats.source = source;
    for (double& m : stats.mean) {
        in >> m;
    }
    for (double& s : stats.std) {
        in >> s;
    }
    if (!in) {
        throw_error(ErrorKind::format, path.string() + " must hold three mean and three std lines");
    }
    return stats;
}

// ---------------------------------------------------------------------------
// augmentation

std::string_view to_string(AugmentOp op) {
    switch (op) {
        case AugmentOp::flip_h: return "flip-h";
        case AugmentOp::flip_v: return "flip-v";
        case AugmentOp::brightness: return "brightness";
        case AugmentOp::contrast: return "contrast";
        case AugmentOp::intensity: return "intensity";
    }
    return "?";
}

AugmentOp parse_augment_op(std::string_view text) {
    for (AugmentOp op : {AugmentOp::flip_h, AugmentOp::flip_v, AugmentOp::brightness, AugmentOp::contrast,
                         AugmentOp::intensity}) {
        if (text == to_string(op)) {
            return op;
        }
    }
    throw_error(ErrorKind::config, "unknown augmentation '" + std::string(text) + "'");
}

void AugmentConfig::validate() const {
    if (!(brightness >= 0.0 && brightness <= 1.0)) {
        throw_error(ErrorKind::config, "brightness range must lie in [0, 1]");
    }
    if (!(contrast_min > 0.0 && contrast_min <= contrast_max)) {
        throw_error(ErrorKind::config, "contrast range must be positive and ordered");
    }
    if (!(gamma_min > 0.0 && gamma_min <= gamma_max)) {
        throw_error(ErrorKind::config, "gamma range must be positive and ordered");
    }
    if ((variants[0] > 0 || variants[1] > 0) && ops.empty()) {
        throw_error(ErrorKind::config, "augmentation variants requested with no ops enabled");
    }
}

Image augment(const Image& image, AugmentOp op, double param, const AugmentConfig& ranges) {
    check_image(image, "augment");
    const std::size_t channels = image.dim(0);
    const std::size_t height = image.dim(1);
    const std::size_t width = image.dim(2);
    Image out(image.shape());
    auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    switch (op) {
        case AugmentOp::flip_h:
            for (std::size_t row = 0; row < channels * height; ++row) {
                const float* src = image.data() + row * width;
                std::reverse_copy(src, src + width, out.data() + row * width);
            }
            return out;
        case AugmentOp::flip_v:
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t y = 0; y < height; ++y) {
                    const float* src = image.data() + (c * height + y) * width;
                    std::copy(src, src + width, out.data() + (c * height + (height - 1 - y)) * width);
                }
            }
            return out;
        case AugmentOp::brightness:
            if (!(std::abs(param) <= ranges.brightness)) {
                throw_error(ErrorKind::config, "brightness delta " + std::to_string(param) + " outside range");
            }
            if (param == 0.0) {
                return image;
            }
            for (std::size_t i = 0; i < image.size(); ++i) {
                out[i] = clamp01(image[i] + param);
            }
            return out;
        case AugmentOp::contrast:
            if (!(param >= ranges.contrast_min && param <= ranges.contrast_max)) {
                throw_error(ErrorKind::config, "contrast factor " + std::to_string(param) + " outside range");
            }
            if (param == 1.0) {
                return image;
            }
            for (std::size_t i = 0; i < image.size(); ++i) {
                out[i] = clamp01((image[i] - 0.5) * param + 0.5);
            }
            return out;
        case AugmentOp::intensity:
            if (!(param >= ranges.gamma_min && param <= ranges.gamma_max)) {
                throw_error(ErrorKind::config, "gamma " + std::to_string(param) + " outside range");
            }
            if (param == 1.0) {
                return image;
            }
            for (std::size_t i = 0; i < image.size(); ++i) {
                out[i] = clamp01(std::pow(std::clamp(static_cast<double>(image[i]), 0.0, 1.0), param));
            }
            return out;
    }
    return out;
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<ImageSample> augment_expand(std::span<const ImageSample> train, const AugmentConfig& config) {
    config.validate();
    std::vector<AugmentOp> ops = config.ops;
    std::sort(ops.begin(), ops.end());
    ops.erase(std::unique(ops.begin(), ops.end()), ops.end());

    std::vector<ImageSample> out;
    std::size_t total = 0;
    for (const ImageSample& s : train) {
        total += 1 + config.variants.at(static_cast<std::size_t>(s.label));
    }
    out.reserve(total);
    for (const ImageSample& sample : train) {
        out.push_back(sample);
        const std::size_t k = config.variants[static_cast<std::size_t>(sample.label)];
        for (std::size_t j = 0; j < k; ++j) {
            Rng rng = Rng::derive(config.seed, fnv1a(sample.id), j);
            std::vector<AugmentOp> chosen;
            for (AugmentOp op : ops) {
                if (rng.bernoulli(0.5)) {
                    chosen.push_back(op);
                }
            }
            if (chosen.empty()) {
                chosen.push_back(ops[rng.below(ops.size())]);
            }
            Image pixels = sample.pixels;
            for (AugmentOp op : chosen) {
                double param = 0.0;
                switch (op) {
                    case AugmentOp::brightness:
                        param = rng.uniform(-config.brightness, config.brightness);
                        break;
                    case AugmentOp::contrast:
                        param = rng.uniform(config.contrast_min, config.contrast_max);
                        break;
                    case AugmentOp::intensity:
                        param = rng.uniform(config.gamma_min, config.gamma_max);
                        break;
                    default:
                        break;
                }
                pixels = augment(pixels, op, param, config);
            }
            out.push_back({std::move(pixels), sample.label, sample.id + "#aug" + std::to_string(j + 1)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// splitting and batching

void SplitConfig::validate() const {
    if (!(train > 0.0 && val > 0.0 && test > 0.0)) {
        throw_error(ErrorKind::config, "split fractions must be positive");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw_error(ErrorKind::config, "split fractions must sum to 1");
    }
}

namespace {

template <class It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const std::uint64_t j = rng.below(i);
        std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
    }
}

}  // namespace

std::vector<Split> stratified_split(std::span<const int> labels, const SplitConfig& config) {
    config.validate();
    std::vector<Split> out(labels.size(), Split::train);
    std::vector<std::vector<std::size_t>> groups;
    if (config.stratified) {
        int max_label = 0;
        for (int l : labels) {
            if (l < 0) {
                throw_error(ErrorKind::data, "negative label");
            }
            max_label = std::max(max_label, l);
        }
        groups.resize(static_cast<std::size_t>(max_label) + 1);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            groups[static_cast<std::size_t>(labels[i])].push_back(i);
        }
    } else {
        groups.emplace_back(labels.size());
        std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<std::size_t>& members = groups[g];
        const std::size_t n = members.size();
        if (n == 0 && config.stratified) {
            continue;
        }
        if (n < 3) {
            throw_error(ErrorKind::data, "class " + std::to_string(g) + " has " + std::to_string(n) +
                                             " samples; at least 3 are needed to split");
        }
        Rng rng = Rng::derive(config.seed, 0x5b117, g);
        shuffle(members.begin(), members.end(), rng);
        // The epsilon guards products such as 0.7 * 10 landing just below an integer.
        const auto cut_train = static_cast<std::size_t>(std::floor(config.train * static_cast<double>(n) + 1e-9));
        const auto cut_val =
            static_cast<std::size_t>(std::floor((config.train + config.val) * static_cast<double>(n) + 1e-9));
        for (std::size_t r = 0; r < n; ++r) {
            out[members[r]] = r < cut_train ? Split::train : (r < cut_val ? Split::val : Split::test);
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
    if (batch_size == 0) {
        throw_error(ErrorKind::config, "batch size must be >= 1");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::derive(seed, 0xba7c4, epoch);
    shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t stop = std::min(count, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return out;
}

}  // namespace fusionnet
