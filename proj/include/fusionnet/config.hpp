#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "fusionnet/datapipe.hpp"
#include "fusionnet/network.hpp"
#include "fusionnet/optim.hpp"

namespace fusionnet {

enum class Architecture { vgg, mobile, hybrid };
std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

/// Everything a training run depends on. Text form: flat `key = value`
/// lines, '#' starts a comment.
struct RunConfig {
    Architecture architecture = Architecture::hybrid;
    std::size_t input_size = 64;
    std::size_t crop = 0;  // centre crop before resizing; 0 keeps the full frame
    VggPlan vgg = VggPlan::toy();
    MobilenetPlan mobile = MobilenetPlan::toy();
    HeadSpec head;

    OptimizerConfig optimizer;
    bool lr_explicit = false;  // otherwise lr follows the optimizer default

    NormalizationMode normalization = NormalizationMode::dataset;
    std::array<double, 3> constant_mean = kImagenetMean;

    AugmentConfig augment;
    SplitConfig split;

    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    int element_width = 32;

    /// Applies one key; config error for unknown keys or malformed values.
    void set(std::string_view key, std::string_view value);
    /// Throws a config error describing the first invalid field.
    void validate() const;

    NetworkSpec network_spec() const;
    /// Seeds of the split, augmentation and initialization streams all derive from `seed`.
    std::uint64_t stream_seed(std::uint64_t purpose) const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

}  // namespace fusionnet
