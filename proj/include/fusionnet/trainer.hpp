#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fusionnet/config.hpp"
#include "fusionnet/metrics.hpp"

namespace fusionnet {

/// Dataset after the full preprocessing pipeline, ready for batching.
struct PreparedData {
    NormalizationStats stats;
    std::vector<ImageSample> train;  // originals followed by their augmented copies
    std::vector<ImageSample> val;
    std::vector<ImageSample> test;
    std::array<std::size_t, 3> originals{};  // pre-augmentation split sizes
    std::vector<std::string> stats_ids;      // samples the statistics were computed from
    bool stats_before_augment = false;
};

/// load -> crop/resize -> split -> stats (train, pre-augmentation) ->
/// augment (train) -> normalize. Throws a data error if any val/test sample
/// would reach the statistics or the training set.
PreparedData prepare_data(const RunConfig& config, const std::filesystem::path& root);

struct TrainOptions {
    std::filesystem::path data;
    std::filesystem::path out;
    bool single_thread = false;
    std::optional<std::filesystem::path> resume;
    /// Stop (with last.ckpt written) once this many epochs are complete.
    std::optional<std::size_t> stop_after;
    std::ostream* progress = nullptr;  // receives each CSV row as it is produced
};

struct TrainResult {
    MetricsReport test;
    MetricsReport best_val;
    std::int64_t best_epoch = 0;
    std::size_t epochs_run = 0;  // epochs completed by the end of this call
    bool finished = false;       // false when stopped early by stop_after
    std::string log;             // full CSV including the header
};

/// Writes out/{config.txt, stats.txt, log.csv, last.ckpt, best.ckpt}.
TrainResult cmd_train(const RunConfig& config, const TrainOptions& options);

struct EvalResult {
    MetricsReport report;
    std::string row;  // CSV row, epoch field = checkpoint epoch
};

/// Rebuilds the pipeline from the checkpoint's config and evaluates one
/// split in eval mode. When `expected` is given, its architecture must match.
EvalResult cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data, Split split,
                    const RunConfig* expected = nullptr);

}  // namespace fusionnet
