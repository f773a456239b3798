#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "fusionnet/trainer.hpp"

namespace fusionnet {

struct GridRun {
    std::string table;  // "optimizer_normalization" or "ablation"
    Architecture architecture = Architecture::hybrid;
    OptimizerKind optimizer = OptimizerKind::adam;
    NormalizationMode normalization = NormalizationMode::dataset;
};

struct GridRow {
    GridRun run;
    bool ok = false;
    bool reused = false;  // ablation row taken from the matching grid run
    std::string error;
    MetricsReport val;
    MetricsReport test;
};

using GridRunner = std::function<TrainResult(const RunConfig&, const TrainOptions&)>;

struct GridOptions {
    std::filesystem::path data;
    std::filesystem::path out;
    RunConfig base;  // architecture, optimizer and normalization are overridden per run
    bool single_thread = false;
    GridRunner runner;  // defaults to cmd_train
    std::ostream* progress = nullptr;
};

struct GridResult {
    std::vector<GridRow> rows;  // six grid rows then three ablation rows
    std::string csv;
};

inline constexpr const char* kGridCsvHeader =
    "table,architecture,optimizer,normalization,status,loss,accuracy,sensitivity,specificity,n";

/// Three optimizers x two normalizations on the hybrid, then plain VGG,
/// plain MobileNet and hybrid under the grid run with the best validation
/// accuracy. A failing run is recorded and the grid continues. Writes
/// out/grid.csv and one sub-directory per run.
GridResult cmd_grid(const GridOptions& options);

}  // namespace fusionnet
