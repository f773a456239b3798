#include "fusionnet/grid.hpp"

#include <fstream>

#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace {

// Reference results for the same grid, carried in the CSV as comment lines.
constexpr const char* kReferenceRows[] = {
    "# reference optimizer_normalization,hybrid,adam,constant,accuracy=95.14,sensitivity=95.92,specificity=93.44",
    "# reference optimizer_normalization,hybrid,rmsprop,constant,accuracy=93.38,sensitivity=94.17,specificity=91.61",
    "# reference optimizer_normalization,hybrid,sgd,constant,accuracy=93.17,sensitivity=91.3,specificity=98.42",
    "# reference optimizer_normalization,hybrid,adam,dataset,accuracy=96.17,sensitivity=95.17,specificity=98.58",
    "# reference optimizer_normalization,hybrid,rmsprop,dataset,accuracy=92.04,sensitivity=90.58,specificity=96.07",
    "# reference optimizer_normalization,hybrid,sgd,dataset,accuracy=89.76,sensitivity=86.96,specificity=99.53",
    "# reference ablation,mobile,adam,dataset,accuracy=88.00,sensitivity=86.66,specificity=92.24",
    "# reference ablation,vgg,adam,dataset,accuracy=80.77,sensitivity=78.21,specificity=96.32",
    "# reference ablation,hybrid,adam,dataset,accuracy=96.17,sensitivity=95.17,specificity=98.58",
};

std::string run_name(const GridRun& run) {
    return std::string(to_string(run.architecture)) + "_" + std::string(to_string(run.optimizer)) + "_" +
           std::string(to_string(run.normalization));
}

std::string csv_line(const GridRow& row) {
    std::string line = row.run.table + "," + std::string(to_string(row.run.architecture)) + "," +
                       std::string(to_string(row.run.optimizer)) + "," +
                       std::string(to_string(row.run.normalization)) + ",";
    if (row.ok) {
        line += std::string(row.reused ? "reused" : "ok") + "," + csv_metric_fields(row.test);
    } else {
        line += "failed,,,,,";
    }
    return line;
}

GridRow execute(const GridOptions& options, const GridRun& run, std::ofstream& errors) {
    GridRow row;
    row.run = run;
    try {
        RunConfig config = options.base;
        config.architecture = run.architecture;
        config.set("optimizer", to_string(run.optimizer));
        config.normalization = run.normalization;
        TrainOptions train;
        train.data = options.data;
        train.out = options.out / "runs" / run_name(run);
        train.single_thread = options.single_thread;
        const TrainResult result = options.runner ? options.runner(config, train) : cmd_train(config, train);
        if (!result.finished) {
            throw_error(ErrorKind::config, "run stopped before finishing");
        }
        row.ok = true;
        row.val = result.best_val;
        row.test = result.test;
    } catch (const std::exception& e) {
        row.error = e.what();
        errors << run_name(run) << ": " << row.error << '\n' << std::flush;
    }
    if (options.progress != nullptr) {
        *options.progress << csv_line(row) << (row.ok ? "" : "  # " + row.error) << '\n' << std::flush;
    }
    return row;
}

bool better(const GridRow& a, const GridRow& b) {
    const auto acc = [](const MetricsReport& r) { return percent_hundredths(r.cm.tp + r.cm.tn, r.cm.total()); };
    if (acc(a.val) != acc(b.val)) {
        return acc(a.val) > acc(b.val);
    }
    return a.val.loss < b.val.loss;
}

}  // namespace

GridResult cmd_grid(const GridOptions& options) {
    options.base.validate();
    std::error_code ec;
    std::filesystem::create_directories(options.out, ec);
    if (ec) {
        throw_error(ErrorKind::io, "cannot create output directory " + options.out.string() + ": " + ec.message());
    }
    std::ofstream errors(options.out / "errors.txt", std::ios::trunc);

    GridResult result;
    for (NormalizationMode norm : {NormalizationMode::constant, NormalizationMode::dataset}) {
        for (OptimizerKind opt : {OptimizerKind::adam, OptimizerKind::rmsprop, OptimizerKind::sgd}) {
            result.rows.push_back(
                execute(options, {"optimizer_normalization", Architecture::hybrid, opt, norm}, errors));
        }
    }

    const GridRow* best = nullptr;
    for (const GridRow& row : result.rows) {
        if (row.ok && (best == nullptr || better(row, *best))) {
            best = &row;
        }
    }
    const OptimizerKind opt = best != nullptr ? best->run.optimizer : options.base.optimizer.kind;
    const NormalizationMode norm = best != nullptr ? best->run.normalization : options.base.normalization;
    const GridRow hybrid = best != nullptr ? *best : GridRow{};
    for (Architecture arch : {Architecture::vgg, Architecture::mobile}) {
        result.rows.push_back(execute(options, {"ablation", arch, opt, norm}, errors));
    }
    if (best != nullptr) {
        GridRow row = hybrid;
        row.run.table = "ablation";
        row.reused = true;
        result.rows.push_back(row);
        if (options.progress != nullptr) {
            *options.progress << csv_line(row) << '\n' << std::flush;
        }
    } else {
        result.rows.push_back(execute(options, {"ablation", Architecture::hybrid, opt, norm}, errors));
    }

    for (const char* ref : kReferenceRows) {
        result.csv += std::string(ref) + "\n";
    }
    result.csv += std::string(kGridCsvHeader) + "\n";
    for (const GridRow& row : result.rows) {
        result.csv += csv_line(row) + "\n";
    }
    std::ofstream out(options.out / "grid.csv", std::ios::trunc);
    out << result.csv;
    if (!out) {
        throw_error(ErrorKind::io, "cannot write " + (options.out / "grid.csv").string());
    }
    return result;
}

}  // namespace fusionnet
