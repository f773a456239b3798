#include "fusionnet/metrics.hpp"

#include <cstdio>

#include "fusionnet/errors.hpp"

namespace fusionnet {

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int positive_label) {
    if (predicted.size() != truth.size()) {
        throw_error(ErrorKind::data, "confusion: " + std::to_string(predicted.size()) + " predictions for " +
                                         std::to_string(truth.size()) + " labels");
    }
    if (predicted.empty()) {
        throw_error(ErrorKind::data, "confusion: no samples");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if ((predicted[i] != 0 && predicted[i] != 1) || (truth[i] != 0 && truth[i] != 1)) {
            throw_error(ErrorKind::data, "confusion: labels must be 0 or 1");
        }
        const bool pred_pos = predicted[i] == positive_label;
        const bool true_pos = truth[i] == positive_label;
        if (pred_pos && true_pos) {
            ++cm.tp;
        } else if (!pred_pos && !true_pos) {
            ++cm.tn;
        } else if (pred_pos) {
            ++cm.fp;
        } else {
            ++cm.fn;
        }
    }
    return cm;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) {
        return std::nullopt;
    }
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> accuracy(const ConfusionMatrix& cm) {
    return ratio(cm.tp + cm.tn, cm.total());
}

std::optional<double> sensitivity(const ConfusionMatrix& cm) {
    return ratio(cm.tp, cm.tp + cm.fn);
}

std::optional<double> specificity(const ConfusionMatrix& cm) {
    return ratio(cm.tn, cm.tn + cm.fp);
}

std::uint64_t percent_hundredths(std::uint64_t numerator, std::uint64_t denominator) {
    if (denominator == 0) {
        throw_error(ErrorKind::numeric, "percentage with zero denominator");
    }
    const unsigned __int128 scaled = static_cast<unsigned __int128>(numerator) * 10000u;
    std::uint64_t q = static_cast<std::uint64_t>(scaled / denominator);
    const unsigned __int128 r = scaled % denominator;
    const unsigned __int128 twice = 2 * r;
    if (twice > denominator || (twice == denominator && (q % 2 == 1))) {
        ++q;
    }
    return q;
}

std::string format_percent(std::uint64_t numerator, std::uint64_t denominator) {
    if (denominator == 0) {
        return {};
    }
    const std::uint64_t h = percent_hundredths(numerator, denominator);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%llu.%02llu", static_cast<unsigned long long>(h / 100),
                  static_cast<unsigned long long>(h % 100));
    return buf;
}

MetricsReport make_report(const ConfusionMatrix& cm, double mean_loss) {
    return {cm, accuracy(cm), sensitivity(cm), specificity(cm), mean_loss, cm.total()};
}

std::string csv_metric_fields(const MetricsReport& r) {
    char loss[64];
    std::snprintf(loss, sizeof loss, "%.6f", r.loss);
    const ConfusionMatrix& cm = r.cm;
    return std::string(loss) + "," + format_percent(cm.tp + cm.tn, cm.total()) + "," +
           format_percent(cm.tp, cm.tp + cm.fn) + "," + format_percent(cm.tn, cm.tn + cm.fp) + "," +
           std::to_string(r.n);
}

std::string csv_row(long epoch, const std::string& split, const MetricsReport& report) {
    return std::to_string(epoch) + "," + split + "," + csv_metric_fields(report);
}

}  // namespace fusionnet
