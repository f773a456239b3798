#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace fusionnet {

/// Positive class is ALL (label 1) unless stated otherwise.
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int positive_label = 1);

// Percentages; std::nullopt when the denominator is zero.
std::optional<double> accuracy(const ConfusionMatrix& cm);
std::optional<double> sensitivity(const ConfusionMatrix& cm);
std::optional<double> specificity(const ConfusionMatrix& cm);

/// 100 * numerator / denominator rounded half-to-even to two decimals,
/// computed exactly in integers. Returns hundredths of a percent.
std::uint64_t percent_hundredths(std::uint64_t numerator, std::uint64_t denominator);
/// "70.00", "66.67"; empty string for an undefined metric.
std::string format_percent(std::uint64_t numerator, std::uint64_t denominator);

struct MetricsReport {
    ConfusionMatrix cm;
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    double loss = 0.0;
    std::uint64_t n = 0;
};

MetricsReport make_report(const ConfusionMatrix& cm, double mean_loss);

inline constexpr const char* kCsvHeader = "epoch,split,loss,accuracy,sensitivity,specificity,n";

/// epoch,split,loss,accuracy,sensitivity,specificity,n
std::string csv_row(long epoch, const std::string& split, const MetricsReport& report);
/// loss,accuracy,sensitivity,specificity,n (shared by the grid table)
std::string csv_metric_fields(const MetricsReport& report);

}  // namespace fusionnet
