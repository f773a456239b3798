#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fusionnet {

struct GradcheckItem {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;  // finite-difference evaluations compared
    bool passed = false;
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    double threshold = 1e-4;
    double step = 1e-5;
    /// Item whose analytic gradient is deliberately perturbed (fault injection).
    std::string corrupt;
};

struct GradcheckReport {
    std::vector<GradcheckItem> items;
    double threshold = 1e-4;

    bool passed() const;
    /// One line per item: name, max relative error, PASS/FAIL.
    std::string format() const;
};

/// 64-bit finite-difference check of every layer backward and of the
/// end-to-end hybrid on a tiny spec (8x8 input, widths <= 4).
GradcheckReport cmd_gradcheck(const GradcheckOptions& options = {});

}  // namespace fusionnet
