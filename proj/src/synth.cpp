#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <system_error>

#include "fusionnet/datapipe.hpp"
#include "fusionnet/errors.hpp"

namespace fusionnet {

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double edge0, double edge1, double x) {
    const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

// Both classes draw colour, brightness, size and position from the same
// distributions; they differ in outline regularity and texture frequency.
Image synth_image(int label, std::size_t size, Rng& rng) {
    if (size < 16) {
        throw_error(ErrorKind::config, "synthetic image size must be at least 16");
    }
    if (label != 0 && label != 1) {
        throw_error(ErrorKind::config, "synthetic label must be 0 or 1");
    }
    const double s = static_cast<double>(size);
    const std::array<double, 3> background = {0.85 + rng.uniform(-0.05, 0.05), 0.78 + rng.uniform(-0.05, 0.05),
                                              0.86 + rng.uniform(-0.05, 0.05)};
    const double level = rng.uniform(0.35, 0.6);
    const std::array<double, 3> tint = {level + rng.uniform(0.0, 0.1), level * rng.uniform(0.55, 0.75),
                                        level + rng.uniform(0.1, 0.25)};
    const double cx = s * (0.5 + rng.uniform(-0.08, 0.08));
    const double cy = s * (0.5 + rng.uniform(-0.08, 0.08));
    const double radius = s * rng.uniform(0.22, 0.34);
    const double aspect = rng.uniform(0.75, 1.0);
    const double angle = rng.uniform(0.0, kPi);

    std::array<double, 4> harmonic_amp{};
    std::array<double, 4> harmonic_phase{};
    if (label == 1) {
        for (std::size_t h = 0; h < 4; ++h) {
            harmonic_amp[h] = rng.uniform(0.04, 0.14);
            harmonic_phase[h] = rng.uniform(0.0, 2.0 * kPi);
        }
    }
    const double shade_dir = rng.uniform(0.0, 2.0 * kPi);
    const double shade_amp = rng.uniform(0.03, 0.08);

    Image image({3, size, size});
    const std::size_t plane = size * size;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double u = dx * std::cos(angle) + dy * std::sin(angle);
            const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / aspect;
            const double r = std::hypot(u, v);
            const double theta = std::atan2(v, u);
            double boundary = radius;
            for (std::size_t h = 0; h < 4; ++h) {
                boundary *= 1.0 + harmonic_amp[h] * std::cos(static_cast<double>(h + 2) * theta + harmonic_phase[h]);
            }
            const double inside = 1.0 - smoothstep(boundary - 0.75, boundary + 0.75, r);
            const double shading =
                shade_amp * (dx * std::cos(shade_dir) + dy * std::sin(shade_dir)) / radius;
            // Zero-mean per-pixel texture for blasts, a faint grain for both.
            const double texture = label == 1 ? rng.uniform(-0.16, 0.16) : 0.0;
            const double grain = rng.uniform(-0.02, 0.02);
            for (std::size_t c = 0; c < 3; ++c) {
                const double cell = tint[c] + shading + texture;
                const double value = inside * cell + (1.0 - inside) * background[c] + grain;
                image[c * plane + y * size + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    }
    return image;
}

void synth_generate(const std::filesystem::path& out, std::size_t per_class, std::size_t size,
                    std::uint64_t seed) {
    if (size < 16) {
        throw_error(ErrorKind::config, "synthetic image size must be at least 16");
    }
    for (int label = 0; label < 2; ++label) {
        const char* name = kClassNames[static_cast<std::size_t>(label)];
        const std::filesystem::path dir = out / name;
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) {
            throw_error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
        }
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(label) + 1, i);
            char file[64];
            std::snprintf(file, sizeof file, "%s_%05zu.png", name, i);
            write_png(dir / file, synth_image(label, size, rng));
        }
    }
}

}  // namespace fusionnet
