#pragma once

// Independent scalar reference implementations. Nothing here calls into the
// library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

/// Row-major [m,k] x [k,n] by the textbook triple loop.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                sum += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = sum;
        }
    }
    return c;
}

/// Sliding-window cross-correlation on one image [C,H,W] with zero padding `pad`.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t c, std::size_t h, std::size_t w,
                                  const std::vector<double>& weights, const std::vector<double>& bias,
                                  std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad,
                                  std::size_t& out_h, std::size_t& out_w) {
    out_h = (h + 2 * pad - k) / stride + 1;
    out_w = (w + 2 * pad - k) / stride + 1;
    std::vector<double> y(out_c * out_h * out_w, 0.0);
    for (std::size_t o = 0; o < out_c; ++o) {
        for (std::size_t i = 0; i < out_h; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) {
                double sum = bias[o];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t a = 0; a < k; ++a) {
                        for (std::size_t b = 0; b < k; ++b) {
                            const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                            const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                            if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) {
                                continue;
                            }
                            sum += weights[((o * c + ch) * k + a) * k + b] * x[(ch * h + r) * w + s];
                        }
                    }
                }
                y[(o * out_h + i) * out_w + j] = sum;
            }
        }
    }
    return y;
}

/// Keys cubic convolution kernel with a = -0.5, written from its closed form.
inline double keys(double t) {
    t = std::fabs(t);
    if (t < 1.0) {
        return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    }
    if (t < 2.0) {
        return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    }
    return 0.0;
}

/// Direct 2-D bicubic sample of every output pixel over its 4x4 neighbourhood,
/// pixel-centre mapping, clamped borders. One channel, row-major.
inline std::vector<double> bicubic(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t oh,
                                   std::size_t ow) {
    std::vector<double> out(oh * ow, 0.0);
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    const auto clamp = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, long(n) - 1)); };
    for (std::size_t i = 0; i < oh; ++i) {
        const double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        const long y0 = static_cast<long>(std::floor(fy));
        for (std::size_t j = 0; j < ow; ++j) {
            const double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            const long x0 = static_cast<long>(std::floor(fx));
            double sum = 0.0;
            for (long dy = -1; dy <= 2; ++dy) {
                for (long dx = -1; dx <= 2; ++dx) {
                    const double wgt = keys(fy - double(y0 + dy)) * keys(fx - double(x0 + dx));
                    sum += wgt * src[clamp(y0 + dy, h) * w + clamp(x0 + dx, w)];
                }
            }
            out[i * ow + j] = sum;
        }
    }
    return out;
}

/// One scalar weight driven through a gradient sequence.
inline std::vector<double> sgd_trajectory(double w, const std::vector<double>& grads, double lr, double mu) {
    std::vector<double> out;
    double v = 0.0;
    for (double g : grads) {
        v = mu * v + g;
        w = w - lr * v;
        out.push_back(w);
    }
    return out;
}

inline std::vector<double> adam_trajectory(double w, const std::vector<double>& grads, double lr, double b1,
                                           double b2, double eps) {
    std::vector<double> out;
    double m = 0.0, v = 0.0, p1 = 1.0, p2 = 1.0;
    for (double g : grads) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p1 *= b1;
        p2 *= b2;
        const double mh = m / (1.0 - p1);
        const double vh = v / (1.0 - p2);
        w = w - lr * mh / (std::sqrt(vh) + eps);
        out.push_back(w);
    }
    return out;
}

inline std::vector<double> rmsprop_trajectory(double w, const std::vector<double>& grads, double lr, double rho,
                                              double eps) {
    std::vector<double> out;
    double s = 0.0;
    for (double g : grads) {
        s = rho * s + (1.0 - rho) * g * g;
        w = w - lr * g / (std::sqrt(s) + eps);
        out.push_back(w);
    }
    return out;
}

struct Counts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Label-pair enumeration with ALL = 1 positive.
inline Counts count_pairs(const std::vector<int>& pred, const std::vector<int>& truth) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == 1) {
            (pred[i] == 1 ? c.tp : c.fn) += 1;
        } else {
            (pred[i] == 0 ? c.tn : c.fp) += 1;
        }
    }
    return c;
}

/// Fraction of matching pairs as a percentage.
inline double match_percent(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        same += pred[i] == truth[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(same) / static_cast<double>(pred.size());
}

/// Mean then population standard deviation in two passes.
inline void two_pass(const std::vector<double>& x, double& mean, double& stddev) {
    double sum = 0.0;
    for (double v : x) {
        sum += v;
    }
    mean = sum / static_cast<double>(x.size());
    double sq = 0.0;
    for (double v : x) {
        sq += (v - mean) * (v - mean);
    }
    stddev = std::sqrt(sq / static_cast<double>(x.size()));
}

/// Head parameter count of dense(fused -> hidden) + dense(hidden -> classes).
inline std::size_t head_params(std::size_t fused, std::size_t hidden, std::size_t classes) {
    return fused * hidden + hidden + hidden * classes + classes;
}

}  // namespace oracle
