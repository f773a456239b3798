#include "fusionnet/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fusionnet/errors.hpp"

namespace fusionnet {

std::string_view to_string(Architecture arch) {
    switch (arch) {
        case Architecture::vgg: return "vgg";
        case Architecture::mobile: return "mobile";
        case Architecture::hybrid: return "hybrid";
    }
    return "?";
}

Architecture parse_architecture(std::string_view text) {
    if (text == "vgg") return Architecture::vgg;
    if (text == "mobile") return Architecture::mobile;
    if (text == "hybrid") return Architecture::hybrid;
    throw_error(ErrorKind::config, "unknown architecture '" + std::string(text) + "' (vgg|mobile|hybrid)");
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    if (trim(s).empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
    throw_error(ErrorKind::config,
                "invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " + expected + ")");
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
        bad_value(key, value, "a non-negative integer");
    }
    return out;
}

double parse_double(std::string_view key, std::string_view value) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
        bad_value(key, value, "a number");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(key, value, "true|false");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

VggPlan parse_vgg_plan(std::string_view key, std::string_view value) {
    VggPlan plan;
    for (std::string_view item : split_list(value, ',')) {
        const auto x = item.find('x');
        if (x == std::string_view::npos) {
            bad_value(key, value, "WIDTHxCONVS,...");
        }
        plan.stages.push_back({parse_uint(key, item.substr(0, x)), parse_uint(key, item.substr(x + 1))});
    }
    return plan;
}

std::vector<MobileBlock> parse_mobile_blocks(std::string_view key, std::string_view value) {
    std::vector<MobileBlock> blocks;
    for (std::string_view item : split_list(value, ',')) {
        const auto slash = item.find('/');
        if (slash == std::string_view::npos) {
            bad_value(key, value, "WIDTH/STRIDE,...");
        }
        blocks.push_back({parse_uint(key, item.substr(0, slash)), parse_uint(key, item.substr(slash + 1))});
    }
    return blocks;
}

std::vector<std::size_t> parse_index_list(std::string_view key, std::string_view value) {
    std::vector<std::size_t> out;
    for (std::string_view item : split_list(value, ',')) {
        out.push_back(parse_uint(key, item));
    }
    return out;
}

template <std::size_t N>
std::array<double, N> parse_doubles(std::string_view key, std::string_view value) {
    const auto items = split_list(value, ',');
    if (items.size() != N) {
        bad_value(key, value, N == 3 ? "three comma-separated numbers" : "a number list");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        out[i] = parse_double(key, items[i]);
    }
    return out;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    key = trim(key);
    value = trim(value);
    if (key == "architecture") {
        architecture = parse_architecture(value);
    } else if (key == "input_size") {
        input_size = parse_uint(key, value);
    } else if (key == "crop") {
        crop = parse_uint(key, value);
    } else if (key == "vgg_plan") {
        vgg = parse_vgg_plan(key, value);
    } else if (key == "mobile_stem") {
        mobile.stem_width = parse_uint(key, value);
    } else if (key == "mobile_blocks") {
        mobile.blocks = parse_mobile_blocks(key, value);
    } else if (key == "mobile_taps") {
        mobile.tap_blocks = parse_index_list(key, value);
    } else if (key == "hidden_units") {
        head.hidden_units = parse_uint(key, value);
    } else if (key == "dropout") {
        head.dropout = parse_double(key, value);
    } else if (key == "optimizer") {
        const OptimizerKind kind = parse_optimizer_kind(value);
        const double lr = optimizer.lr;
        optimizer.kind = kind;
        optimizer.lr = lr_explicit ? lr : OptimizerConfig::defaults(kind).lr;
    } else if (key == "lr") {
        optimizer.lr = parse_double(key, value);
        lr_explicit = true;
    } else if (key == "momentum") {
        optimizer.momentum = parse_double(key, value);
    } else if (key == "beta1") {
        optimizer.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
        optimizer.beta2 = parse_double(key, value);
    } else if (key == "rho") {
        optimizer.rho = parse_double(key, value);
    } else if (key == "epsilon") {
        optimizer.epsilon = parse_double(key, value);
    } else if (key == "normalization") {
        normalization = parse_normalization(value);
    } else if (key == "imagenet_mean") {
        constant_mean = parse_doubles<3>(key, value);
    } else if (key == "augment_ops") {
        augment.ops.clear();
        for (std::string_view op : split_list(value, ',')) {
            augment.ops.push_back(parse_augment_op(op));
        }
    } else if (key == "augment_k_normal") {
        augment.variants[0] = parse_uint(key, value);
    } else if (key == "augment_k_all") {
        augment.variants[1] = parse_uint(key, value);
    } else if (key == "augment_k") {
        augment.variants[0] = augment.variants[1] = parse_uint(key, value);
    } else if (key == "brightness") {
        augment.brightness = parse_double(key, value);
    } else if (key == "contrast") {
        const auto r = parse_doubles<2>(key, value);
        augment.contrast_min = r[0];
        augment.contrast_max = r[1];
    } else if (key == "gamma") {
        const auto r = parse_doubles<2>(key, value);
        augment.gamma_min = r[0];
        augment.gamma_max = r[1];
    } else if (key == "split") {
        const auto f = parse_doubles<3>(key, value);
        split.train = f[0];
        split.val = f[1];
        split.test = f[2];
    } else if (key == "stratified") {
        split.stratified = parse_bool(key, value);
    } else if (key == "epochs") {
        epochs = parse_uint(key, value);
    } else if (key == "batch_size") {
        batch_size = parse_uint(key, value);
    } else if (key == "seed") {
        seed = parse_uint(key, value);
    } else if (key == "element_width") {
        const std::uint64_t w = parse_uint(key, value);
        if (w != 32 && w != 64) {
            bad_value(key, value, "32|64");
        }
        element_width = static_cast<int>(w);
    } else {
        throw_error(ErrorKind::config, "unknown config key '" + std::string(key) + "'");
    }
}

NetworkSpec RunConfig::network_spec() const {
    const InputSize in{3, input_size, input_size};
    switch (architecture) {
        case Architecture::vgg: return plain_network(build_vgg_branch(vgg, in));
        case Architecture::mobile: return plain_network(build_mobilenet_branch(mobile, in));
        case Architecture::hybrid:
            return build_hybrid(build_vgg_branch(vgg, in), build_mobilenet_branch(mobile, in), head);
    }
    throw_error(ErrorKind::config, "unknown architecture");
}

void RunConfig::validate() const {
    if (input_size < 2) {
        throw_error(ErrorKind::config, "input_size must be at least 2");
    }
    if (!(head.dropout >= 0.0 && head.dropout < 1.0)) {
        throw_error(ErrorKind::config, "dropout must lie in [0, 1)");
    }
    if (head.hidden_units == 0) {
        throw_error(ErrorKind::config, "hidden_units must be positive");
    }
    // The mobile plan is validated even for plain VGG runs so a bad file never
    // passes silently.
    const InputSize in{3, input_size, input_size};
    fusionnet::validate(build_vgg_branch(vgg, in));
    fusionnet::validate(build_mobilenet_branch(mobile, in));
    fusionnet::validate(network_spec());
    optimizer.validate();
    augment.validate();
    split.validate();
    if (batch_size == 0) {
        throw_error(ErrorKind::config, "batch_size must be positive");
    }
    if (element_width != 32 && element_width != 64) {
        throw_error(ErrorKind::config, "element_width must be 32 or 64");
    }
    for (double m : constant_mean) {
        if (!std::isfinite(m)) {
            throw_error(ErrorKind::config, "imagenet_mean must be finite");
        }
    }
}

std::uint64_t RunConfig::stream_seed(std::uint64_t purpose) const {
    return splitmix64(seed ^ splitmix64(purpose));
}

RunConfig parse_config(std::string_view text) {
    RunConfig config;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        std::string_view line = text.substr(start, end == std::string_view::npos ? text.npos : end - start);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw_error(ErrorKind::config, "config line " + std::to_string(line_no) + ": expected key = value");
            }
            config.set(line.substr(0, eq), line.substr(eq + 1));
        }
        if (end == std::string_view::npos) {
            break;
        }
        start = end + 1;
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw_error(ErrorKind::config, "cannot read config file " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string to_text(const RunConfig& c) {
    std::ostringstream out;
    auto list = [](const auto& items, auto&& fmt) {
        std::string s;
        for (const auto& item : items) {
            if (!s.empty()) {
                s += ',';
            }
            s += fmt(item);
        }
        return s;
    };
    out << "architecture = " << to_string(c.architecture) << '\n';
    out << "input_size = " << c.input_size << '\n';
    out << "crop = " << c.crop << '\n';
    out << "vgg_plan = "
        << list(c.vgg.stages, [](const VggStage& s) { return std::to_string(s.width) + "x" + std::to_string(s.convs); })
        << '\n';
    out << "mobile_stem = " << c.mobile.stem_width << '\n';
    out << "mobile_blocks = "
        << list(c.mobile.blocks,
                [](const MobileBlock& b) { return std::to_string(b.width) + "/" + std::to_string(b.stride); })
        << '\n';
    out << "mobile_taps = " << list(c.mobile.tap_blocks, [](std::size_t i) { return std::to_string(i); }) << '\n';
    out << "hidden_units = " << c.head.hidden_units << '\n';
    out << "dropout = " << format_double(c.head.dropout) << '\n';
    out << "optimizer = " << to_string(c.optimizer.kind) << '\n';
    out << "lr = " << format_double(c.optimizer.lr) << '\n';
    out << "momentum = " << format_double(c.optimizer.momentum) << '\n';
    out << "beta1 = " << format_double(c.optimizer.beta1) << '\n';
    out << "beta2 = " << format_double(c.optimizer.beta2) << '\n';
    out << "rho = " << format_double(c.optimizer.rho) << '\n';
    out << "epsilon = " << format_double(c.optimizer.epsilon) << '\n';
    out << "normalization = " << to_string(c.normalization) << '\n';
    out << "imagenet_mean = " << list(c.constant_mean, format_double) << '\n';
    out << "augment_ops = " << list(c.augment.ops, [](AugmentOp op) { return std::string(to_string(op)); }) << '\n';
    out << "augment_k_normal = " << c.augment.variants[0] << '\n';
    out << "augment_k_all = " << c.augment.variants[1] << '\n';
    out << "brightness = " << format_double(c.augment.brightness) << '\n';
    out << "contrast = " << format_double(c.augment.contrast_min) << ',' << format_double(c.augment.contrast_max)
        << '\n';
    out << "gamma = " << format_double(c.augment.gamma_min) << ',' << format_double(c.augment.gamma_max) << '\n';
    out << "split = " << format_double(c.split.train) << ',' << format_double(c.split.val) << ','
        << format_double(c.split.test) << '\n';
    out << "stratified = " << (c.split.stratified ? "true" : "false") << '\n';
    out << "epochs = " << c.epochs << '\n';
    out << "batch_size = " << c.batch_size << '\n';
    out << "seed = " << c.seed << '\n';
    out << "element_width = " << c.element_width << '\n';
    return out.str();
}

}  // namespace fusionnet
