#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fusionnet/layers.hpp"

namespace fusionnet {

enum class LayerKind { conv, depthwise_separable, relu, maxpool };

struct LayerDesc {
    LayerKind kind = LayerKind::relu;
    std::size_t out_channels = 0;  // conv and depthwise_separable only
    std::size_t kernel = 3;
    std::size_t stride = 1;
    Padding padding = Padding::same;
};

/// A feed-forward stack whose tapped layer outputs are globally average
/// pooled and fed to the classifier. The last layer is always tapped.
struct BranchSpec {
    std::string name;
    std::vector<LayerDesc> layers;
    std::vector<std::size_t> taps;
};

/// Hidden block of the fused classifier: dense(hidden) -> relu -> dropout.
struct HeadSpec {
    std::size_t hidden_units = 256;
    double dropout = 0.4;
};

struct InputSize {
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 64;

    Shape shape() const { return {channels, height, width}; }
    friend bool operator==(const InputSize&, const InputSize&) = default;
};

/// Single-branch specs have no head: their pooled taps feed dense(classes)
/// directly. Multi-branch (hybrid) specs carry a HeadSpec.
struct NetworkSpec {
    InputSize input;
    std::vector<BranchSpec> branches;
    std::optional<HeadSpec> head;
    std::size_t classes = 2;
};

struct VggStage {
    std::size_t width = 16;
    std::size_t convs = 2;
};

struct VggPlan {
    std::vector<VggStage> stages;

    static VggPlan toy();          // 16, 32, 64 with two convs each
    static VggPlan full_scale();  // 13 convs, widths 64..512
};

struct MobileBlock {
    std::size_t width = 16;
    std::size_t stride = 1;
};

struct MobilenetPlan {
    std::size_t stem_width = 16;
    std::vector<MobileBlock> blocks;
    /// Block indices whose outputs are tapped; exactly five. Empty selects
    /// five blocks spread evenly over the depth, always including the last.
    std::vector<std::size_t> tap_blocks;

    static MobilenetPlan toy();          // widths 16, 32, 32, 64, 64
    static MobilenetPlan full_scale();  // 13 depthwise-separable blocks
};

inline constexpr std::size_t kMobilenetTaps = 5;

std::vector<std::size_t> default_tap_blocks(std::size_t block_count);

NetworkSpec build_vgg_branch(const VggPlan& plan, InputSize input = {});
NetworkSpec build_mobilenet_branch(const MobilenetPlan& plan, InputSize input = {});
NetworkSpec build_hybrid(const NetworkSpec& vgg, const NetworkSpec& mobile, HeadSpec head = {});
/// Keeps only the final tap of a single-branch spec (an un-fused baseline).
NetworkSpec plain_network(NetworkSpec branch);

struct ShapeReport {
    std::vector<std::vector<Shape>> layer_outputs;  // per branch, per layer
    std::vector<std::size_t> tap_lengths;           // fused order
    std::size_t fused_length = 0;
};

/// Validates the spec and propagates shapes; config error on any violation.
ShapeReport propagate_shapes(const NetworkSpec& spec);
void validate(const NetworkSpec& spec);

std::size_t parameter_count(const NetworkSpec& spec);
std::size_t head_parameter_count(const NetworkSpec& spec);

template <class Real>
struct ForwardPass {
    Mode mode = Mode::eval;
    Tensor<Real> input;
    std::vector<std::vector<Tensor<Real>>> activations;  // per branch, output of each layer
    std::vector<std::vector<LayerContext<Real>>> contexts;
    std::vector<Tensor<Real>> taps;  // [B, C_i], fused order
    Tensor<Real> fused;
    Tensor<Real> hidden;      // dense output (pre-activation)
    Tensor<Real> activated;   // relu(hidden)
    Tensor<Real> dropped;     // dropout(activated)
    LayerContext<Real> hidden_ctx, relu_ctx, dropout_ctx, output_ctx;
    Tensor<Real> logits;      // [B, classes]
};

template <class Real>
class Network {
public:
    /// All parameters zero; see init_params for the seeded He initialization.
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::uint64_t seed() const noexcept { return seed_; }
    void set_seed(std::uint64_t seed) noexcept { seed_ = seed; }

    /// Stable order: branches in spec order, then the head.
    std::vector<Parameter<Real>*> parameters();
    std::vector<const Parameter<Real>*> parameters() const;
    Parameter<Real>& parameter(const std::string& name);
    void zero_grad();

    /// batch is [B,C,H,W] (or [C,H,W]); rng draws dropout masks in train mode.
    ForwardPass<Real> forward(const Tensor<Real>& batch, Mode mode, Rng& rng) const;

    /// Mean softmax cross-entropy over the batch; adds gradients into every
    /// parameter. The pass must come from forward() on this network.
    double backward(ForwardPass<Real>& pass, std::span<const int> labels);

    /// Head only, from a fused [B, F] feature batch.
    Tensor<Real> head_forward(const Tensor<Real>& fused, Mode mode, Rng& rng) const;

private:
    using BranchLayer = std::variant<Conv2dLayer<Real>, DepthwiseSeparableLayer<Real>, ReluLayer<Real>,
                                     MaxPoolLayer<Real>>;
    struct Branch {
        std::vector<BranchLayer> layers;
        std::vector<std::size_t> taps;
    };

    void head_forward_into(ForwardPass<Real>& pass, Rng& rng) const;

    NetworkSpec spec_;
    ShapeReport shapes_;
    std::uint64_t seed_ = 0;
    std::vector<Branch> branches_;
    std::optional<DenseLayer<Real>> hidden_;
    ReluLayer<Real> hidden_relu_;
    DropoutLayer<Real> hidden_dropout_;
    std::optional<DenseLayer<Real>> output_;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases, deterministic in seed.
template <class Real>
Network<Real> init_params(const NetworkSpec& spec, std::uint64_t seed);

}  // namespace fusionnet
