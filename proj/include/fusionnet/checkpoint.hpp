#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusionnet/network.hpp"
#include "fusionnet/optim.hpp"

namespace fusionnet {

inline constexpr char kCheckpointMagic[4] = {'F', 'U', 'S', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
struct NamedTensor {
    std::string name;
    Tensor<Real> value;
};

/// On-disk training state. All integers and tensor payloads are little-endian.
template <class Real>
struct Checkpoint {
    std::string config_text;
    std::uint64_t epoch = 0;  // completed epochs
    std::vector<NamedTensor<Real>> params;
    OptimizerKind optimizer_kind = OptimizerKind::adam;
    OptimizerState<Real> optimizer;
    std::string rng_state;  // dropout stream
    // Trainer bookkeeping so a resumed run continues the same log and best model.
    std::string log_text;
    std::int64_t best_epoch = -1;
    std::uint64_t best_val_hundredths = 0;
    double best_val_loss = 0.0;
    std::vector<NamedTensor<Real>> best_params;
};

template <class Real>
std::vector<NamedTensor<Real>> snapshot(const Network<Real>& net);
/// Copies values by name; config error on a missing name or shape mismatch.
template <class Real>
void restore(Network<Real>& net, const std::vector<NamedTensor<Real>>& params);

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ckpt);

/// Format error on bad magic, version or element width; io error when truncated.
template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

/// Element width (32 or 64) recorded in a checkpoint header.
int checkpoint_element_width(const std::filesystem::path& path);

}  // namespace fusionnet
