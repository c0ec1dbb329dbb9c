#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "irnet/layers.hpp"

namespace irnet {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9; // the paper's "smoothing constant of 0.9"
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment tensors are keyed by parameter name so
/// the state survives checkpoint round trips independent of traversal details.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // applies one update from the gradients accumulated in each param's grad slot
    void step(const std::vector<ParamRef>& params);

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return t_; }

    // checkpoint plumbing
    struct Slot {
        Tensor m, v;
    };
    const std::map<std::string, Slot>& state() const { return state_; }
    void restore(std::uint64_t t, std::map<std::string, Slot> state);

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, Slot> state_;
};

} // namespace irnet
