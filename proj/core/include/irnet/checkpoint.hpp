#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "irnet/model.hpp"
#include "irnet/optimizer.hpp"

namespace irnet {

/// On-disk snapshot: little-endian, magic string, version, then length-prefixed
/// name/shape/data records. Round trips are bit-exact.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config_text; // serialized ModelConfig
    std::uint64_t step = 0;  // training step counter
    std::vector<std::pair<std::string, Tensor>> params;
    bool has_optimizer = false;
    std::uint64_t adam_step = 0;
    std::vector<std::pair<std::string, Tensor>> adam_m;
    std::vector<std::pair<std::string, Tensor>> adam_v;
};

// IoError on unwritable path / short write
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// IoError with byte offset on truncation/corruption; version mismatch rejected
Checkpoint load_checkpoint(const std::string& path);

// snapshot the live model (+ optional optimizer) into a Checkpoint
Checkpoint snapshot(Model& model, const Adam* adam, std::uint64_t step);
// install a loaded checkpoint; rejects name/shape/config mismatches
void restore(Model& model, Adam* adam, const Checkpoint& ckpt);

} // namespace irnet
