#pragma once

#include <functional>
#include <string>
#include <vector>

#include "irnet/tensor.hpp"

namespace irnet {

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;                    // central-difference step
    std::int64_t max_entries_per_group = 0; // 0 = check every entry
    std::uint64_t seed = 0;                // entry sampling for large groups
};

struct GradCheckReport {
    struct Group {
        std::string name;
        double max_rel_err = 0.0;
        std::int64_t entries_checked = 0;
        bool pass = false;
        std::string note; // non-finite diagnostics
    };
    std::string op_name;
    std::vector<Group> groups;
    double tolerance = 0.0;
    bool pass = false;

    std::string to_string() const;
};

/// Central finite-difference check of an explicit backward pass.
///
/// `groups` are the tensors the harness perturbs (parameters and/or inputs),
/// all f64. `forward` re-evaluates the op from the current group contents;
/// `backward` returns the analytic gradient of sum(output * cotangent) for
/// each group, in the same order. Error metric per entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport gradcheck(const std::string& op_name,
                          const std::vector<std::pair<std::string, Tensor*>>& groups,
                          const std::function<Tensor()>& forward,
                          const std::function<std::vector<Tensor>(const Tensor&)>& backward,
                          const GradCheckOptions& opts = {});

} // namespace irnet
