#pragma once

#include <cstdint>
#include <vector>

#include "irnet/gradcheck.hpp"

namespace irnet {

/// The standard finite-difference matrix: every primitive op at tolerance
/// 1e-4 and the composite blocks (MSFA, DyHead, full model + loss) at 1e-3.
/// Deterministic per seed. Shared by the CLI gradcheck command and the tests.
std::vector<GradCheckReport> gradcheck_suite(std::uint64_t seed);

bool gradcheck_suite_passes(const std::vector<GradCheckReport>& reports);

/// Formats one (op, shape, max-rel-err, pass) row per checked group.
std::string format_gradcheck_table(const std::vector<GradCheckReport>& reports);

} // namespace irnet
