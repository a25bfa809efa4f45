#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "collabod/gradcheck.hpp"

namespace collabod {

// Names accepted by run_gradcheck: every differentiable tensor operator,
// their composites and each block.
const std::vector<std::string>& gradcheck_targets();

// Seeded random inputs and parameters for `target`, checked at step 1e-3.
GradCheckReport run_gradcheck(std::string_view target, std::uint64_t seed);

}  // namespace collabod
