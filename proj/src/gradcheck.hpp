#pragma once

#include <cstdint>
#include <string>

namespace exacfs {

struct GradCheckResult {
  std::string report;  // one line per check
  bool ok = false;     // all max relative errors below the threshold
};

// Central finite-difference checks (eps 1e-3, threshold 1e-4) over 10 seeded
// inputs per registered operator, plus end-to-end network and total-loss
// checks including the Frobenius-normalized distillation path.
GradCheckResult run_gradcheck_suite(std::uint64_t seed);

}  // namespace exacfs
