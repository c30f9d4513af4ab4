#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "ampse/io.h"

namespace ampse {

// End-to-end acceptance suite behind `ampse verify`. Each check pins its own
// protocol (sizes, sample counts, tolerances); cfg supplies the master seed,
// thread cap, scratch dir, an optional name filter (only_check) and
// tolerance_scale (scale 0 forces failures, exercising the exit-3 path).

struct CheckResult {
  std::string name;
  std::string detail;
  double measured = 0;
  double tolerance = 0;
  bool pass = false;
  double seconds = 0;
};

std::vector<std::string> acceptance_check_names();

std::vector<CheckResult> run_acceptance(const ExperimentConfig& cfg,
                                        std::ostream& log);

}  // namespace ampse
