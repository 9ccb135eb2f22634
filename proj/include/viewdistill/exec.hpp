#pragma once

namespace viewdistill {

// Serial runs the reference loop; Parallel runs the OpenMP kernel.
// Every kernel that takes a policy must produce byte-identical results
// under both, so Serial stays the testable ground truth.
enum class ExecPolicy { Serial, Parallel };

}  // namespace viewdistill
