#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mosf {

struct GradCheckOptions {
    std::uint64_t seed = 1;
    std::string corrupt_unit;  // test fixture: perturb this unit's analytic gradient
    bool include_model = true;
    double tolerance = 1e-4;  // f64 relative error bound
};

struct GradCheckUnit {
    std::string name;
    double rel_err_f64 = 0.0;
    double rel_err_f32 = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckUnit> units;
    bool all_pass = true;
};

// Runs central finite differences (h=1e-5 at 64-bit, h=1e-2 at 32-bit)
// against the reverse-mode gradients of every differentiable op and the
// composite blocks, in both precisions.
GradCheckReport run_gradcheck(const GradCheckOptions& opt);

void print_gradcheck(const GradCheckReport& report, std::ostream& os);

}  // namespace mosf
