#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mosformer/config.hpp"

namespace mosf {

struct AblateRow {
    std::string axis;
    std::string variant;
    std::string seed;  // numeric, or "median"
    double mean_dsc_percent = 0.0;
    double mean_hd95 = 0.0;
};

// Trains and evaluates the variant grid of one axis on the configured
// dataset. Axes: s {0,1,2}; m {0.0..0.9}; scales {/16 .. /2,/4,/8,/16};
// encoder_mode {single, dual_independent, dual_momentum}. Per-seed rows are
// followed by a median row per variant.
std::vector<AblateRow> run_ablation(const RunConfig& base, const std::string& axis,
                                    const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr);

void write_ablation_csv(const std::vector<AblateRow>& rows, std::ostream& os);
std::vector<AblateRow> read_ablation_csv(std::istream& is);

}  // namespace mosf
