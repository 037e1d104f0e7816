#pragma once

#include <string>
#include <vector>

#include "pointdisc/config.hpp"

namespace pointdisc {

struct GradCheckSuiteRow {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::size_t checked = 0;
};

// Central-difference verification (h = 1e-5, 64-bit) of every differentiable
// block, the adaptation MLP, the full consistency network and the end-to-end
// batch loss on a 2-cloud / 4-group micro-batch built from the configured
// architecture. Deterministic for a fixed seed.
std::vector<GradCheckSuiteRow> run_gradcheck_suite(const Config& cfg, std::uint64_t seed);

bool all_pass(const std::vector<GradCheckSuiteRow>& rows);
std::string format_gradcheck_table(const std::vector<GradCheckSuiteRow>& rows);

}  // namespace pointdisc
