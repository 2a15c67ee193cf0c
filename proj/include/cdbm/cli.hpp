#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cdbm/model.hpp"

namespace cdbm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitDivergence = 2;

/// One (b0, beta) cell of the 3x3 experiment grid. `offset_logit` is the
/// pre-sigmoid value, so beta = sigm(offset_logit).
struct GridCell {
    double bias;
    double offset_logit;

    double offset() const { return sigm(offset_logit); }
    /// e.g. "b2_s-2" for b0 = 2, beta = sigm(-2).
    std::string name() const;
    /// Matched cell: beta = sigm(b0), the mean activation of a unit at W = 0.
    bool centered() const { return bias == offset_logit; }
};

/// Rows b0 = 2, 0, -2; columns beta = sigm(2), sigm(0), sigm(-2).
std::vector<GridCell> experiment_grid();

/// Accepts a probability ("0.5") or "sigm(x)".
double parse_offset(const std::string& text);

/// Shortest round-tripping text for a double.
std::string format_double(double v);

/// Entry point of the `cdbm` executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace cdbm
