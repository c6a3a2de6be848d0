// analysis.hpp
//
// Quantitative evaluation: normalized mean square error between parameter
// maps, Mann-Whitney U rank tests (exact enumeration for small samples,
// tie-corrected normal approximation otherwise), Monte-Carlo method
// comparisons over repeated noise realisations, outlier statistics and
// min-projected cost-surface grids.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perfusion/bayes.hpp"
#include "perfusion/curve.hpp"
#include "perfusion/nlls.hpp"
#include "perfusion/phantom.hpp"

namespace perfusion {

// sum (est - truth)^2 / sum truth^2 over paired entries
double nmse(const std::vector<double>& estimated, const std::vector<double>& truth);

struct MannWhitneyResult {
    double u = 0.0;        // min(U_a, U_b), midrank ties
    double p = 1.0;        // two-sided
    bool exact = false;    // exact enumeration used
    bool degenerate = false;  // all pooled values tied
};

enum class MannWhitneyMethod {
    Auto,          // exact when n_a*n_b <= 400 and tie-free, else approximation
    Exact,         // enumeration; rejects tied or oversized samples
    NormalApprox,  // tie-corrected variance with continuity correction
};

MannWhitneyResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                                 MannWhitneyMethod method = MannWhitneyMethod::Auto);

struct OutlierStats {
    double fraction_failed = 0.0;
    double fraction_fb_over_5 = 0.0;
};

OutlierStats outlier_stats(const std::vector<FitStatus>& statuses, const std::vector<double>& f_b);

struct StudyConfig {
    Scenario scenario = Scenario::Ischaemia;
    int n_realizations = 20;
    std::vector<std::string> methods{"nlls", "bayes"};  // nlls | bayes | bayes-nonhier
    double snr = 15.0;
    double hct = 0.0;
    double dt = 0.0;          // 0 = scenario default
    double total_time = 3.0;
    std::uint64_t seed = 1;   // realisation r uses seed + r, r = 1..n
    int n_starts = kDefaultRestarts;
    FitBounds bounds{};
    Interval tau0_bounds = kDefaultTau0Bounds;
    PriorSpec prior{};
    SamplerOptions sampler{};
    int n_threads = 0;
};

// Method-comparison report. Rows: all, f_b, v_p, v_e, ps. Pooling for "all"
// concatenates the per-parameter NMSE samples.
struct NmseReport {
    std::vector<std::string> methods;
    std::vector<std::string> rows;  // "all", "f_b", "v_p", "v_e", "ps"
    int n_realizations = 0;
    // values[m][r] = NMSE samples of method m on row r
    std::vector<std::vector<std::vector<double>>> values;
    std::vector<std::vector<double>> mean;    // [m][r]
    std::vector<std::vector<double>> stddev;  // [m][r]
    struct PairP {
        std::string method_a;
        std::string method_b;
        std::vector<double> p;  // per row
    };
    std::vector<PairP> p_values;

    int row_index(const std::string& name) const;
    int method_index(const std::string& name) const;
};

// Simulates n noise realisations (seeds base+1..base+n), fits each with
// each method, reports per-parameter and pooled NMSE plus Mann-Whitney
// p-values between methods. Failed NLLS voxels are excluded from NMSE and
// reported separately via outlier/failure statistics.
NmseReport monte_carlo_study(const StudyConfig& cfg);

// chi-squared over a (f_b, tau0) grid, min-projected over a 3-D inner
// grid of (v_p, v_e, ps). result[i][j] corresponds to
// (f_b_grid[i], tau0_grid[j]).
std::vector<std::vector<double>> cost_surface(const SampledCurve& curve, const SampledCurve& aif,
                                              double hct, const std::vector<double>& f_b_grid,
                                              const std::vector<double>& tau0_grid,
                                              const std::vector<double>& v_p_grid,
                                              const std::vector<double>& v_e_grid,
                                              const std::vector<double>& ps_grid,
                                              int n_threads = 0);

// inner grids default to 15 evenly spaced points spanning the fit bounds
std::vector<std::vector<double>> cost_surface(const SampledCurve& curve, const SampledCurve& aif,
                                              double hct, const std::vector<double>& f_b_grid,
                                              const std::vector<double>& tau0_grid,
                                              const FitBounds& bounds = FitBounds{},
                                              int inner_points = 15, int n_threads = 0);

std::vector<double> linspace(double lo, double hi, int n);

} // namespace perfusion
