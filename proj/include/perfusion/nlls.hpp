// nlls.hpp
//
// Baseline estimator: bound-constrained nonlinear least squares on the
// 2CXM, restarted from uniform random initial conditions. The local search
// is a projected BFGS with central finite-difference gradients; a start
// counts as successful only if it converges below tolerance within the
// iteration budget and no parameter ends on a bound.

#pragma once

#include <cstdint>
#include <vector>

#include "perfusion/curve.hpp"
#include "perfusion/kinetics.hpp"
#include "perfusion/phantom.hpp"

namespace perfusion {

// conservative physiological limits
struct FitBounds {
    Interval f_b{0.001, 6.0};
    Interval v_p{0.001, 0.3};
    Interval v_e{0.001, 0.4};
    Interval ps{0.001, 4.0};

    void validate() const;
};

inline constexpr Interval kDefaultTau0Bounds{0.0, 0.5};
inline constexpr int kDefaultRestarts = 100;
inline constexpr double kFitTolerance = 1e-8;
inline constexpr int kMaxFitIterations = 1000;

enum class FitStatus { Ok, Failed };

struct FitResult {
    KineticParams params;
    double cost = 0.0;
    FitStatus status = FitStatus::Failed;
    int n_successful_starts = 0;
    std::uint64_t seed = 0;
};

// mean squared misfit (1/N) sum_j (C_model(t_j) - y(t_j))^2
double chi_squared(const KineticParams& params, const SampledCurve& curve,
                   const SampledCurve& aif, double hct);

struct LocalFit {
    KineticParams params;
    double cost = 0.0;
    bool converged = false;
};

// single projected-BFGS descent from an explicit start; building block of
// the multistart fit, also used to polish sampler initial states
LocalFit fit_local(const SampledCurve& curve, const SampledCurve& aif, const FitBounds& bounds,
                   Interval tau0_bounds, double hct, const KineticParams& start);

FitResult fit_voxel_nlls(const SampledCurve& curve, const SampledCurve& aif,
                         const FitBounds& bounds, int n_starts, Interval tau0_bounds,
                         double hct, std::uint64_t seed);

struct MapFitStats {
    int n_voxels = 0;
    int n_failed = 0;
    double fraction_failed = 0.0;
    double fraction_fb_over_5 = 0.0;  // outlier fraction over all masked voxels
};

struct NllsMapResult {
    std::vector<int> voxel_ids;
    std::vector<FitResult> fits;  // parallel to voxel_ids
    MapFitStats stats;
};

// Independent per-voxel fits over the mask; voxel v uses substream
// (seed, v) so serial and parallel execution agree bit for bit.
NllsMapResult fit_map_nlls(const NoisySeries& series, const VoxelMask& mask,
                           const FitBounds& bounds, int n_starts, Interval tau0_bounds,
                           double hct, std::uint64_t seed, int n_threads = 0);

} // namespace perfusion
