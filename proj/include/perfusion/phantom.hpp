// phantom.hpp
//
// Synthetic 6x6 perfusion phantoms: ground-truth parameter maps for rest,
// stress and stress-inducible ischaemia, forward-simulated tissue curves
// and Rician noise at a prescribed SNR.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perfusion/curve.hpp"
#include "perfusion/kinetics.hpp"

namespace perfusion {

enum class Scenario { Rest, Stress, Ischaemia };

Scenario scenario_from_string(const std::string& s);  // throws std::invalid_argument
std::string to_string(Scenario s);

// frame spacing matching the simulated heart rates: 0.012 min at stress,
// 0.017 min at rest
double default_dt(Scenario s);

// Module-default gamma-variate bolus: a compact first pass (time to peak
// 0.06 min = 3.6 s after onset) sharp enough that the upslope separates
// flows at the simulated frame rates.
struct AifSpec {
    double peak = 5.0;    // mM
    double onset = 0.1;   // min
    double shape = 12.0;
    double scale = 0.005; // min
};

struct GroundTruthPhantom {
    int width = 6;
    int height = 6;
    Scenario scenario = Scenario::Rest;
    std::vector<KineticParams> voxels;  // row-major, one per lattice site
    std::vector<int> defect;            // voxel ids with reduced flow

    const KineticParams& at(int id) const { return voxels[static_cast<std::size_t>(id)]; }
};

// healthy stress: F_b 3.5, v_p 0.08, v_e 0.16, PS 1.0; rest: F_b 1.0;
// ischaemia: stress map with two disconnected defect regions at F_b 1.0;
// tau0 0.1 min everywhere
GroundTruthPhantom build_phantom(Scenario s);

struct NoisySeries {
    SampledCurve aif;
    std::vector<SampledCurve> voxels;  // indexed by voxel id, shared grid
    double sigma = 0.0;                // Gaussian channel sd, mM
    double baseline = 0.0;             // magnitude-signal offset, mM units
    std::uint64_t seed = 0;
};

// Magnitude noise is applied where the scanner applies it: on the signal,
// which carries the pre-contrast baseline. Expressed in concentration
// units via the enhancement conversion, baseline_snr is that baseline
// level over sigma; the default of 20 puts the magnitude operation in its
// Gaussian regime. baseline_snr = 0 reproduces the rectified form
// sqrt((value + n1)^2 + n2^2) applied to the concentration directly.
inline constexpr double kDefaultBaselineSnr = 20.0;

// Forward-simulates every voxel, then applies magnitude (Rician) noise
// per sample on the offset value: with beta = baseline_snr * sigma,
// value' = sqrt((value + beta + n1)^2 + n2^2) - beta, n1, n2 ~
// N(0, sigma^2) and sigma = max over noise-free tissue values / snr. Each
// voxel draws from an independent substream of (seed, voxel id). snr =
// inf gives the noise-free series.
NoisySeries simulate_series(const GroundTruthPhantom& phantom, const std::vector<double>& grid,
                            double snr, std::uint64_t seed, double hct = 0.0,
                            const AifSpec& aif_spec = AifSpec{},
                            double baseline_snr = kDefaultBaselineSnr);

} // namespace perfusion
