// kinetics.hpp
//
// Forward model of the two-compartment exchange model (2CXM). The coupled
// plasma/interstitium ODEs
//
//   v_p dC_p/dt = F_p (C_AIF(t - tau0) - C_p) + PS (C_e - C_p)
//   v_e dC_e/dt = PS (C_p - C_e)
//
// with F_p = F_b / (1 - Hct) have the bi-exponential impulse response
// F_p * R(t), R(t) = a exp(alpha t) + (1 - a) exp(beta t). The analytic
// route convolves that response against the linearly-interpolated AIF with
// an exact exponential recursion; a Runge-Kutta integration of the ODEs
// serves as an independent numerical cross-check.

#pragma once

#include <stdexcept>
#include <vector>

#include "perfusion/curve.hpp"

namespace perfusion {

// Kinetic parameter vector of one voxel.
struct KineticParams {
    double f_b = 0.0;   // blood flow, mL/min/mL
    double v_p = 0.0;   // fractional plasma volume
    double v_e = 0.0;   // fractional interstitial volume
    double ps = 0.0;    // permeability-surface-area product, mL/min/mL
    double tau0 = 0.0;  // bolus delay, minutes

    // all fields strictly positive (tau0 >= 0), v_p + v_e <= 1
    void validate() const;
};

// Bi-exponential residue description: R(t) = a e^{alpha t} + (1-a) e^{beta t},
// alpha >= beta, both <= 0, R(0) = 1.
struct ResidueCoefficients {
    double alpha;  // 1/min
    double beta;   // 1/min
    double a;      // mixing weight

    double value(double t) const;
};

// Acquisition constants for the signal-to-concentration conversion and
// phantom/patient defaults.
struct AcquisitionConfig {
    double dt = 0.012;        // frame spacing, minutes
    double total_time = 3.0;  // minutes
    double hct = 0.0;         // haematocrit
    double r1 = 4.5;          // relaxivity, 1/s per mmol/L
    double t1b = 1736.0;      // blood T1, ms
    int n_baseline = 5;       // pre-contrast frames averaged for S(0)

    void validate() const;
};

// Repeated residue-function root: the two exponents coincide and the
// bi-exponential form is ill-posed.
class degenerate_model_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// AIF sampled on a different grid than requested.
class grid_mismatch_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Roots of the 2CXM characteristic quadratic and the mixing weight
// a = (alpha + PS/v_p + PS/v_e) / (alpha - beta). The discriminant is
// clamped to 0 when within -1e-12 of 0; an exactly repeated root raises
// degenerate_model_error.
ResidueCoefficients residue_coefficients(const KineticParams& params, double hct);

// Tissue concentration [F_p R] * C_AIF(t - tau0) on the grid. The delayed
// AIF is resampled onto the grid by linear interpolation and the
// convolution integral is evaluated exactly for that piecewise-linear
// input.
SampledCurve forward_model(const KineticParams& params, const SampledCurve& aif,
                           const std::vector<double>& grid, double hct);

// Classical RK4 integration of the coupled ODEs, substep dt/substeps
// (capped for stiff exponents so the scheme stays in its stability
// region). Returns v_p C_p + v_e C_e on the grid. Independent of the
// analytic route; used as its oracle.
SampledCurve ode_oracle(const KineticParams& params, const SampledCurve& aif,
                        const std::vector<double>& grid, double hct, int substeps = 10);

// C(t) = (S(t) - S(0)) / (r1 * T1b * S_LV(0)) with S(0) the mean of the
// first n_baseline samples; r1*T1b converted so C is in mM.
SampledCurve signal_to_concentration(const SampledCurve& signal, double s_lv0,
                                     const AcquisitionConfig& cfg);

// Gamma-variate bolus curve, zero before onset, continuous peak equal to
// peak_amplitude at t = onset + shape*scale.
SampledCurve gamma_variate_aif(const std::vector<double>& grid, double peak_amplitude,
                               double onset, double shape, double scale);

namespace detail {

// AIF(t_i - tau0) for every grid point, flat-clamped lerp.
std::vector<double> shift_aif(const SampledCurve& aif, const std::vector<double>& grid, double tau0);

// Convolution of F_p R against a pre-shifted, grid-sampled input. Core of
// forward_model, shared with the fitting hot loops.
void tissue_curve(const ResidueCoefficients& rc, double fp, double dt,
                  const std::vector<double>& aif_shifted, std::vector<double>& out);

} // namespace detail

} // namespace perfusion
