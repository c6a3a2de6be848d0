// kinetics.cpp

#include "perfusion/kinetics.hpp"

#include <algorithm>
#include <cmath>

namespace perfusion {

void KineticParams::validate() const {
    if (!(f_b > 0.0)) throw std::invalid_argument("f_b must be strictly positive");
    if (!(v_p > 0.0)) throw std::invalid_argument("v_p must be strictly positive");
    if (!(v_e > 0.0)) throw std::invalid_argument("v_e must be strictly positive");
    if (!(ps > 0.0)) throw std::invalid_argument("ps must be strictly positive");
    if (!(tau0 >= 0.0)) throw std::invalid_argument("tau0 must be non-negative");
    if (v_p + v_e > 1.0) throw std::invalid_argument("v_p + v_e cannot exceed 1");
}

void AcquisitionConfig::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (total_time < dt) throw std::invalid_argument("total_time must be at least dt");
    if (hct < 0.0 || hct >= 1.0) throw std::invalid_argument("hct must be in [0, 1)");
    if (!(r1 > 0.0)) throw std::invalid_argument("r1 must be positive");
    if (!(t1b > 0.0)) throw std::invalid_argument("t1b must be positive");
    if (n_baseline < 1) throw std::invalid_argument("n_baseline must be at least 1");
}

double ResidueCoefficients::value(double t) const {
    return a * std::exp(alpha * t) + (1.0 - a) * std::exp(beta * t);
}

ResidueCoefficients residue_coefficients(const KineticParams& params, double hct) {
    if (hct < 0.0 || hct >= 1.0) throw std::invalid_argument("hct must be in [0, 1)");
    // positivity checks only; tau0 plays no role here
    if (!(params.f_b > 0.0 && params.v_p > 0.0 && params.v_e > 0.0 && params.ps >= 0.0))
        throw std::invalid_argument("invalid kinetic parameters");

    const double fp = params.f_b / (1.0 - hct);
    const double exch_p = params.ps / params.v_p;
    const double exch_e = params.ps / params.v_e;
    const double p = (fp + params.ps) / params.v_p + exch_e;
    const double q = fp * params.ps / (params.v_p * params.v_e);

    double disc = p * p - 4.0 * q;
    if (disc < 0.0 && disc >= -1e-12) disc = 0.0;
    const double root = std::sqrt(disc);

    ResidueCoefficients rc;
    rc.alpha = 0.5 * (-p + root);
    rc.beta = 0.5 * (-p - root);
    if (rc.alpha == rc.beta)
        throw degenerate_model_error("repeated residue-function exponent: model is degenerate");
    rc.a = (rc.alpha + exch_p + exch_e) / (rc.alpha - rc.beta);
    return rc;
}

namespace detail {

std::vector<double> shift_aif(const SampledCurve& aif, const std::vector<double>& grid, double tau0) {
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = interp_at(aif, grid[i] - tau0);
    return out;
}

// For kernel e^{lam t} and input u linear on each interval, the running
// integral obeys
//   I_{k+1} = e^{lam dt} I_k + u_k E0 + (u_{k+1} - u_k) E1
//   E0 = (e^x - 1) dt / x,  E1 = (e^x - 1 - x) dt / x^2,  x = lam dt,
// with series fallbacks near x = 0.
static void exp_conv(double lam, double dt, const std::vector<double>& u, std::vector<double>& f) {
    const std::size_t n = u.size();
    f.assign(n, 0.0);
    const double x = lam * dt;
    const double e = std::exp(x);
    double e0, e1;
    if (std::abs(x) > 1e-5) {
        e0 = (e - 1.0) * dt / x;
        e1 = (e - 1.0 - x) * dt / (x * x);
    } else {
        e0 = dt * (1.0 + x / 2.0 + x * x / 6.0);
        e1 = dt * (0.5 + x / 6.0 + x * x / 24.0);
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        f[k + 1] = e * f[k] + u[k] * e0 + (u[k + 1] - u[k]) * e1;
    }
}

void tissue_curve(const ResidueCoefficients& rc, double fp, double dt,
                  const std::vector<double>& aif_shifted, std::vector<double>& out) {
    thread_local std::vector<double> f1, f2;
    exp_conv(rc.alpha, dt, aif_shifted, f1);
    exp_conv(rc.beta, dt, aif_shifted, f2);
    out.resize(aif_shifted.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fp * (rc.a * f1[i] + (1.0 - rc.a) * f2[i]);
    }
}

} // namespace detail

SampledCurve forward_model(const KineticParams& params, const SampledCurve& aif,
                           const std::vector<double>& grid, double hct) {
    params.validate();
    aif.validate();
    if (!grids_match(aif.times, grid)) throw grid_mismatch_error("AIF grid differs from requested grid");

    const auto rc = residue_coefficients(params, hct);
    const double fp = params.f_b / (1.0 - hct);
    SampledCurve out;
    out.times = grid;
    const auto shifted = detail::shift_aif(aif, grid, params.tau0);
    detail::tissue_curve(rc, fp, grid[1] - grid[0], shifted, out.values);
    return out;
}

SampledCurve ode_oracle(const KineticParams& params, const SampledCurve& aif,
                        const std::vector<double>& grid, double hct, int substeps) {
    params.validate();
    aif.validate();
    if (!grids_match(aif.times, grid)) throw grid_mismatch_error("AIF grid differs from requested grid");
    if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");

    const double fp = params.f_b / (1.0 - hct);
    const double dt = grid[1] - grid[0];

    // keep |lambda| h well inside the RK4 stability region for stiff draws
    const auto rc = residue_coefficients(params, hct);
    const double lam_max = std::max(std::abs(rc.alpha), std::abs(rc.beta));
    int nsub = substeps;
    if (lam_max > 0.0) {
        const double h_cap = 0.25 / lam_max;
        if (dt / nsub > h_cap) nsub = static_cast<int>(std::ceil(dt / h_cap));
    }
    const double h = dt / nsub;

    // delayed AIF sampled on the grid, then interpolated between samples
    const auto shifted = detail::shift_aif(aif, grid, params.tau0);

    auto input = [&](double t) { return interp_at(grid, shifted, t); };
    auto deriv = [&](double t, double cp, double ce, double& dcp, double& dce) {
        dcp = (fp * (input(t) - cp) + params.ps * (ce - cp)) / params.v_p;
        dce = params.ps * (cp - ce) / params.v_e;
    };

    SampledCurve out;
    out.times = grid;
    out.values.assign(grid.size(), 0.0);
    double cp = 0.0, ce = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        for (int s = 0; s < nsub; ++s) {
            const double t = grid[i] + s * h;
            double k1p, k1e, k2p, k2e, k3p, k3e, k4p, k4e;
            deriv(t, cp, ce, k1p, k1e);
            deriv(t + 0.5 * h, cp + 0.5 * h * k1p, ce + 0.5 * h * k1e, k2p, k2e);
            deriv(t + 0.5 * h, cp + 0.5 * h * k2p, ce + 0.5 * h * k2e, k3p, k3e);
            deriv(t + h, cp + h * k3p, ce + h * k3e, k4p, k4e);
            cp += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
            ce += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        }
        out.values[i + 1] = params.v_p * cp + params.v_e * ce;
    }
    return out;
}

SampledCurve signal_to_concentration(const SampledCurve& signal, double s_lv0,
                                     const AcquisitionConfig& cfg) {
    signal.validate();
    cfg.validate();
    if (!(s_lv0 > 0.0)) throw std::invalid_argument("baseline LV signal must be positive");
    if (signal.size() < static_cast<std::size_t>(cfg.n_baseline))
        throw std::invalid_argument("signal shorter than baseline window");

    double s0 = 0.0;
    for (int i = 0; i < cfg.n_baseline; ++i) s0 += signal.values[static_cast<std::size_t>(i)];
    s0 /= cfg.n_baseline;

    const double t1b_s = cfg.t1b / 1000.0;  // ms -> s, r1 is per second
    const double scale = 1.0 / (cfg.r1 * t1b_s * s_lv0);

    SampledCurve out;
    out.times = signal.times;
    out.values.resize(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out.values[i] = scale * (signal.values[i] - s0);
    return out;
}

SampledCurve gamma_variate_aif(const std::vector<double>& grid, double peak_amplitude,
                               double onset, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0) || !(peak_amplitude > 0.0))
        throw std::invalid_argument("gamma-variate parameters must be positive");
    const double t_pk = shape * scale;
    SampledCurve out;
    out.times = grid;
    out.values.assign(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid[i] - onset;
        if (x > 0.0) {
            out.values[i] = peak_amplitude * std::pow(x / t_pk, shape) * std::exp(shape * (1.0 - x / t_pk));
        }
    }
    return out;
}

} // namespace perfusion
