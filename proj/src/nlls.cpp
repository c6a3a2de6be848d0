// nlls.cpp

#include "perfusion/nlls.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "perfusion/parallel.hpp"
#include "perfusion/rng.hpp"

namespace perfusion {

void FitBounds::validate() const {
    for (const Interval* iv : {&f_b, &v_p, &v_e, &ps}) {
        if (!(iv->lo < iv->hi)) throw std::invalid_argument("fit bounds must satisfy lo < hi");
    }
}

double chi_squared(const KineticParams& params, const SampledCurve& curve,
                   const SampledCurve& aif, double hct) {
    if (!grids_match(curve.times, aif.times)) throw grid_mismatch_error("curve and AIF grids differ");
    const SampledCurve model = forward_model(params, aif, curve.times, hct);
    double sum = 0.0;
    for (std::size_t j = 0; j < curve.size(); ++j) {
        const double r = model.values[j] - curve.values[j];
        sum += r * r;
    }
    return sum / static_cast<double>(curve.size());
}

namespace {

constexpr int kDim = 5;  // f_b, v_p, v_e, ps, tau0
using Vec = std::array<double, kDim>;
using Mat = std::array<std::array<double, kDim>, kDim>;

struct Objective {
    const SampledCurve* curve;
    const SampledCurve* aif;
    double hct;
    Vec lo, hi;

    mutable std::vector<double> shifted, model;

    double operator()(const Vec& x) const {
        KineticParams p{x[0], x[1], x[2], x[3], x[4]};
        const auto rc = residue_coefficients(p, hct);
        const double fp = p.f_b / (1.0 - hct);
        shifted.resize(curve->size());
        for (std::size_t i = 0; i < curve->size(); ++i)
            shifted[i] = interp_at(*aif, curve->times[i] - p.tau0);
        detail::tissue_curve(rc, fp, curve->dt(), shifted, model);
        double sum = 0.0;
        for (std::size_t j = 0; j < curve->size(); ++j) {
            const double r = model[j] - curve->values[j];
            sum += r * r;
        }
        return sum / static_cast<double>(curve->size());
    }
};

Vec clamp_box(Vec x, const Vec& lo, const Vec& hi) {
    for (int i = 0; i < kDim; ++i) x[i] = std::min(std::max(x[i], lo[i]), hi[i]);
    return x;
}

// central differences with the stencil kept inside the box
Vec fd_gradient(const Objective& f, const Vec& x, double fx) {
    (void)fx;
    Vec g{};
    for (int i = 0; i < kDim; ++i) {
        const double h = 1e-6 * std::max(std::abs(x[i]), 1e-3);
        Vec xp = x, xm = x;
        xp[i] = std::min(x[i] + h, f.hi[i]);
        xm[i] = std::max(x[i] - h, f.lo[i]);
        const double spread = xp[i] - xm[i];
        g[i] = spread > 0.0 ? (f(xp) - f(xm)) / spread : 0.0;
    }
    return g;
}

struct BfgsResult {
    Vec x;
    double cost;
    bool converged;
};

// Projected BFGS with backtracking line search along the clamped step.
BfgsResult projected_bfgs(const Objective& f, Vec x0, double tol, int max_iter) {
    Vec x = clamp_box(x0, f.lo, f.hi);
    double fx = f(x);
    Vec g = fd_gradient(f, x, fx);

    Mat h{};  // inverse Hessian approximation
    for (int i = 0; i < kDim; ++i) h[i][i] = 1.0;

    const auto bound_eps = [&](int i) { return 1e-10 * (f.hi[i] - f.lo[i]); };
    const auto is_active = [&](const Vec& xx, const Vec& gg, int i) {
        return (xx[i] <= f.lo[i] + bound_eps(i) && gg[i] > 0.0) ||
               (xx[i] >= f.hi[i] - bound_eps(i) && gg[i] < 0.0);
    };

    for (int iter = 0; iter < max_iter; ++iter) {
        // search direction on the free variables
        Vec d{};
        double gd = 0.0;
        for (int i = 0; i < kDim; ++i) {
            if (is_active(x, g, i)) continue;
            double s = 0.0;
            for (int j = 0; j < kDim; ++j) {
                if (is_active(x, g, j)) continue;
                s += h[i][j] * g[j];
            }
            d[i] = -s;
            gd += g[i] * d[i];
        }
        if (gd >= 0.0) {  // not a descent direction: reset to steepest descent
            gd = 0.0;
            for (int i = 0; i < kDim; ++i) {
                d[i] = is_active(x, g, i) ? 0.0 : -g[i];
                gd += g[i] * d[i];
            }
            for (int i = 0; i < kDim; ++i)
                for (int j = 0; j < kDim; ++j) h[i][j] = (i == j) ? 1.0 : 0.0;
            if (gd >= 0.0) {
                // projected gradient vanished: converged at a stationary point
                return {x, fx, true};
            }
        }

        // backtracking Armijo on the projected path
        double alpha = 1.0;
        Vec xn{};
        double fn = fx;
        bool moved = false;
        while (alpha > 1e-20) {
            Vec cand = x;
            for (int i = 0; i < kDim; ++i) cand[i] = x[i] + alpha * d[i];
            cand = clamp_box(cand, f.lo, f.hi);
            const double fc = f(cand);
            double dir = 0.0;
            for (int i = 0; i < kDim; ++i) dir += g[i] * (cand[i] - x[i]);
            if (fc <= fx + 1e-4 * dir) {
                xn = cand;
                fn = fc;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            // line search stalled below machine resolution
            return {x, fx, true};
        }

        Vec gn = fd_gradient(f, xn, fn);

        // convergence: projected gradient max-norm or relative step
        double gmax = 0.0, smax = 0.0;
        for (int i = 0; i < kDim; ++i) {
            if (!is_active(xn, gn, i)) gmax = std::max(gmax, std::abs(gn[i]));
            smax = std::max(smax, std::abs(xn[i] - x[i]) / std::max(1.0, std::abs(x[i])));
        }
        const bool done = gmax < tol || smax < tol;

        // BFGS update
        Vec s{}, y{};
        double sy = 0.0;
        for (int i = 0; i < kDim; ++i) {
            s[i] = xn[i] - x[i];
            y[i] = gn[i] - g[i];
            sy += s[i] * y[i];
        }
        if (sy > 1e-14) {
            Vec hy{};
            double yhy = 0.0;
            for (int i = 0; i < kDim; ++i) {
                double acc = 0.0;
                for (int j = 0; j < kDim; ++j) acc += h[i][j] * y[j];
                hy[i] = acc;
                yhy += y[i] * acc;
            }
            const double c1 = (sy + yhy) / (sy * sy);
            for (int i = 0; i < kDim; ++i) {
                for (int j = 0; j < kDim; ++j) {
                    h[i][j] += c1 * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }

        x = xn;
        fx = fn;
        g = gn;
        if (done) return {x, fx, true};
    }
    return {x, fx, false};
}

bool at_any_bound(const Vec& x, const Vec& lo, const Vec& hi) {
    for (int i = 0; i < kDim; ++i) {
        const double eps = 1e-6 * (hi[i] - lo[i]);
        if (std::abs(x[i] - lo[i]) < eps || std::abs(x[i] - hi[i]) < eps) return true;
    }
    return false;
}

} // namespace

LocalFit fit_local(const SampledCurve& curve, const SampledCurve& aif, const FitBounds& bounds,
                   Interval tau0_bounds, double hct, const KineticParams& start) {
    bounds.validate();
    curve.validate();
    if (!grids_match(curve.times, aif.times)) throw grid_mismatch_error("curve and AIF grids differ");

    Objective obj;
    obj.curve = &curve;
    obj.aif = &aif;
    obj.hct = hct;
    obj.lo = {bounds.f_b.lo, bounds.v_p.lo, bounds.v_e.lo, bounds.ps.lo, tau0_bounds.lo};
    obj.hi = {bounds.f_b.hi, bounds.v_p.hi, bounds.v_e.hi, bounds.ps.hi, tau0_bounds.hi};

    const Vec x0{start.f_b, start.v_p, start.v_e, start.ps, start.tau0};
    const auto fit = projected_bfgs(obj, x0, kFitTolerance, kMaxFitIterations);
    return {{fit.x[0], fit.x[1], fit.x[2], fit.x[3], fit.x[4]}, fit.cost, fit.converged};
}

FitResult fit_voxel_nlls(const SampledCurve& curve, const SampledCurve& aif,
                         const FitBounds& bounds, int n_starts, Interval tau0_bounds,
                         double hct, std::uint64_t seed) {
    bounds.validate();
    if (n_starts < 1) throw std::invalid_argument("n_starts must be >= 1");
    if (!(tau0_bounds.lo < tau0_bounds.hi) || tau0_bounds.lo < 0.0)
        throw std::invalid_argument("bad tau0 bounds");
    curve.validate();
    if (!grids_match(curve.times, aif.times)) throw grid_mismatch_error("curve and AIF grids differ");

    Objective obj;
    obj.curve = &curve;
    obj.aif = &aif;
    obj.hct = hct;
    obj.lo = {bounds.f_b.lo, bounds.v_p.lo, bounds.v_e.lo, bounds.ps.lo, tau0_bounds.lo};
    obj.hi = {bounds.f_b.hi, bounds.v_p.hi, bounds.v_e.hi, bounds.ps.hi, tau0_bounds.hi};

    FitResult result;
    result.seed = seed;
    double best_ok = std::numeric_limits<double>::infinity();
    double best_any = std::numeric_limits<double>::infinity();
    Vec best_ok_x{}, best_any_x{};

    for (int k = 0; k < n_starts; ++k) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(k));
        Vec x0;
        for (int i = 0; i < kDim; ++i) x0[i] = rng.uniform(obj.lo[i], obj.hi[i]);

        const BfgsResult fit = projected_bfgs(obj, x0, kFitTolerance, kMaxFitIterations);
        if (fit.cost < best_any) {
            best_any = fit.cost;
            best_any_x = fit.x;
        }
        if (fit.converged && !at_any_bound(fit.x, obj.lo, obj.hi)) {
            ++result.n_successful_starts;
            if (fit.cost < best_ok) {
                best_ok = fit.cost;
                best_ok_x = fit.x;
            }
        }
    }

    if (result.n_successful_starts > 0) {
        result.status = FitStatus::Ok;
        result.params = {best_ok_x[0], best_ok_x[1], best_ok_x[2], best_ok_x[3], best_ok_x[4]};
        result.cost = best_ok;
    } else {
        result.status = FitStatus::Failed;
        result.params = {best_any_x[0], best_any_x[1], best_any_x[2], best_any_x[3], best_any_x[4]};
        result.cost = best_any;
    }
    return result;
}

NllsMapResult fit_map_nlls(const NoisySeries& series, const VoxelMask& mask,
                           const FitBounds& bounds, int n_starts, Interval tau0_bounds,
                           double hct, std::uint64_t seed, int n_threads) {
    mask.validate();
    NllsMapResult out;
    out.voxel_ids = mask.ids;
    out.fits.resize(mask.ids.size());

    for (int id : mask.ids) {
        if (static_cast<std::size_t>(id) >= series.voxels.size() || series.voxels[static_cast<std::size_t>(id)].size() == 0)
            throw std::invalid_argument("masked voxel has no curve");
    }

    parallel_for(static_cast<int>(mask.ids.size()), n_threads, [&](int i) {
        const int id = mask.ids[static_cast<std::size_t>(i)];
        const auto voxel_seed =
            Rng::derive(seed, stream_tag::make(stream_tag::nlls, static_cast<std::uint64_t>(id)));
        out.fits[static_cast<std::size_t>(i)] =
            fit_voxel_nlls(series.voxels[static_cast<std::size_t>(id)], series.aif, bounds,
                           n_starts, tau0_bounds, hct, voxel_seed);
    });

    auto& st = out.stats;
    st.n_voxels = static_cast<int>(out.fits.size());
    int n_outlier = 0;
    for (const auto& fit : out.fits) {
        if (fit.status == FitStatus::Failed) {
            ++st.n_failed;
        } else if (fit.params.f_b > 5.0) {
            ++n_outlier;
        }
    }
    st.fraction_failed = st.n_voxels > 0 ? static_cast<double>(st.n_failed) / st.n_voxels : 0.0;
    st.fraction_fb_over_5 = st.n_voxels > 0 ? static_cast<double>(n_outlier) / st.n_voxels : 0.0;
    return out;
}

} // namespace perfusion
