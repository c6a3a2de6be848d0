// analysis.cpp

#include "perfusion/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "perfusion/parallel.hpp"

namespace perfusion {

double nmse(const std::vector<double>& estimated, const std::vector<double>& truth) {
    if (estimated.size() != truth.size() || truth.empty())
        throw std::invalid_argument("nmse needs nonempty maps of equal size");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = estimated[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("nmse undefined: truth energy is zero");
    return num / den;
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// midranks of the pooled sample; returns rank sum of sample a and tie info
struct RankInfo {
    double rank_sum_a = 0.0;
    bool has_ties = false;
    double tie_term = 0.0;  // sum over groups of t^3 - t
    bool all_tied = false;
};

RankInfo midranks(const std::vector<double>& a, const std::vector<double>& b) {
    struct Entry {
        double value;
        bool from_a;
    };
    std::vector<Entry> pool;
    pool.reserve(a.size() + b.size());
    for (double x : a) pool.push_back({x, true});
    for (double x : b) pool.push_back({x, false});
    std::sort(pool.begin(), pool.end(), [](const Entry& l, const Entry& r) { return l.value < r.value; });

    RankInfo info;
    std::size_t i = 0;
    std::size_t max_group = 0;
    while (i < pool.size()) {
        std::size_t j = i;
        while (j < pool.size() && pool[j].value == pool[i].value) ++j;
        const double rank = 0.5 * static_cast<double>(i + j + 1);  // 1-based midrank
        for (std::size_t k = i; k < j; ++k) {
            if (pool[k].from_a) info.rank_sum_a += rank;
        }
        const auto t = static_cast<double>(j - i);
        if (j - i > 1) {
            info.has_ties = true;
            info.tie_term += t * t * t - t;
        }
        max_group = std::max(max_group, j - i);
        i = j;
    }
    info.all_tied = max_group == pool.size();
    return info;
}

// null distribution of U_a: counts[u] over subsets of size n_a from
// n_a + n_b untied ranks
std::vector<double> exact_u_distribution(std::size_t n_a, std::size_t n_b) {
    const std::size_t u_max = n_a * n_b;
    // dp[j][u]: ways to choose j of the first i ranks with U contribution u
    std::vector<std::vector<double>> dp(n_a + 1, std::vector<double>(u_max + 1, 0.0));
    dp[0][0] = 1.0;
    const std::size_t n = n_a + n_b;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = std::min(i, n_a); j >= 1; --j) {
            // picking rank i as the j-th member of a adds (i - j) to U_a
            const std::size_t add = i - j;
            for (std::size_t u = u_max + 1; u-- > add;) {
                if (dp[j - 1][u - add] != 0.0) dp[j][u] += dp[j - 1][u - add];
            }
        }
    }
    return dp[n_a];
}

} // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                                 MannWhitneyMethod method) {
    if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u needs nonempty samples");
    const auto n_a = a.size(), n_b = b.size();
    const auto info = midranks(a, b);

    MannWhitneyResult res;
    const double u_a = info.rank_sum_a - 0.5 * static_cast<double>(n_a) * (n_a + 1);
    const double u_b = static_cast<double>(n_a) * static_cast<double>(n_b) - u_a;
    res.u = std::min(u_a, u_b);

    if (info.all_tied) {
        res.degenerate = true;
        res.p = 1.0;
        return res;
    }

    const double mu = 0.5 * static_cast<double>(n_a) * static_cast<double>(n_b);
    const bool exact_allowed = n_a * n_b <= 400 && !info.has_ties;
    if (method == MannWhitneyMethod::Exact && !exact_allowed)
        throw std::invalid_argument("exact Mann-Whitney needs tie-free samples with n_a*n_b <= 400");

    if (method != MannWhitneyMethod::NormalApprox && exact_allowed) {
        const auto counts = exact_u_distribution(n_a, n_b);
        double total = 0.0, tail = 0.0;
        const double dev = std::abs(u_a - mu);
        for (std::size_t u = 0; u < counts.size(); ++u) {
            total += counts[u];
            if (std::abs(static_cast<double>(u) - mu) >= dev - 1e-12) tail += counts[u];
        }
        res.exact = true;
        res.p = tail / total;
        return res;
    }

    const double n = static_cast<double>(n_a + n_b);
    double var = static_cast<double>(n_a) * static_cast<double>(n_b) / 12.0 *
                 ((n + 1.0) - info.tie_term / (n * (n - 1.0)));
    if (var <= 0.0) {
        res.degenerate = true;
        res.p = 1.0;
        return res;
    }
    const double z = (std::abs(u_a - mu) - 0.5) / std::sqrt(var);  // continuity corrected
    res.p = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::max(z, 0.0))));
    return res;
}

OutlierStats outlier_stats(const std::vector<FitStatus>& statuses, const std::vector<double>& f_b) {
    if (statuses.size() != f_b.size()) throw std::invalid_argument("outlier_stats needs parallel vectors");
    OutlierStats st;
    if (statuses.empty()) return st;
    int n_failed = 0, n_outlier = 0;
    for (std::size_t i = 0; i < statuses.size(); ++i) {
        if (statuses[i] == FitStatus::Failed) ++n_failed;
        else if (f_b[i] > 5.0) ++n_outlier;
    }
    st.fraction_failed = static_cast<double>(n_failed) / statuses.size();
    st.fraction_fb_over_5 = static_cast<double>(n_outlier) / statuses.size();
    return st;
}

int NmseReport::row_index(const std::string& name) const {
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i] == name) return static_cast<int>(i);
    return -1;
}

int NmseReport::method_index(const std::string& name) const {
    for (std::size_t i = 0; i < methods.size(); ++i)
        if (methods[i] == name) return static_cast<int>(i);
    return -1;
}

namespace {

// per-parameter NMSE of one fitted map against phantom truth; failed
// voxels excluded from both sums
std::vector<double> map_nmse(const GroundTruthPhantom& phantom, const std::vector<int>& voxel_ids,
                             const std::vector<KineticParams>& estimates,
                             const std::vector<FitStatus>& statuses) {
    std::vector<double> est, tru;
    std::vector<double> out(4, 0.0);
    for (int k = 0; k < 4; ++k) {
        est.clear();
        tru.clear();
        for (std::size_t i = 0; i < voxel_ids.size(); ++i) {
            if (statuses[i] == FitStatus::Failed) continue;
            const auto& t = phantom.at(voxel_ids[i]);
            const auto& e = estimates[i];
            switch (k) {
            case 0: est.push_back(e.f_b); tru.push_back(t.f_b); break;
            case 1: est.push_back(e.v_p); tru.push_back(t.v_p); break;
            case 2: est.push_back(e.v_e); tru.push_back(t.v_e); break;
            default: est.push_back(e.ps); tru.push_back(t.ps); break;
            }
        }
        out[static_cast<std::size_t>(k)] = est.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                       : nmse(est, tru);
    }
    return out;
}

} // namespace

NmseReport monte_carlo_study(const StudyConfig& cfg) {
    if (cfg.n_realizations < 2) throw std::invalid_argument("need at least 2 realisations");
    if (cfg.methods.empty()) throw std::invalid_argument("need at least one method");
    for (const auto& m : cfg.methods) {
        if (m != "nlls" && m != "bayes" && m != "bayes-nonhier")
            throw std::invalid_argument("unknown method '" + m + "'");
    }

    const auto phantom = build_phantom(cfg.scenario);
    const double dt = cfg.dt > 0.0 ? cfg.dt : default_dt(cfg.scenario);
    const auto grid = make_time_grid(dt, cfg.total_time);
    const auto mask = full_mask(phantom.width, phantom.height);

    NmseReport report;
    report.methods = cfg.methods;
    report.rows = {"all", "f_b", "v_p", "v_e", "ps"};
    report.n_realizations = cfg.n_realizations;
    report.values.assign(cfg.methods.size(), std::vector<std::vector<double>>(report.rows.size()));

    for (int r = 1; r <= cfg.n_realizations; ++r) {
        const auto series = simulate_series(phantom, grid, cfg.snr, cfg.seed + static_cast<std::uint64_t>(r), cfg.hct);

        for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
            const auto& method = cfg.methods[m];
            std::vector<KineticParams> estimates;
            std::vector<FitStatus> statuses;

            if (method == "nlls") {
                const auto fit = fit_map_nlls(series, mask, cfg.bounds, cfg.n_starts, cfg.tau0_bounds,
                                              cfg.hct, series.seed, cfg.n_threads);
                for (const auto& f : fit.fits) {
                    estimates.push_back(f.params);
                    statuses.push_back(f.status);
                }
            } else {
                PriorSpec spec = cfg.prior;
                spec.hierarchical = method == "bayes";
                SamplerOptions opt = cfg.sampler;
                opt.seed = series.seed;
                opt.hct = cfg.hct;
                opt.n_threads = cfg.n_threads;
                const auto run = perfusion::run_chain(series, mask, spec, opt);
                for (std::size_t i = 0; i < run.voxel_ids.size(); ++i) {
                    KineticParams p;
                    p.f_b = run.summary.median[i][kFb];
                    p.v_p = run.summary.median[i][kVp];
                    p.v_e = run.summary.median[i][kVe];
                    p.ps = run.summary.median[i][kPs];
                    p.tau0 = run.summary.median[i][kTau0];
                    estimates.push_back(p);
                    statuses.push_back(FitStatus::Ok);
                }
            }

            const auto per_param = map_nmse(phantom, mask.ids, estimates, statuses);
            for (int k = 0; k < 4; ++k) {
                const double v = per_param[static_cast<std::size_t>(k)];
                report.values[m][static_cast<std::size_t>(k) + 1].push_back(v);
                report.values[m][0].push_back(v);  // pooled "all" row
            }
        }
    }

    report.mean.assign(cfg.methods.size(), std::vector<double>(report.rows.size(), 0.0));
    report.stddev.assign(cfg.methods.size(), std::vector<double>(report.rows.size(), 0.0));
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        for (std::size_t r = 0; r < report.rows.size(); ++r) {
            const auto& vals = report.values[m][r];
            double mu = 0.0;
            for (double v : vals) mu += v;
            mu /= static_cast<double>(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mu) * (v - mu);
            var = vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
            report.mean[m][r] = mu;
            report.stddev[m][r] = std::sqrt(var);
        }
    }

    for (std::size_t m1 = 0; m1 < cfg.methods.size(); ++m1) {
        for (std::size_t m2 = m1 + 1; m2 < cfg.methods.size(); ++m2) {
            NmseReport::PairP pp;
            pp.method_a = cfg.methods[m1];
            pp.method_b = cfg.methods[m2];
            for (std::size_t r = 0; r < report.rows.size(); ++r) {
                pp.p.push_back(mann_whitney_u(report.values[m1][r], report.values[m2][r]).p);
            }
            report.p_values.push_back(std::move(pp));
        }
    }
    return report;
}

std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("linspace needs n >= 1");
    std::vector<double> v(static_cast<std::size_t>(n));
    if (n == 1) {
        v[0] = lo;
        return v;
    }
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return v;
}

std::vector<std::vector<double>> cost_surface(const SampledCurve& curve, const SampledCurve& aif,
                                              double hct, const std::vector<double>& f_b_grid,
                                              const std::vector<double>& tau0_grid,
                                              const std::vector<double>& v_p_grid,
                                              const std::vector<double>& v_e_grid,
                                              const std::vector<double>& ps_grid,
                                              int n_threads) {
    if (f_b_grid.empty() || tau0_grid.empty() || v_p_grid.empty() || v_e_grid.empty() || ps_grid.empty())
        throw std::invalid_argument("cost_surface grids must be nonempty");
    curve.validate();
    if (!grids_match(curve.times, aif.times)) throw grid_mismatch_error("curve and AIF grids differ");

    std::vector<std::vector<double>> surface(f_b_grid.size(),
                                             std::vector<double>(tau0_grid.size(), 0.0));
    const double dt = curve.dt();
    const auto n = curve.size();

    parallel_for(static_cast<int>(tau0_grid.size()), n_threads, [&](int j) {
        std::vector<double> shifted(n), model;
        for (std::size_t i = 0; i < n; ++i)
            shifted[i] = interp_at(aif, curve.times[i] - tau0_grid[static_cast<std::size_t>(j)]);

        for (std::size_t i = 0; i < f_b_grid.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            KineticParams p;
            p.f_b = f_b_grid[i];
            p.tau0 = tau0_grid[static_cast<std::size_t>(j)];
            for (double vp : v_p_grid) {
                for (double ve : v_e_grid) {
                    if (vp + ve > 1.0) continue;
                    for (double ps : ps_grid) {
                        p.v_p = vp;
                        p.v_e = ve;
                        p.ps = ps;
                        const auto rc = residue_coefficients(p, hct);
                        detail::tissue_curve(rc, p.f_b / (1.0 - hct), dt, shifted, model);
                        double sum = 0.0;
                        for (std::size_t s = 0; s < n; ++s) {
                            const double rr = model[s] - curve.values[s];
                            sum += rr * rr;
                        }
                        best = std::min(best, sum / static_cast<double>(n));
                    }
                }
            }
            surface[i][static_cast<std::size_t>(j)] = best;
        }
    });
    return surface;
}

std::vector<std::vector<double>> cost_surface(const SampledCurve& curve, const SampledCurve& aif,
                                              double hct, const std::vector<double>& f_b_grid,
                                              const std::vector<double>& tau0_grid,
                                              const FitBounds& bounds, int inner_points,
                                              int n_threads) {
    return cost_surface(curve, aif, hct, f_b_grid, tau0_grid,
                        linspace(bounds.v_p.lo, bounds.v_p.hi, inner_points),
                        linspace(bounds.v_e.lo, bounds.v_e.hi, inner_points),
                        linspace(bounds.ps.lo, bounds.ps.hi, inner_points), n_threads);
}

} // namespace perfusion
