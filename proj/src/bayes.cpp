// bayes.cpp

#include "perfusion/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "perfusion/nlls.hpp"
#include "perfusion/parallel.hpp"

namespace perfusion {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kWeightFloor = 1e-3;

double log_gaussian(double x, double mean, double variance) {
    const double r = x - mean;
    return -0.5 * (kLogTwoPi + std::log(variance)) - r * r / (2.0 * variance);
}

double log_inv_gamma(double x, double shape, double scale) {
    if (!(x > 0.0)) return kNegInf;
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

bool in_support(int param, double value, const PriorSpec& spec) {
    switch (param) {
    case kFb: return value > 0.0;
    case kVp: return value > 0.0 && value <= spec.vp_max;
    case kVe: return value > 0.0 && value <= spec.ve_max;
    case kPs: return value > 0.0;
    case kTau0: return value >= 0.0 && value <= spec.tau0_max;
    default: return false;
    }
}

double get_param(const KineticParams& p, int k) {
    switch (k) {
    case kFb: return p.f_b;
    case kVp: return p.v_p;
    case kVe: return p.v_e;
    case kPs: return p.ps;
    default: return p.tau0;
    }
}

void set_param(KineticParams& p, int k, double v) {
    switch (k) {
    case kFb: p.f_b = v; break;
    case kVp: p.v_p = v; break;
    case kVe: p.v_e = v; break;
    case kPs: p.ps = v; break;
    default: p.tau0 = v; break;
    }
}

double fb_prior_mean(const VoxelState& v, const PriorSpec& spec) {
    return spec.hierarchical ? v.alpha_fb : spec.fixed_fb_mean;
}
double fb_prior_variance(const PriorSpec& spec) {
    return spec.hierarchical ? spec.fb_variance : spec.fixed_fb_variance;
}
double ps_prior_mean(const VoxelState& v, const PriorSpec& spec) {
    return spec.hierarchical ? v.alpha_ps : spec.fixed_ps_mean;
}
double ps_prior_variance(const PriorSpec& spec) {
    return spec.hierarchical ? spec.ps_variance : spec.fixed_ps_variance;
}

double sse_of(const KineticParams& params, const SampledCurve& curve, const SampledCurve& aif,
              double hct, std::vector<double>& shifted, std::vector<double>& model) {
    const auto rc = residue_coefficients(params, hct);
    const double fp = params.f_b / (1.0 - hct);
    shifted.resize(curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i)
        shifted[i] = interp_at(aif, curve.times[i] - params.tau0);
    detail::tissue_curve(rc, fp, curve.dt(), shifted, model);
    double sum = 0.0;
    for (std::size_t j = 0; j < curve.size(); ++j) {
        const double r = model[j] - curve.values[j];
        sum += r * r;
    }
    return sum;
}

double loglik_from_sse(double sse, double sigma2, std::size_t n) {
    return -0.5 * static_cast<double>(n) * (kLogTwoPi + std::log(sigma2)) - sse / (2.0 * sigma2);
}

} // namespace

void PriorSpec::validate() const {
    if (!(fb_variance > 0.0 && ps_variance > 0.0)) throw std::invalid_argument("prior variances must be positive");
    if (!(vp_max > 0.0 && ve_max > 0.0 && tau0_max > 0.0)) throw std::invalid_argument("prior supports must be positive");
    if (!(noise_shape > 0.0 && noise_scale > 0.0)) throw std::invalid_argument("noise prior parameters must be positive");
    if (!(spatial_scale > 0.0)) throw std::invalid_argument("spatial scale must be positive");
    if (!(alpha_fb_bounds.lo < alpha_fb_bounds.hi) || !(alpha_ps_bounds.lo < alpha_ps_bounds.hi))
        throw std::invalid_argument("hyperprior bounds must be nonempty");
    if (!(fixed_fb_variance > 0.0 && fixed_ps_variance > 0.0))
        throw std::invalid_argument("fixed prior variances must be positive");
}

void SamplerOptions::validate() const {
    if (n_steps <= burn_in) throw std::invalid_argument("n_steps must exceed burn_in");
    if (burn_in < 0) throw std::invalid_argument("burn_in must be non-negative");
    if (n_chains < 1) throw std::invalid_argument("need at least one chain");
    if (tune_window < 1) throw std::invalid_argument("tune_window must be positive");
    if (settle_sweeps < 0) throw std::invalid_argument("settle_sweeps must be non-negative");
}

NeighborGraph build_neighbor_graph(const VoxelMask& mask) {
    mask.validate();
    if (mask.ids.empty()) throw std::invalid_argument("mask is empty");
    if (mask.ids.size() == 1) throw std::invalid_argument("mask of a single voxel has no neighbours");

    NeighborGraph g;
    g.voxel_ids = mask.ids;
    g.neighbors.resize(mask.ids.size());
    g.reverse.resize(mask.ids.size());

    auto index_of = [&](int id) -> int {
        const auto it = std::lower_bound(mask.ids.begin(), mask.ids.end(), id);
        if (it == mask.ids.end() || *it != id) return -1;
        return static_cast<int>(it - mask.ids.begin());
    };
    auto masked_at = [&](int r, int c) -> int {
        if (r < 0 || r >= mask.height || c < 0 || c >= mask.width) return -1;
        return index_of(r * mask.width + c);
    };

    for (std::size_t i = 0; i < mask.ids.size(); ++i) {
        const int id = mask.ids[i];
        const int r = mask.row_of(id);
        const int c = mask.col_of(id);

        // direction order: above, below, left, right
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        // diagonal preference per missing direction (same side first)
        const int diag_order[4][4][2] = {
            {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}},  // missing above
            {{1, -1}, {1, 1}, {-1, -1}, {-1, 1}},  // missing below
            {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}},  // missing left
            {{-1, 1}, {1, 1}, {-1, -1}, {1, -1}},  // missing right
        };

        std::vector<int> list;
        for (int d = 0; d < 4; ++d) {
            int n = masked_at(r + dr[d], c + dc[d]);
            if (n < 0) {
                for (const auto& dd : diag_order[d]) {
                    n = masked_at(r + dd[0], c + dd[1]);
                    if (n >= 0) break;
                }
            }
            if (n < 0) {
                // nearest in-mask voxel, Euclidean, lowest id on ties
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < mask.ids.size(); ++j) {
                    if (j == i) continue;
                    const double drr = mask.row_of(mask.ids[j]) - r;
                    const double dcc = mask.col_of(mask.ids[j]) - c;
                    const double dist = drr * drr + dcc * dcc;
                    if (dist < best) {
                        best = dist;
                        n = static_cast<int>(j);
                    }
                }
            }
            if (n >= 0 && n != static_cast<int>(i) &&
                std::find(list.begin(), list.end(), n) == list.end()) {
                list.push_back(n);
            }
        }
        if (list.empty()) throw std::invalid_argument("masked voxel ended up with no neighbours");
        g.neighbors[i] = std::move(list);
    }

    for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
        for (int j : g.neighbors[i]) g.reverse[static_cast<std::size_t>(j)].push_back(static_cast<int>(i));
    }
    return g;
}

double log_likelihood(const KineticParams& params, double sigma2, const SampledCurve& curve,
                      const SampledCurve& aif, double hct) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
    std::vector<double> shifted, model;
    const double sse = sse_of(params, curve, aif, hct, shifted, model);
    return loglik_from_sse(sse, sigma2, curve.size());
}

std::array<double, 4> spatial_weights(const KineticParams& previous) {
    return {
        1.0 / std::max(std::abs(previous.f_b), kWeightFloor),
        1.0 / std::max(std::abs(previous.v_p), kWeightFloor),
        1.0 / std::max(std::abs(previous.v_e), kWeightFloor),
        1.0 / std::max(std::abs(previous.ps), kWeightFloor),
    };
}

double log_prior(const VoxelState& voxel, const std::vector<KineticParams>& neighbor_params,
                 const std::array<double, 4>& weights, const PriorSpec& spec) {
    const auto& p = voxel.params;
    for (int k = 0; k < kNumKinetic; ++k) {
        if (!in_support(k, get_param(p, k), spec)) return kNegInf;
    }
    if (!(voxel.sigma2 > 0.0)) return kNegInf;
    if (spec.hierarchical) {
        if (voxel.alpha_fb < spec.alpha_fb_bounds.lo || voxel.alpha_fb > spec.alpha_fb_bounds.hi) return kNegInf;
        if (voxel.alpha_ps < spec.alpha_ps_bounds.lo || voxel.alpha_ps > spec.alpha_ps_bounds.hi) return kNegInf;
    }

    double lp = 0.0;
    lp += log_gaussian(p.f_b, fb_prior_mean(voxel, spec), fb_prior_variance(spec));
    lp += log_gaussian(p.ps, ps_prior_mean(voxel, spec), ps_prior_variance(spec));
    lp += log_inv_gamma(voxel.sigma2, spec.noise_shape, spec.noise_scale);

    for (const auto& q : neighbor_params) {
        lp -= (weights[kFb] * std::abs(p.f_b - q.f_b) + weights[kVp] * std::abs(p.v_p - q.v_p) +
               weights[kVe] * std::abs(p.v_e - q.v_e) + weights[kPs] * std::abs(p.ps - q.ps)) /
              spec.spatial_scale;
    }
    return lp;
}

ChainState init_chain(const SamplerData& data, const PriorSpec& spec, Rng rng) {
    const auto n = data.curves.size();
    ChainState st;
    st.rng = rng;
    st.voxels.resize(n);
    st.scale.assign(n, {0.3, 0.03, 0.04, 0.2, 0.03, 0.3, 0.2});
    st.window_accept.assign(n, {});
    st.window_propose.assign(n, {});
    st.total_accept.assign(n, {});
    st.total_propose.assign(n, {});
    st.sse.assign(n, 0.0);
    st.loglik.assign(n, 0.0);

    std::vector<double> shifted, model;
    for (std::size_t v = 0; v < n; ++v) {
        auto& vox = st.voxels[v];
        vox.params.f_b = st.rng.uniform(spec.alpha_fb_bounds.lo, spec.alpha_fb_bounds.hi);
        vox.params.v_p = st.rng.uniform(0.0, spec.vp_max);
        vox.params.v_e = st.rng.uniform(0.0, spec.ve_max);
        vox.params.ps = st.rng.uniform(spec.alpha_ps_bounds.lo, spec.alpha_ps_bounds.hi);
        vox.params.tau0 = st.rng.uniform(0.0, spec.tau0_max);
        if (vox.params.v_p <= 0.0) vox.params.v_p = spec.vp_max * 0.5;
        if (vox.params.v_e <= 0.0) vox.params.v_e = spec.ve_max * 0.5;
        vox.alpha_fb = st.rng.uniform(spec.alpha_fb_bounds.lo, spec.alpha_fb_bounds.hi);
        vox.alpha_ps = st.rng.uniform(spec.alpha_ps_bounds.lo, spec.alpha_ps_bounds.hi);

        st.sse[v] = sse_of(vox.params, *data.curves[v], *data.aif, data.hct, shifted, model);
        vox.sigma2 = std::max(st.sse[v] / static_cast<double>(data.curves[v]->size()), 1e-12);
        st.loglik[v] = loglik_from_sse(st.sse[v], vox.sigma2, data.curves[v]->size());
    }
    return st;
}

void mh_sweep(ChainState& state, const SamplerData& data, const NeighborGraph& graph,
              const PriorSpec& spec, const SamplerOptions& opt) {
    const auto n = state.voxels.size();

    // weights for this sweep come from the pre-sweep state of each voxel
    // unless the state carries frozen weights
    if (!state.weights_frozen || state.weights.size() != n) {
        state.weights.resize(n);
        for (std::size_t v = 0; v < n; ++v) state.weights[v] = spatial_weights(state.voxels[v].params);
    }
    const auto& weights = state.weights;

    std::vector<double> shifted, model;

    auto spatial_delta = [&](std::size_t v, int k, double cur, double prop) {
        if (k >= 4) return 0.0;  // tau0 carries no spatial term
        double delta = 0.0;
        for (int j : graph.neighbors[v]) {
            const double nb = get_param(state.voxels[static_cast<std::size_t>(j)].params, k);
            delta -= weights[v][k] * (std::abs(prop - nb) - std::abs(cur - nb)) / spec.spatial_scale;
        }
        for (int j : graph.reverse[v]) {
            const double nb = get_param(state.voxels[static_cast<std::size_t>(j)].params, k);
            delta -= weights[static_cast<std::size_t>(j)][k] *
                     (std::abs(nb - prop) - std::abs(nb - cur)) / spec.spatial_scale;
        }
        return delta;
    };

    for (std::size_t v = 0; v < n; ++v) {
        auto& vox = state.voxels[v];
        const auto& curve = *data.curves[v];
        const auto n_samples = curve.size();

        for (int k = 0; k < kNumKinetic; ++k) {
            if (!opt.sample_param[static_cast<std::size_t>(k)]) continue;
            ++state.window_propose[v][k];
            ++state.total_propose[v][k];

            const double cur = get_param(vox.params, k);
            const double prop = cur + state.scale[v][k] * state.rng.normal();
            const double u = state.rng.uniform();
            if (!in_support(k, prop, spec)) continue;

            KineticParams cand = vox.params;
            set_param(cand, k, prop);
            if (cand.v_p + cand.v_e > 1.0) continue;

            const double cand_sse = sse_of(cand, curve, *data.aif, data.hct, shifted, model);
            const double cand_ll = loglik_from_sse(cand_sse, vox.sigma2, n_samples);

            double log_ratio = cand_ll - state.loglik[v] + spatial_delta(v, k, cur, prop);
            if (k == kFb) {
                const double m = fb_prior_mean(vox, spec), s2 = fb_prior_variance(spec);
                log_ratio += ((cur - m) * (cur - m) - (prop - m) * (prop - m)) / (2.0 * s2);
            } else if (k == kPs) {
                const double m = ps_prior_mean(vox, spec), s2 = ps_prior_variance(spec);
                log_ratio += ((cur - m) * (cur - m) - (prop - m) * (prop - m)) / (2.0 * s2);
            }

            if (log_ratio >= 0.0 || u < std::exp(log_ratio)) {
                vox.params = cand;
                state.sse[v] = cand_sse;
                state.loglik[v] = cand_ll;
                ++state.window_accept[v][k];
                ++state.total_accept[v][k];
            }
        }

        if (opt.sample_noise) {
            const double shape = spec.noise_shape + 0.5 * static_cast<double>(n_samples);
            const double scale = spec.noise_scale + 0.5 * state.sse[v];
            vox.sigma2 = state.rng.inv_gamma(shape, scale);
            state.loglik[v] = loglik_from_sse(state.sse[v], vox.sigma2, n_samples);
        }

        if (opt.sample_hyper && spec.hierarchical) {
            // alpha_fb: truncated-Gaussian conditional via random walk
            {
                ++state.window_propose[v][kAlphaFb];
                ++state.total_propose[v][kAlphaFb];
                const double prop = vox.alpha_fb + state.scale[v][kAlphaFb] * state.rng.normal();
                const double u = state.rng.uniform();
                if (prop >= spec.alpha_fb_bounds.lo && prop <= spec.alpha_fb_bounds.hi) {
                    const double s2 = spec.fb_variance;
                    const double cur = vox.alpha_fb;
                    const double log_ratio =
                        ((vox.params.f_b - cur) * (vox.params.f_b - cur) -
                         (vox.params.f_b - prop) * (vox.params.f_b - prop)) / (2.0 * s2);
                    if (log_ratio >= 0.0 || u < std::exp(log_ratio)) {
                        vox.alpha_fb = prop;
                        ++state.window_accept[v][kAlphaFb];
                        ++state.total_accept[v][kAlphaFb];
                    }
                }
            }
            {
                ++state.window_propose[v][kAlphaPs];
                ++state.total_propose[v][kAlphaPs];
                const double prop = vox.alpha_ps + state.scale[v][kAlphaPs] * state.rng.normal();
                const double u = state.rng.uniform();
                if (prop >= spec.alpha_ps_bounds.lo && prop <= spec.alpha_ps_bounds.hi) {
                    const double s2 = spec.ps_variance;
                    const double cur = vox.alpha_ps;
                    const double log_ratio =
                        ((vox.params.ps - cur) * (vox.params.ps - cur) -
                         (vox.params.ps - prop) * (vox.params.ps - prop)) / (2.0 * s2);
                    if (log_ratio >= 0.0 || u < std::exp(log_ratio)) {
                        vox.alpha_ps = prop;
                        ++state.window_accept[v][kAlphaPs];
                        ++state.total_accept[v][kAlphaPs];
                    }
                }
            }
        }
    }
    ++state.step;
}

void tune_proposals(ChainState& state, double target_accept, double kappa) {
    for (std::size_t v = 0; v < state.voxels.size(); ++v) {
        for (int k = 0; k < kNumProposal; ++k) {
            const int proposed = state.window_propose[v][k];
            if (proposed == 0) continue;
            const double rate = static_cast<double>(state.window_accept[v][k]) / proposed;
            state.scale[v][k] *= std::exp(kappa * (rate - target_accept));
            state.window_accept[v][k] = 0;
            state.window_propose[v][k] = 0;
        }
    }
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
    if (chains.size() < 2) throw std::invalid_argument("gelman_rubin needs at least 2 chains");
    const std::size_t n = chains.front().size();
    if (n < 10) throw std::invalid_argument("gelman_rubin needs chains of length >= 10");
    for (const auto& c : chains) {
        if (c.size() != n) throw std::invalid_argument("gelman_rubin needs equal-length chains");
    }

    const auto m = chains.size();
    std::vector<double> means(m);
    double w = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
        double mu = 0.0;
        for (double x : chains[c]) mu += x;
        mu /= static_cast<double>(n);
        means[c] = mu;
        double var = 0.0;
        for (double x : chains[c]) var += (x - mu) * (x - mu);
        w += var / static_cast<double>(n - 1);
    }
    w /= static_cast<double>(m);

    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= static_cast<double>(m);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= static_cast<double>(n) / static_cast<double>(m - 1);

    const double nn = static_cast<double>(n);
    const double vhat = (nn - 1.0) / nn * w + b / nn;
    if (w <= 0.0) return vhat <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(vhat / w);
}

PosteriorSummary posterior_summary(const std::vector<ChainHistory>& chains, int burn_in,
                                   const std::vector<int>& voxel_ids) {
    if (chains.empty()) throw std::invalid_argument("no chains");
    const int n_steps = chains.front().n_steps;
    const int n_vox = chains.front().n_voxels;
    if (burn_in >= n_steps) throw std::invalid_argument("chain length must exceed burn_in");

    PosteriorSummary s;
    s.voxel_ids = voxel_ids;
    s.median.resize(static_cast<std::size_t>(n_vox));
    s.mean.resize(static_cast<std::size_t>(n_vox));
    s.stddev.resize(static_cast<std::size_t>(n_vox));
    s.cov.resize(static_cast<std::size_t>(n_vox));

    std::vector<double> pool;
    pool.reserve(chains.size() * static_cast<std::size_t>(n_steps - burn_in));
    for (int v = 0; v < n_vox; ++v) {
        for (int k = 0; k < kNumKinetic; ++k) {
            pool.clear();
            for (const auto& ch : chains) {
                for (int t = burn_in; t < n_steps; ++t) pool.push_back(ch.at(t, v, k));
            }
            double mu = 0.0;
            for (double x : pool) mu += x;
            mu /= static_cast<double>(pool.size());
            double var = 0.0;
            for (double x : pool) var += (x - mu) * (x - mu);
            var = pool.size() > 1 ? var / static_cast<double>(pool.size() - 1) : 0.0;

            const auto mid = pool.size() / 2;
            std::nth_element(pool.begin(), pool.begin() + static_cast<long>(mid), pool.end());
            double med = pool[mid];
            if (pool.size() % 2 == 0) {
                const double lo = *std::max_element(pool.begin(), pool.begin() + static_cast<long>(mid));
                med = 0.5 * (lo + med);
            }

            const auto vv = static_cast<std::size_t>(v);
            s.median[vv][static_cast<std::size_t>(k)] = med;
            s.mean[vv][static_cast<std::size_t>(k)] = mu;
            s.stddev[vv][static_cast<std::size_t>(k)] = std::sqrt(var);
            s.cov[vv][static_cast<std::size_t>(k)] = mu != 0.0 ? std::sqrt(var) / mu : 0.0;
        }
    }
    return s;
}

namespace {

// Deterministic per-voxel warm start: multistart local descent over the
// prior supports (plus a coarse scan candidate), keeping the lowest
// misfit. Chains share this point and decorrelate through their proposal
// streams; a uniform draw over the supports cannot reach the posterior
// mode within the configured chain length (the noise variance locks onto
// the initial misfit and the single-site walk then crawls along the
// flow/volume ridge).
KineticParams warm_start(const SampledCurve& curve, const SampledCurve& aif, double hct,
                         const PriorSpec& spec, std::uint64_t seed) {
    const double fb_hi = spec.alpha_fb_bounds.hi;
    const double ps_hi = spec.alpha_ps_bounds.hi;

    FitBounds support_box;
    support_box.f_b = {1e-3, fb_hi};
    support_box.v_p = {1e-3 * spec.vp_max, spec.vp_max};
    support_box.v_e = {1e-3 * spec.ve_max, spec.ve_max};
    support_box.ps = {1e-3, ps_hi};
    const Interval tau_box{0.0, spec.tau0_max};

    KineticParams scan{};
    double scan_cost = std::numeric_limits<double>::infinity();
    for (double ffb : {0.05, 0.15, 0.27, 0.41, 0.55, 0.70, 0.84, 0.97}) {
        for (double fvp : {0.10, 0.30, 0.55, 0.80}) {
            for (double fve : {0.10, 0.30, 0.55, 0.80}) {
                for (double fps : {0.06, 0.20, 0.45, 0.70, 0.95}) {
                    for (double ftau : {0.05, 0.25, 0.50, 0.75}) {
                        const KineticParams p{ffb * fb_hi, fvp * spec.vp_max, fve * spec.ve_max,
                                              fps * ps_hi, ftau * spec.tau0_max};
                        const double c = chi_squared(p, curve, aif, hct);
                        if (c < scan_cost) {
                            scan_cost = c;
                            scan = p;
                        }
                    }
                }
            }
        }
    }

    auto best = fit_local(curve, aif, support_box, tau_box, hct, scan);
    constexpr int kWarmStarts = 16;
    for (int k = 0; k < kWarmStarts; ++k) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(k));
        const KineticParams start{rng.uniform(support_box.f_b.lo, support_box.f_b.hi),
                                  rng.uniform(support_box.v_p.lo, support_box.v_p.hi),
                                  rng.uniform(support_box.v_e.lo, support_box.v_e.hi),
                                  rng.uniform(support_box.ps.lo, support_box.ps.hi),
                                  rng.uniform(tau_box.lo, tau_box.hi)};
        const auto fit = fit_local(curve, aif, support_box, tau_box, hct, start);
        if (fit.cost < best.cost) best = fit;
    }
    return best.cost <= scan_cost ? best.params : scan;
}

} // namespace

BayesResult run_chain(const NoisySeries& series, const VoxelMask& mask, const PriorSpec& spec,
                      const SamplerOptions& opt) {
    spec.validate();
    opt.validate();
    mask.validate();

    if (opt.n_chains < 2) throw std::invalid_argument("run_chain needs at least 2 chains for the R-hat diagnostic");

    BayesResult result;
    result.voxel_ids = mask.ids;
    if (mask.ids.empty()) return result;

    SamplerData data;
    data.aif = &series.aif;
    data.hct = opt.hct;
    for (int id : mask.ids) {
        if (static_cast<std::size_t>(id) >= series.voxels.size() ||
            series.voxels[static_cast<std::size_t>(id)].size() == 0)
            throw std::invalid_argument("masked voxel has no curve");
        data.curves.push_back(&series.voxels[static_cast<std::size_t>(id)]);
    }

    const NeighborGraph graph = build_neighbor_graph(mask);
    const auto n_vox = static_cast<int>(mask.ids.size());

    // Warm start around the pooled-data optimum: individually fitted
    // voxels scatter along the flat flow/volume ridge and the spatial
    // coupling relaxes such a field only over many thousands of sweeps.
    // The fit of the mean curve (same argmin as the pooled misfit, ridge
    // directions sharpened by the voxel count) anchors every voxel whose
    // own data is consistent with it; voxels whose data rejects the
    // consensus by a clear likelihood ratio (perfusion defects) keep
    // their individual fit.
    SampledCurve mean_curve;
    mean_curve.times = data.curves.front()->times;
    mean_curve.values.assign(mean_curve.times.size(), 0.0);
    for (const auto* c : data.curves) {
        for (std::size_t i = 0; i < mean_curve.values.size(); ++i) mean_curve.values[i] += c->values[i];
    }
    for (double& v : mean_curve.values) v /= static_cast<double>(n_vox);
    const auto consensus =
        warm_start(mean_curve, series.aif, data.hct, spec,
                   Rng::derive(opt.seed, stream_tag::make(stream_tag::warm, 0)));

    std::vector<KineticParams> warm(static_cast<std::size_t>(n_vox), consensus);
    parallel_for(n_vox, opt.n_threads, [&](int v) {
        const auto& curve = *data.curves[static_cast<std::size_t>(v)];
        const auto voxel_seed = Rng::derive(
            opt.seed, stream_tag::make(stream_tag::warm,
                                       1 + static_cast<std::uint64_t>(mask.ids[static_cast<std::size_t>(v)])));
        const auto own = warm_start(curve, series.aif, data.hct, spec, voxel_seed);
        const double own_cost = chi_squared(own, curve, series.aif, data.hct);
        const double consensus_cost = chi_squared(consensus, curve, series.aif, data.hct);
        const double n_samples = static_cast<double>(curve.size());
        const double log_ratio =
            n_samples * (consensus_cost - own_cost) / (2.0 * std::max(own_cost, 1e-300));
        if (log_ratio > 10.0) warm[static_cast<std::size_t>(v)] = own;
    });

    // The chains share one initial state: the warm points settled into the
    // spatial-prior consensus by a preliminary tuned run. The settling
    // sweeps are not part of any chain; chains decorrelate through their
    // own proposal streams afterwards.
    ChainState settled =
        init_chain(data, spec, Rng::substream(opt.seed, stream_tag::make(stream_tag::settle, 0)));
    for (std::size_t v = 0; v < warm.size(); ++v) {
        auto& vox = settled.voxels[v];
        vox.params = warm[v];
        vox.alpha_fb = std::clamp(warm[v].f_b, spec.alpha_fb_bounds.lo, spec.alpha_fb_bounds.hi);
        vox.alpha_ps = std::clamp(warm[v].ps, spec.alpha_ps_bounds.lo, spec.alpha_ps_bounds.hi);
        settled.sse[v] = chi_squared(vox.params, *data.curves[v], series.aif, data.hct) *
                         static_cast<double>(data.curves[v]->size());
        vox.sigma2 = std::max(settled.sse[v] / static_cast<double>(data.curves[v]->size()), 1e-12);
        settled.loglik[v] = loglik_from_sse(settled.sse[v], vox.sigma2, data.curves[v]->size());
    }
    for (int t = 0; t < opt.settle_sweeps; ++t) {
        mh_sweep(settled, data, graph, spec, opt);
        if ((t + 1) % opt.tune_window == 0) tune_proposals(settled, opt.target_accept, opt.tune_kappa);
    }
    for (auto& a : settled.window_accept) a.fill(0);
    for (auto& a : settled.window_propose) a.fill(0);
    for (auto& a : settled.total_accept) a.fill(0);
    for (auto& a : settled.total_propose) a.fill(0);
    settled.step = 0;
    // freeze the spatial weights at the settled field so every chain
    // targets one fixed posterior
    settled.weights.resize(warm.size());
    for (std::size_t v = 0; v < warm.size(); ++v)
        settled.weights[v] = spatial_weights(settled.voxels[v].params);
    settled.weights_frozen = true;

    result.chains.resize(static_cast<std::size_t>(opt.n_chains));
    std::vector<ChainState> final_states(static_cast<std::size_t>(opt.n_chains),
                                         ChainState{});

    parallel_for(opt.n_chains, opt.n_threads, [&](int c) {
        ChainState st = settled;
        st.rng = Rng::substream(opt.seed, stream_tag::make(stream_tag::chain, static_cast<std::uint64_t>(c)));
        auto& hist = result.chains[static_cast<std::size_t>(c)];
        hist.n_steps = opt.n_steps;
        hist.n_voxels = n_vox;
        hist.data.resize(static_cast<std::size_t>(opt.n_steps) * n_vox * 8);

        for (int t = 0; t < opt.n_steps; ++t) {
            mh_sweep(st, data, graph, spec, opt);
            if (t < opt.burn_in && (t + 1) % opt.tune_window == 0) {
                tune_proposals(st, opt.target_accept, opt.tune_kappa);
                if (t + 1 == opt.burn_in) {
                    // counters restart so reported rates are post-burn-in only
                    for (auto& a : st.total_accept) a.fill(0);
                    for (auto& a : st.total_propose) a.fill(0);
                }
            } else if (t + 1 == opt.burn_in) {
                for (auto& a : st.total_accept) a.fill(0);
                for (auto& a : st.total_propose) a.fill(0);
            }
            for (int v = 0; v < n_vox; ++v) {
                const auto& vox = st.voxels[static_cast<std::size_t>(v)];
                double* rec = &hist.data[(static_cast<std::size_t>(t) * n_vox + v) * 8];
                rec[0] = vox.params.f_b;
                rec[1] = vox.params.v_p;
                rec[2] = vox.params.v_e;
                rec[3] = vox.params.ps;
                rec[4] = vox.params.tau0;
                rec[5] = vox.sigma2;
                rec[6] = vox.alpha_fb;
                rec[7] = vox.alpha_ps;
            }
        }
        final_states[static_cast<std::size_t>(c)] = std::move(st);
    });

    result.summary = posterior_summary(result.chains, opt.burn_in, mask.ids);

    // R-hat per voxel-parameter over the post-burn-in segments
    result.rhat.resize(static_cast<std::size_t>(n_vox));
    result.converged = true;
    std::vector<std::vector<double>> per_chain(static_cast<std::size_t>(opt.n_chains));
    for (int v = 0; v < n_vox; ++v) {
        for (int k = 0; k < kNumKinetic; ++k) {
            for (int c = 0; c < opt.n_chains; ++c) {
                auto& seg = per_chain[static_cast<std::size_t>(c)];
                seg.clear();
                for (int t = opt.burn_in; t < opt.n_steps; ++t)
                    seg.push_back(result.chains[static_cast<std::size_t>(c)].at(t, v, k));
            }
            const double r = gelman_rubin(per_chain);
            result.rhat[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)] = r;
            if (!(r <= 1.1)) result.converged = false;
        }
    }

    // pooled post-burn-in acceptance rates across chains
    result.accept_rate.assign(static_cast<std::size_t>(n_vox), {});
    for (int v = 0; v < n_vox; ++v) {
        for (int k = 0; k < kNumProposal; ++k) {
            long acc = 0, prop = 0;
            for (const auto& st : final_states) {
                acc += st.total_accept[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)];
                prop += st.total_propose[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)];
            }
            result.accept_rate[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)] =
                prop > 0 ? static_cast<double>(acc) / static_cast<double>(prop) : 0.0;
        }
    }
    return result;
}

} // namespace perfusion
