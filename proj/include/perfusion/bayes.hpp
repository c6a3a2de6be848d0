// bayes.hpp
//
// Hierarchical Bayesian estimator: single-site Metropolis-Hastings over the
// per-voxel kinetic parameters with per-voxel hyperparameters, conjugate
// Gibbs updates of the noise variances and an edge-preserving Laplace
// spatial prior over the myocardial neighbour graph. Proposal scales adapt
// toward a 0.234 acceptance rate during burn-in and are frozen afterwards.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "perfusion/curve.hpp"
#include "perfusion/kinetics.hpp"
#include "perfusion/phantom.hpp"
#include "perfusion/rng.hpp"

namespace perfusion {

// indices of the sampled scalars of one voxel
enum ParamIndex : int {
    kFb = 0,
    kVp = 1,
    kVe = 2,
    kPs = 3,
    kTau0 = 4,
    kNumKinetic = 5,       // f_b, v_p, v_e, ps, tau0
    kAlphaFb = 5,
    kAlphaPs = 6,
    kNumProposal = 7       // MH-updated scalars per voxel
};

struct PriorSpec {
    // Gaussian priors on the flows, truncated to positive values
    double fb_variance = 0.2;
    double ps_variance = 0.1;
    // uniform supports
    double vp_max = 0.4;   // v_p in (0, vp_max]
    double ve_max = 0.5;   // v_e in (0, ve_max]
    double tau0_max = 0.5; // tau0 in [0, tau0_max], minutes
    // noise variance ~ inverse-gamma(c, d)
    double noise_shape = 0.001;
    double noise_scale = 0.001;
    // Laplace spatial prior scale
    double spatial_scale = 0.2;
    // hyperprior supports for the Gaussian means
    Interval alpha_fb_bounds{0.001, 7.0};
    Interval alpha_ps_bounds{0.001, 5.0};
    // non-hierarchical mode: fixed prior means and variances
    bool hierarchical = true;
    double fixed_fb_mean = 3.5;
    double fixed_fb_variance = 0.2;
    double fixed_ps_mean = 1.0;
    double fixed_ps_variance = 0.2;

    void validate() const;
};

struct SamplerOptions {
    int n_steps = 4000;
    int burn_in = 1000;
    int n_chains = 2;
    std::uint64_t seed = 1;
    double hct = 0.0;
    int n_threads = 0;            // chains run in parallel; 0 = hardware
    int tune_window = 50;         // sweeps between proposal adaptations
    double tune_kappa = 1.0;
    double target_accept = 0.234;
    int settle_sweeps = 1500;     // shared pre-chain sweeps from the warm start
    bool sample_noise = true;     // Gibbs-update sigma2 (tests may freeze it)
    bool sample_hyper = true;     // MH-update the hyperparameters
    std::array<bool, kNumKinetic> sample_param{true, true, true, true, true};

    void validate() const;
};

// Per masked voxel, an ordered neighbour list. 4-neighbours inside the
// mask; a missing 4-neighbour falls back to an in-mask diagonal, else the
// nearest in-mask voxel, so fallback edges may be directed.
struct NeighborGraph {
    std::vector<int> voxel_ids;                  // ascending
    std::vector<std::vector<int>> neighbors;     // indices into voxel_ids
    std::vector<std::vector<int>> reverse;       // j lists i when i has j as neighbour

    std::size_t size() const { return voxel_ids.size(); }
};

NeighborGraph build_neighbor_graph(const VoxelMask& mask);

// Per-voxel sampler state.
struct VoxelState {
    KineticParams params;
    double sigma2 = 1.0;
    double alpha_fb = 3.5;
    double alpha_ps = 1.0;
};

struct ChainState {
    std::vector<VoxelState> voxels;                       // mask order
    std::vector<std::array<double, kNumProposal>> scale;  // proposal sd
    std::vector<std::array<int, kNumProposal>> window_accept;
    std::vector<std::array<int, kNumProposal>> window_propose;
    std::vector<std::array<long, kNumProposal>> total_accept;
    std::vector<std::array<long, kNumProposal>> total_propose;
    std::vector<double> sse;     // cached per-voxel sum of squared residuals
    std::vector<double> loglik;  // cached per-voxel log-likelihood
    // spatial difference weights; recomputed from the previous sweep's
    // state unless frozen (frozen weights make the sweep a fixed-kernel MH,
    // mirroring the post-burn-in proposal-scale freeze)
    std::vector<std::array<double, 4>> weights;
    bool weights_frozen = false;
    int step = 0;
    Rng rng{0};
};

// Data the sampler conditions on.
struct SamplerData {
    const SampledCurve* aif = nullptr;
    std::vector<const SampledCurve*> curves;  // mask order
    double hct = 0.0;
};

// Gaussian log-likelihood of one voxel curve under the model.
double log_likelihood(const KineticParams& params, double sigma2, const SampledCurve& curve,
                      const SampledCurve& aif, double hct);

// Spatial difference weights from the previous sample of the voxel's own
// kinetic parameters: W_k = 1 / max(|theta_k|, 1e-3).
std::array<double, 4> spatial_weights(const KineticParams& previous);

// Full per-voxel log prior: truncated Gaussians on f_b and PS, uniform
// supports for v_p, v_e, tau0, inverse-gamma density for sigma2 and the
// Laplace spatial term over the voxel's own neighbour list (tau0 excluded
// from the spatial term). Returns -inf on any support violation.
double log_prior(const VoxelState& voxel, const std::vector<KineticParams>& neighbor_params,
                 const std::array<double, 4>& weights, const PriorSpec& spec);

ChainState init_chain(const SamplerData& data, const PriorSpec& spec, Rng rng);

// One sweep: visits voxels in ascending id order, proposes each kinetic
// parameter one at a time (acceptance uses the likelihood, the voxel
// prior and the neighbour-side spatial terms), Gibbs-draws sigma2 from
// inverse-gamma(c + N/2, d + SSE/2), then random-walk updates the
// hyperparameters within their uniform supports.
void mh_sweep(ChainState& state, const SamplerData& data, const NeighborGraph& graph,
              const PriorSpec& spec, const SamplerOptions& opt);

// Robbins-Monro style adaptation: scale <- scale * exp(kappa*(rate - target))
// per voxel-parameter over the last window; resets window counters.
void tune_proposals(ChainState& state, double target_accept, double kappa);

// Everything recorded about one chain: [step][voxel][field] with fields
// f_b, v_p, v_e, ps, tau0, sigma2, alpha_fb, alpha_ps.
struct ChainHistory {
    int n_steps = 0;
    int n_voxels = 0;
    std::vector<double> data;

    double at(int step, int voxel, int field) const {
        return data[(static_cast<std::size_t>(step) * n_voxels + voxel) * 8 + field];
    }
};

struct PosteriorSummary {
    std::vector<int> voxel_ids;
    // per voxel, per kinetic parameter (f_b, v_p, v_e, ps, tau0)
    std::vector<std::array<double, kNumKinetic>> median;
    std::vector<std::array<double, kNumKinetic>> mean;
    std::vector<std::array<double, kNumKinetic>> stddev;
    std::vector<std::array<double, kNumKinetic>> cov;  // stddev / mean
};

// Potential scale reduction sqrt(((n-1)/n W + B/n)/W) over >= 2 chains of
// equal length >= 10. Returns +inf when the within-chain variance is 0 and
// the chains disagree.
double gelman_rubin(const std::vector<std::vector<double>>& chains);

// Pooled post-burn-in median/mean/stddev/cov per voxel-parameter.
PosteriorSummary posterior_summary(const std::vector<ChainHistory>& chains, int burn_in,
                                   const std::vector<int>& voxel_ids);

struct BayesResult {
    std::vector<int> voxel_ids;
    std::vector<ChainHistory> chains;
    PosteriorSummary summary;
    std::vector<std::array<double, kNumKinetic>> rhat;          // per voxel
    std::vector<std::array<double, kNumProposal>> accept_rate;  // post-burn-in
    bool converged = true;  // all rhat <= 1.1
};

// Runs n_chains independent chains (substreams of (seed, chain)) over the
// masked voxels, adapting proposals during burn-in only, and summarizes
// the pooled post-burn-in samples. Each chain starts from a deterministic
// per-voxel warm point (coarse support scan plus one local descent);
// chains decorrelate through their proposal streams. Emits a convergence
// warning flag, not an error, when any R-hat exceeds 1.1.
BayesResult run_chain(const NoisySeries& series, const VoxelMask& mask, const PriorSpec& spec,
                      const SamplerOptions& opt);

} // namespace perfusion
