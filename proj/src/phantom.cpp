// phantom.cpp

#include "perfusion/phantom.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "perfusion/rng.hpp"

namespace perfusion {

Scenario scenario_from_string(const std::string& s) {
    if (s == "rest") return Scenario::Rest;
    if (s == "stress") return Scenario::Stress;
    if (s == "ischaemia") return Scenario::Ischaemia;
    throw std::invalid_argument("unknown scenario '" + s + "' (expected rest, stress or ischaemia)");
}

std::string to_string(Scenario s) {
    switch (s) {
    case Scenario::Rest: return "rest";
    case Scenario::Stress: return "stress";
    case Scenario::Ischaemia: return "ischaemia";
    }
    return "?";
}

double default_dt(Scenario s) {
    return s == Scenario::Rest ? 0.017 : 0.012;
}

GroundTruthPhantom build_phantom(Scenario s) {
    GroundTruthPhantom ph;
    ph.scenario = s;

    KineticParams healthy;
    healthy.f_b = s == Scenario::Rest ? 1.0 : 3.5;
    healthy.v_p = 0.08;
    healthy.v_e = 0.16;
    healthy.ps = 1.0;
    healthy.tau0 = 0.1;

    ph.voxels.assign(static_cast<std::size_t>(ph.width) * ph.height, healthy);

    if (s == Scenario::Ischaemia) {
        // two 2x2 defect blocks at opposite corners
        const int w = ph.width, h = ph.height;
        ph.defect = {0, 1, w, w + 1,
                     (h - 2) * w + (w - 2), (h - 2) * w + (w - 1),
                     (h - 1) * w + (w - 2), (h - 1) * w + (w - 1)};
        for (int id : ph.defect) ph.voxels[static_cast<std::size_t>(id)].f_b = 1.0;
    }
    return ph;
}

NoisySeries simulate_series(const GroundTruthPhantom& phantom, const std::vector<double>& grid,
                            double snr, std::uint64_t seed, double hct, const AifSpec& aif_spec,
                            double baseline_snr) {
    if (!(snr > 0.0)) throw std::invalid_argument("snr must be positive");
    if (baseline_snr < 0.0) throw std::invalid_argument("baseline_snr must be non-negative");

    NoisySeries out;
    out.seed = seed;
    out.aif = gamma_variate_aif(grid, aif_spec.peak, aif_spec.onset, aif_spec.shape, aif_spec.scale);

    const auto n_vox = phantom.voxels.size();
    out.voxels.resize(n_vox);
    double peak = 0.0;
    for (std::size_t v = 0; v < n_vox; ++v) {
        out.voxels[v] = forward_model(phantom.voxels[v], out.aif, grid, hct);
        for (double c : out.voxels[v].values) peak = std::max(peak, c);
    }

    out.sigma = std::isinf(snr) ? 0.0 : peak / snr;
    out.baseline = baseline_snr * out.sigma;
    if (out.sigma > 0.0) {
        for (std::size_t v = 0; v < n_vox; ++v) {
            Rng rng = Rng::substream(seed, stream_tag::make(stream_tag::noise, v));
            for (double& c : out.voxels[v].values) {
                const double n1 = out.sigma * rng.normal();
                const double n2 = out.sigma * rng.normal();
                const double m = c + out.baseline + n1;
                c = std::sqrt(m * m + n2 * n2) - out.baseline;
            }
        }
    }
    return out;
}

} // namespace perfusion
