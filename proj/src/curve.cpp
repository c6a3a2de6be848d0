// curve.cpp

#include "perfusion/curve.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace perfusion {

void SampledCurve::validate() const {
    if (times.size() < 2) throw std::invalid_argument("curve needs at least 2 samples");
    if (times.size() != values.size()) throw std::invalid_argument("curve times/values length mismatch");
    const double step = times[1] - times[0];
    if (!(step > 0.0)) throw std::invalid_argument("curve time grid must be strictly increasing");
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double d = times[i] - times[i - 1];
        if (std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step)))
            throw std::invalid_argument("curve time grid must be uniform");
    }
}

std::vector<double> make_time_grid(double dt, double total_time) {
    if (!(dt > 0.0) || total_time < dt) throw std::invalid_argument("bad time grid: need dt > 0 and total_time >= dt");
    const auto n = static_cast<std::size_t>(std::floor(total_time / dt)) + 1;
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) * dt;
    return t;
}

bool grids_match(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > 1e-9 * std::max(1.0, std::abs(b[i]))) return false;
    }
    return true;
}

double interp_at(const std::vector<double>& times, const std::vector<double>& values, double t) {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const double dt = times[1] - times[0];
    auto i = static_cast<std::size_t>((t - times.front()) / dt);
    if (i >= times.size() - 1) i = times.size() - 2;
    // guard against index off-by-one from floating point division
    while (i > 0 && times[i] > t) --i;
    while (i + 2 < times.size() && times[i + 1] < t) ++i;
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    return values[i] * (1.0 - w) + values[i + 1] * w;
}

bool VoxelMask::contains(int id) const {
    return std::binary_search(ids.begin(), ids.end(), id);
}

void VoxelMask::validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("mask dimensions must be positive");
    if (!std::is_sorted(ids.begin(), ids.end())) throw std::invalid_argument("mask ids must be sorted");
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("mask ids must be unique");
    for (int id : ids) {
        if (id < 0 || id >= width * height) throw std::invalid_argument("mask id outside lattice");
    }
}

VoxelMask full_mask(int width, int height) {
    VoxelMask m;
    m.width = width;
    m.height = height;
    m.ids.resize(static_cast<std::size_t>(width) * height);
    for (int i = 0; i < width * height; ++i) m.ids[static_cast<std::size_t>(i)] = i;
    return m;
}

} // namespace perfusion
