// curve.hpp
//
// Uniformly sampled concentration-time curves (minutes / mM) shared by the
// whole toolkit, plus the voxel mask describing which lattice sites carry
// data.

#pragma once

#include <cstddef>
#include <vector>

namespace perfusion {

// Closed interval, used for fit bounds and prior supports.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Time grid (strictly increasing, uniform) paired with concentration values.
struct SampledCurve {
    std::vector<double> times;   // minutes
    std::vector<double> values;  // mM

    std::size_t size() const { return times.size(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }

    // throws std::invalid_argument on length < 2, length mismatch or
    // non-uniform spacing (tolerance 1e-9 relative)
    void validate() const;
};

// times 0, dt, 2*dt, ..., floor(total_time/dt)*dt
std::vector<double> make_time_grid(double dt, double total_time);

// true if both grids have equal length and match within 1e-9 relative
bool grids_match(const std::vector<double>& a, const std::vector<double>& b);

// Linear interpolation, clamped flat beyond the first/last sample.
double interp_at(const std::vector<double>& times, const std::vector<double>& values, double t);
inline double interp_at(const SampledCurve& c, double t) { return interp_at(c.times, c.values, t); }

// Set of voxels on a width x height lattice, ids sorted ascending
// (id = row * width + col).
struct VoxelMask {
    int width = 0;
    int height = 0;
    std::vector<int> ids;

    int row_of(int id) const { return id / width; }
    int col_of(int id) const { return id % width; }
    bool contains(int id) const;
    void validate() const;
};

VoxelMask full_mask(int width, int height);

} // namespace perfusion
