// io.hpp
//
// File formats shared by the CLI and the evaluation harness. All writers
// emit deterministic row order (voxel id ascending, time index ascending)
// and floating point with 9 significant digits, locale independent, so
// outputs are reproducible byte for byte.
//
//   aif.csv     t_index,time_min,conc_mM
//   curves.csv  voxel_id,t_index,time_min,conc_mM
//   mask.csv    voxel_id,row,col
//   truth.csv / maps.csv
//               voxel_id,row,col,f_b,v_p,v_e,ps,tau0,status   (ok|failed|truth)
//   cov.csv     voxel_id,cov_f_b,cov_v_p,cov_v_e,cov_ps,cov_tau0
//   rhat.csv    voxel_id,rhat_f_b,rhat_v_p,rhat_v_e,rhat_ps,rhat_tau0

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "perfusion/analysis.hpp"
#include "perfusion/bayes.hpp"
#include "perfusion/curve.hpp"
#include "perfusion/kinetics.hpp"
#include "perfusion/nlls.hpp"
#include "perfusion/phantom.hpp"

namespace perfusion {

class csv_parse_error : public std::runtime_error {
public:
    csv_parse_error(const std::string& path, int line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), path_(path), line_(line) {}
    const std::string& path() const { return path_; }
    int line() const { return line_; }

private:
    std::string path_;
    int line_;
};

class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// %.9g, C locale
std::string fmt_double(double v);

struct ParamRow {
    int voxel_id = 0;
    int row = 0;
    int col = 0;
    KineticParams params;
    std::string status;  // ok | failed | truth
};

void write_aif_csv(const std::string& path, const SampledCurve& aif);
SampledCurve read_aif_csv(const std::string& path);

void write_curves_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<SampledCurve>& curves);
// returns curves indexed by voxel id (empty curve = absent voxel)
std::vector<SampledCurve> read_curves_csv(const std::string& path);

// same long layout with value column "signal" (arbitrary units)
void write_signal_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<SampledCurve>& curves);
std::vector<SampledCurve> read_signal_csv(const std::string& path);

void write_mask_csv(const std::string& path, const VoxelMask& mask);
// width/height restored from the row/col extent
VoxelMask read_mask_csv(const std::string& path);

void write_params_csv(const std::string& path, const std::vector<ParamRow>& rows);
std::vector<ParamRow> read_params_csv(const std::string& path);

void write_stat_map_csv(const std::string& path, const std::string& stat_prefix,
                        const std::vector<int>& voxel_ids,
                        const std::vector<std::array<double, kNumKinetic>>& values);

void write_nmse_report_csv(const std::string& path, const NmseReport& report);

// one record per (chain, step, voxel): all sampled quantities
void write_chains_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<ChainHistory>& chains);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace perfusion
