// io.cpp

#include "perfusion/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace perfusion {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

struct CsvReader {
    std::string path;
    std::ifstream in;
    int line_no = 0;

    explicit CsvReader(const std::string& p) : path(p), in(p) {
        if (!in) throw io_error("cannot open " + p + " for reading");
    }

    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            fields = split_line(line);
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const { throw csv_parse_error(path, line_no, what); }

    void expect_header(const std::string& header) {
        std::vector<std::string> fields;
        if (!next(fields)) fail("missing header (expected '" + header + "')");
        std::string joined;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) joined += ',';
            joined += fields[i];
        }
        if (joined != header) fail("bad header '" + joined + "' (expected '" + header + "')");
    }

    double num(const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) fail("trailing characters in number '" + s + "'");
            return v;
        } catch (const csv_parse_error&) {
            throw;
        } catch (const std::exception&) {
            fail("not a number: '" + s + "'");
        }
    }

    int integer(const std::string& s) {
        try {
            std::size_t pos = 0;
            const int v = std::stoi(s, &pos);
            if (pos != s.size()) fail("trailing characters in integer '" + s + "'");
            return v;
        } catch (const csv_parse_error&) {
            throw;
        } catch (const std::exception&) {
            fail("not an integer: '" + s + "'");
        }
    }
};

struct CsvWriter {
    std::string path;
    std::ofstream out;

    explicit CsvWriter(const std::string& p) : path(p), out(p, std::ios::binary) {
        if (!out) throw io_error("cannot open " + p + " for writing");
    }
    void line(const std::string& l) { out << l << '\n'; }
    ~CsvWriter() {
        out.flush();
    }
};

} // namespace

void write_aif_csv(const std::string& path, const SampledCurve& aif) {
    CsvWriter w(path);
    w.line("t_index,time_min,conc_mM");
    for (std::size_t i = 0; i < aif.size(); ++i) {
        w.line(std::to_string(i) + "," + fmt_double(aif.times[i]) + "," + fmt_double(aif.values[i]));
    }
    if (!w.out) throw io_error("write failed: " + path);
}

SampledCurve read_aif_csv(const std::string& path) {
    CsvReader r(path);
    r.expect_header("t_index,time_min,conc_mM");
    SampledCurve c;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 3) r.fail("expected 3 fields");
        const int idx = r.integer(f[0]);
        if (idx != static_cast<int>(c.times.size())) r.fail("t_index out of order");
        c.times.push_back(r.num(f[1]));
        c.values.push_back(r.num(f[2]));
    }
    c.validate();
    return c;
}

namespace {

void write_long_csv(const std::string& path, const std::string& header,
                    const std::vector<int>& voxel_ids, const std::vector<SampledCurve>& curves) {
    CsvWriter w(path);
    w.line(header);
    for (int id : voxel_ids) {
        const auto& c = curves[static_cast<std::size_t>(id)];
        for (std::size_t i = 0; i < c.size(); ++i) {
            w.line(std::to_string(id) + "," + std::to_string(i) + "," + fmt_double(c.times[i]) + "," +
                   fmt_double(c.values[i]));
        }
    }
    if (!w.out) throw io_error("write failed: " + path);
}

std::vector<SampledCurve> read_long_csv(const std::string& path, const std::string& header) {
    CsvReader r(path);
    r.expect_header(header);
    std::vector<SampledCurve> curves;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 4) r.fail("expected 4 fields");
        const int id = r.integer(f[0]);
        if (id < 0) r.fail("negative voxel_id");
        if (curves.size() <= static_cast<std::size_t>(id)) curves.resize(static_cast<std::size_t>(id) + 1);
        auto& c = curves[static_cast<std::size_t>(id)];
        const int idx = r.integer(f[1]);
        if (idx != static_cast<int>(c.times.size())) r.fail("t_index out of order for voxel " + f[0]);
        c.times.push_back(r.num(f[2]));
        c.values.push_back(r.num(f[3]));
    }
    for (const auto& c : curves) {
        if (c.size() > 0) c.validate();
    }
    return curves;
}

} // namespace

void write_curves_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<SampledCurve>& curves) {
    write_long_csv(path, "voxel_id,t_index,time_min,conc_mM", voxel_ids, curves);
}

std::vector<SampledCurve> read_curves_csv(const std::string& path) {
    return read_long_csv(path, "voxel_id,t_index,time_min,conc_mM");
}

void write_signal_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<SampledCurve>& curves) {
    write_long_csv(path, "voxel_id,t_index,time_min,signal", voxel_ids, curves);
}

std::vector<SampledCurve> read_signal_csv(const std::string& path) {
    return read_long_csv(path, "voxel_id,t_index,time_min,signal");
}

void write_mask_csv(const std::string& path, const VoxelMask& mask) {
    CsvWriter w(path);
    w.line("voxel_id,row,col");
    for (int id : mask.ids) {
        w.line(std::to_string(id) + "," + std::to_string(mask.row_of(id)) + "," +
               std::to_string(mask.col_of(id)));
    }
    if (!w.out) throw io_error("write failed: " + path);
}

VoxelMask read_mask_csv(const std::string& path) {
    CsvReader r(path);
    r.expect_header("voxel_id,row,col");
    std::vector<std::string> f;
    std::vector<std::array<int, 3>> rows;
    int max_row = -1, max_col = -1;
    while (r.next(f)) {
        if (f.size() != 3) r.fail("expected 3 fields");
        const int id = r.integer(f[0]);
        const int row = r.integer(f[1]);
        const int col = r.integer(f[2]);
        if (row < 0 || col < 0) r.fail("negative row/col");
        rows.push_back({id, row, col});
        max_row = std::max(max_row, row);
        max_col = std::max(max_col, col);
    }
    if (rows.empty()) r.fail("empty mask");
    VoxelMask m;
    m.width = max_col + 1;
    m.height = max_row + 1;
    for (const auto& row : rows) {
        if (row[0] != row[1] * m.width + row[2])
            throw csv_parse_error(path, 0, "voxel_id inconsistent with row/col layout");
        m.ids.push_back(row[0]);
    }
    std::sort(m.ids.begin(), m.ids.end());
    m.validate();
    return m;
}

void write_params_csv(const std::string& path, const std::vector<ParamRow>& rows) {
    CsvWriter w(path);
    w.line("voxel_id,row,col,f_b,v_p,v_e,ps,tau0,status");
    for (const auto& r : rows) {
        w.line(std::to_string(r.voxel_id) + "," + std::to_string(r.row) + "," + std::to_string(r.col) +
               "," + fmt_double(r.params.f_b) + "," + fmt_double(r.params.v_p) + "," +
               fmt_double(r.params.v_e) + "," + fmt_double(r.params.ps) + "," +
               fmt_double(r.params.tau0) + "," + r.status);
    }
    if (!w.out) throw io_error("write failed: " + path);
}

std::vector<ParamRow> read_params_csv(const std::string& path) {
    CsvReader r(path);
    r.expect_header("voxel_id,row,col,f_b,v_p,v_e,ps,tau0,status");
    std::vector<ParamRow> rows;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 9) r.fail("expected 9 fields");
        ParamRow row;
        row.voxel_id = r.integer(f[0]);
        row.row = r.integer(f[1]);
        row.col = r.integer(f[2]);
        row.params.f_b = r.num(f[3]);
        row.params.v_p = r.num(f[4]);
        row.params.v_e = r.num(f[5]);
        row.params.ps = r.num(f[6]);
        row.params.tau0 = r.num(f[7]);
        row.status = f[8];
        if (row.status != "ok" && row.status != "failed" && row.status != "truth")
            r.fail("bad status '" + row.status + "'");
        rows.push_back(row);
    }
    return rows;
}

void write_stat_map_csv(const std::string& path, const std::string& stat_prefix,
                        const std::vector<int>& voxel_ids,
                        const std::vector<std::array<double, kNumKinetic>>& values) {
    CsvWriter w(path);
    w.line("voxel_id," + stat_prefix + "_f_b," + stat_prefix + "_v_p," + stat_prefix + "_v_e," +
           stat_prefix + "_ps," + stat_prefix + "_tau0");
    for (std::size_t i = 0; i < voxel_ids.size(); ++i) {
        std::string line = std::to_string(voxel_ids[i]);
        for (int k = 0; k < kNumKinetic; ++k) line += "," + fmt_double(values[i][static_cast<std::size_t>(k)]);
        w.line(line);
    }
    if (!w.out) throw io_error("write failed: " + path);
}

void write_nmse_report_csv(const std::string& path, const NmseReport& report) {
    CsvWriter w(path);
    std::string header = "parameter";
    for (const auto& m : report.methods) header += "," + m + "_mean," + m + "_std";
    for (const auto& pp : report.p_values) header += ",p_" + pp.method_a + "_vs_" + pp.method_b;
    w.line(header);

    const std::vector<std::string> labels = {"All", "F_b", "v_p", "v_e", "PS"};
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        std::string line = labels[r];
        for (std::size_t m = 0; m < report.methods.size(); ++m) {
            line += "," + fmt_double(report.mean[m][r]) + "," + fmt_double(report.stddev[m][r]);
        }
        for (const auto& pp : report.p_values) line += "," + fmt_double(pp.p[r]);
        w.line(line);
    }
    if (!w.out) throw io_error("write failed: " + path);
}

void write_chains_csv(const std::string& path, const std::vector<int>& voxel_ids,
                      const std::vector<ChainHistory>& chains) {
    CsvWriter w(path);
    w.line("chain,step,voxel_id,f_b,v_p,v_e,ps,tau0,sigma2,alpha_fb,alpha_ps");
    for (std::size_t c = 0; c < chains.size(); ++c) {
        const auto& ch = chains[c];
        for (int t = 0; t < ch.n_steps; ++t) {
            for (int v = 0; v < ch.n_voxels; ++v) {
                std::string line = std::to_string(c) + "," + std::to_string(t) + "," +
                                   std::to_string(voxel_ids[static_cast<std::size_t>(v)]);
                for (int k = 0; k < 8; ++k) line += "," + fmt_double(ch.at(t, v, k));
                w.line(line);
            }
        }
    }
    if (!w.out) throw io_error("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw io_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace perfusion
