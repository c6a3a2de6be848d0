// test_cli_io.cpp
//
// File-format round trips and end-to-end runs of the command-line tool
// (binary path supplied via the PERFUSION_CLI environment variable).

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "perfusion/io.hpp"

using namespace perfusion;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("perfusion_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string cli_path() {
    const char* env = std::getenv("PERFUSION_CLI");
    REQUIRE_MESSAGE(env != nullptr, "PERFUSION_CLI must point at the CLI binary");
    return env;
}

int run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

} // namespace

TEST_CASE("doubles are written with 9 significant digits") {
    CHECK(fmt_double(0.128008192524322) == "0.128008193");
    CHECK(fmt_double(3.5) == "3.5");
    CHECK(fmt_double(0.0) == "0");
    CHECK(fmt_double(-1.23456789012e-07) == "-1.23456789e-07");
}

TEST_CASE("aif csv round trip and header validation") {
    const auto dir = fresh_dir("aif");
    SampledCurve aif;
    aif.times = make_time_grid(0.012, 1.0);
    aif.values.assign(aif.times.size(), 0.0);
    for (std::size_t i = 0; i < aif.size(); ++i) aif.values[i] = 0.1 * static_cast<double>(i);

    const auto path = (dir / "aif.csv").string();
    write_aif_csv(path, aif);
    const auto back = read_aif_csv(path);
    CHECK(back.times.size() == aif.times.size());
    for (std::size_t i = 0; i < aif.size(); ++i) {
        CHECK(back.values[i] == doctest::Approx(aif.values[i]).epsilon(1e-9));
    }

    write_text_file((dir / "bad.csv").string(), "wrong,header\n1,2\n");
    CHECK_THROWS_AS(read_aif_csv((dir / "bad.csv").string()), csv_parse_error);
    try {
        read_aif_csv((dir / "bad.csv").string());
    } catch (const csv_parse_error& e) {
        CHECK(e.line() == 1);
    }
}

TEST_CASE("curves csv round trip preserves sparse voxel ids") {
    const auto dir = fresh_dir("curves");
    std::vector<SampledCurve> curves(8);
    const auto grid = make_time_grid(0.017, 0.5);
    for (int id : {2, 5, 7}) {
        curves[static_cast<std::size_t>(id)].times = grid;
        curves[static_cast<std::size_t>(id)].values.assign(grid.size(), 0.25 * id);
    }
    const auto path = (dir / "curves.csv").string();
    write_curves_csv(path, {2, 5, 7}, curves);
    const auto back = read_curves_csv(path);
    CHECK(back.size() == 8);
    CHECK(back[0].size() == 0);
    CHECK(back[5].size() == grid.size());
    CHECK(back[7].values[3] == doctest::Approx(1.75));
}

TEST_CASE("mask csv round trip and layout consistency check") {
    const auto dir = fresh_dir("mask");
    VoxelMask mask;
    mask.width = 6;
    mask.height = 6;
    mask.ids = {0, 3, 7, 35};
    const auto path = (dir / "mask.csv").string();
    write_mask_csv(path, mask);
    const auto back = read_mask_csv(path);
    CHECK(back.ids == mask.ids);
    CHECK(back.width == 6);
    CHECK(back.height == 6);

    write_text_file((dir / "bad.csv").string(), "voxel_id,row,col\n9,0,1\n");
    CHECK_THROWS_AS(read_mask_csv((dir / "bad.csv").string()), csv_parse_error);
}

TEST_CASE("parameter map csv round trip and status validation") {
    const auto dir = fresh_dir("params");
    std::vector<ParamRow> rows(2);
    rows[0] = {0, 0, 0, {3.5, 0.08, 0.16, 1.0, 0.1}, "truth"};
    rows[1] = {1, 0, 1, {1.0, 0.05, 0.2, 0.5, 0.05}, "failed"};
    const auto path = (dir / "maps.csv").string();
    write_params_csv(path, rows);
    const auto back = read_params_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].params.f_b == doctest::Approx(3.5));
    CHECK(back[1].status == "failed");

    write_text_file((dir / "bad.csv").string(),
                    "voxel_id,row,col,f_b,v_p,v_e,ps,tau0,status\n0,0,0,1,1,1,1,1,maybe\n");
    CHECK_THROWS_AS(read_params_csv((dir / "bad.csv").string()), csv_parse_error);
}

TEST_CASE("cli simulate: file inventory, sample counts and reproducibility") {
    const auto dir = fresh_dir("sim_rest");
    REQUIRE(run_cli("simulate --scenario rest --snr 15 --seed 7 --out " + dir.string()) == 0);
    for (const char* f : {"aif.csv", "curves.csv", "mask.csv", "truth.csv", "manifest.json"}) {
        CHECK(fs::exists(dir / f));
    }
    // rest grid: floor(3/0.017)+1 = 177 samples, 36 voxels
    CHECK(count_lines(dir / "curves.csv") == 1 + 36 * 177);
    CHECK(count_lines(dir / "aif.csv") == 1 + 177);
    CHECK(count_lines(dir / "mask.csv") == 1 + 36);

    const auto first = read_text_file((dir / "curves.csv").string());
    const auto manifest1 = read_text_file((dir / "manifest.json").string());
    const auto dir2 = fresh_dir("sim_rest_again");
    REQUIRE(run_cli("simulate --scenario rest --snr 15 --seed 7 --out " + dir2.string()) == 0);
    CHECK(read_text_file((dir2 / "curves.csv").string()) == first);
    CHECK(read_text_file((dir2 / "manifest.json").string()) == manifest1);
}

TEST_CASE("cli simulate: ischaemia truth holds exactly two flow values") {
    const auto dir = fresh_dir("sim_isch");
    REQUIRE(run_cli("simulate --scenario ischaemia --snr 15 --seed 3 --out " + dir.string()) == 0);
    const auto rows = read_params_csv((dir / "truth.csv").string());
    REQUIRE(rows.size() == 36);
    std::set<double> flows;
    for (const auto& r : rows) {
        flows.insert(r.params.f_b);
        CHECK(r.status == "truth");
    }
    CHECK(flows == std::set<double>{1.0, 3.5});
}

TEST_CASE("cli fit: nlls maps on a noise-free phantom recover the truth") {
    const auto sim = fresh_dir("fit_sim");
    REQUIRE(run_cli("simulate --scenario stress --snr inf --seed 9 --out " + sim.string()) == 0);
    const auto out = fresh_dir("fit_nlls");
    REQUIRE(run_cli("fit --method nlls --starts 8 --seed 9 --threads 2 --in " + sim.string() +
                    " --out " + out.string()) == 0);
    const auto rows = read_params_csv((out / "maps.csv").string());
    REQUIRE(rows.size() == 36);
    for (const auto& r : rows) {
        CHECK(r.status == "ok");
        CHECK(r.params.f_b == doctest::Approx(3.5).epsilon(0.01));
    }
    const auto stats = nlohmann::json::parse(read_text_file((out / "stats.json").string()));
    CHECK(stats["fraction_failed"].get<double>() == 0.0);
    CHECK(stats["method"] == "nlls");
}

TEST_CASE("cli fit: bayes writes cov and rhat maps and is thread-count independent") {
    const auto sim = fresh_dir("bayes_sim");
    REQUIRE(run_cli("simulate --scenario rest --snr 15 --seed 11 --out " + sim.string()) == 0);
    const auto out1 = fresh_dir("bayes_t1");
    REQUIRE(run_cli("fit --method bayes --steps 150 --burn-in 50 --chains 2 --seed 11 --threads 1 --in " +
                    sim.string() + " --out " + out1.string()) == 0);
    for (const char* f : {"maps.csv", "cov.csv", "rhat.csv", "stats.json", "manifest.json"}) {
        CHECK(fs::exists(out1 / f));
    }
    // every cov entry is non-negative
    std::ifstream cov(out1 / "cov.csv");
    std::string line;
    std::getline(cov, line);
    CHECK(line == "voxel_id,cov_f_b,cov_v_p,cov_v_e,cov_ps,cov_tau0");
    while (std::getline(cov, line)) {
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // id
        while (std::getline(ss, field, ',')) CHECK(std::stod(field) >= 0.0);
    }

    const auto out2 = fresh_dir("bayes_t4");
    REQUIRE(run_cli("fit --method bayes --steps 150 --burn-in 50 --chains 2 --seed 11 --threads 4 --in " +
                    sim.string() + " --out " + out2.string()) == 0);
    for (const char* f : {"maps.csv", "cov.csv", "rhat.csv", "stats.json"}) {
        CHECK(read_text_file((out1 / f).string()) == read_text_file((out2 / f).string()));
    }
}

TEST_CASE("cli fit: dump-chains writes one record per chain step and voxel") {
    const auto sim = fresh_dir("dump_sim");
    REQUIRE(run_cli("simulate --scenario rest --snr 15 --seed 13 --out " + sim.string()) == 0);
    const auto out = fresh_dir("dump_fit");
    REQUIRE(run_cli("fit --method bayes --steps 60 --burn-in 20 --chains 2 --seed 13 --dump-chains --in " +
                    sim.string() + " --out " + out.string()) == 0);
    CHECK(count_lines(out / "chains.csv") == 1 + 2 * 60 * 36);
}

TEST_CASE("cli rejects unknown methods and missing required flags") {
    const auto sim = fresh_dir("err_sim");
    REQUIRE(run_cli("simulate --scenario rest --snr 15 --seed 1 --out " + sim.string()) == 0);
    CHECK(run_cli("fit --method magic --in " + sim.string() + " --out " + sim.string()) == 2);
    CHECK(run_cli("convert --signal nowhere.csv --out out.csv") == 2);  // --s-lv0 missing
    CHECK(run_cli("simulate --scenario nowhere --out " + sim.string()) == 2);
}

TEST_CASE("cli surfaces parse errors with exit code 3") {
    const auto dir = fresh_dir("parse_err");
    write_text_file((dir / "aif.csv").string(), "t_index,time_min,conc_mM\n0,zero,0\n");
    write_text_file((dir / "curves.csv").string(), "voxel_id,t_index,time_min,conc_mM\n");
    write_text_file((dir / "mask.csv").string(), "voxel_id,row,col\n0,0,0\n");
    const auto out = fresh_dir("parse_err_out");
    CHECK(run_cli("fit --method nlls --in " + dir.string() + " --out " + out.string()) == 3);
}

TEST_CASE("cli convert: flat signal maps to zero concentration and inverts") {
    const auto dir = fresh_dir("convert");
    const auto grid = make_time_grid(0.017, 0.017 * 19);
    std::vector<SampledCurve> sig(2);
    sig[0].times = grid;
    sig[0].values.assign(grid.size(), 120.0);
    sig[1].times = grid;
    sig[1].values.assign(grid.size(), 120.0);
    for (std::size_t i = 5; i < grid.size(); ++i) sig[1].values[i] = 120.0 + 40.0;
    write_signal_csv((dir / "signal.csv").string(), {0, 1}, sig);

    const auto out_csv = (dir / "conc.csv").string();
    REQUIRE(run_cli("convert --signal " + (dir / "signal.csv").string() + " --s-lv0 250 --out " + out_csv) == 0);
    const auto conc = read_curves_csv(out_csv);
    REQUIRE(conc.size() == 2);
    for (double v : conc[0].values) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    // enhanced voxel: C = 40 / (4.5 * 1.736 * 250), baseline rows 0..4 are 0
    const double expected = 40.0 / (4.5 * 1.736 * 250.0);
    CHECK(conc[1].values[2] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(conc[1].values[10] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("cli evaluate: smoke run emits a five-row report with finite values") {
    const auto out = fresh_dir("eval");
    REQUIRE(run_cli("evaluate --scenario ischaemia --method nlls --method bayes --realizations 2 "
                    "--snr 15 --seed 21 --starts 6 --steps 120 --burn-in 40 --chains 2 --threads 2 --out " +
                    out.string()) == 0);
    std::ifstream in(out / "nmse_report.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "parameter,nlls_mean,nlls_std,bayes_mean,bayes_std,p_nlls_vs_bayes");
    int rows = 0;
    std::string line;
    std::vector<std::string> labels;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        labels.push_back(field);
        while (std::getline(ss, field, ',')) CHECK(std::isfinite(std::stod(field)));
    }
    CHECK(rows == 5);
    CHECK(labels == std::vector<std::string>{"All", "F_b", "v_p", "v_e", "PS"});
}
