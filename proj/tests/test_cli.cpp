#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "carnotwalk/io.hpp"
#include "carnotwalk/paths.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return CARNOT_CLI_PATH; }

struct CliResult {
  int exit_code = -1;
  std::string output;
  json output_json() const { return json::parse(output); }
};

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path("cli_scratch") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliResult run_cli(const std::string& args, const fs::path& capture) {
  const std::string cmd =
      std::string(cli_path()) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = carnot::read_text_file(capture.string());
  return r;
}

void write_config(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

std::string strip_wall_clock(const std::string& manifest) {
  std::string out;
  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line))
    if (line.find("wall_clock_ms") == std::string::npos) out += line + "\n";
  return out;
}

std::set<std::string> dir_entries(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  return names;
}

}  // namespace

TEST(CliGroupInfo, ReportsHomogeneousDimensionAndValidation) {
  const fs::path dir = scratch_dir("info");
  const CliResult h = run_cli("group-info --group heisenberg", dir / "h.txt");
  ASSERT_EQ(h.exit_code, 0) << h.output;
  const json jh = h.output_json();
  EXPECT_EQ(jh.at("homogeneous_dimension").get<int>(), 4);
  EXPECT_EQ(jh.at("step").get<int>(), 2);
  EXPECT_TRUE(jh.at("validation").at("ok").get<bool>());

  const CliResult e = run_cli("group-info --group engel", dir / "e.txt");
  ASSERT_EQ(e.exit_code, 0);
  EXPECT_EQ(e.output_json().at("homogeneous_dimension").get<int>(), 7);
}

TEST(CliGroupInfo, UnknownGroupYieldsMachineReadableError) {
  const fs::path dir = scratch_dir("info_err");
  const CliResult r = run_cli("group-info --group nosuch", dir / "err.txt");
  EXPECT_NE(r.exit_code, 0);
  const json j = r.output_json();
  EXPECT_EQ(j.at("error").at("code").get<std::string>(), "validation");
}

TEST(CliConfig, MalformedJsonReportsParseErrorWithLine) {
  const fs::path dir = scratch_dir("badjson");
  carnot::CsvTable::write_text_file((dir / "bad.json").string(),
                                    "{\n  \"group\": \"line\",\n  oops\n}\n");
  const CliResult r =
      run_cli("rate --config " + (dir / "bad.json").string(), dir / "err.txt");
  EXPECT_NE(r.exit_code, 0);
  const json j = r.output_json();
  EXPECT_EQ(j.at("error").at("code").get<std::string>(), "parse");
  EXPECT_NE(j.at("error").at("message").get<std::string>().find("line 3"), std::string::npos)
      << r.output;
}

TEST(CliConfig, UnknownKeysAreRejected) {
  const fs::path dir = scratch_dir("unknown_key");
  write_config(dir / "cfg.json", {{"group", "heisenberg"},
                                  {"distribution", {{"kind", "gaussian"}}},
                                  {"n", 8},
                                  {"m", 2},
                                  {"trials", 2},
                                  {"bogus", 1},
                                  {"out", (dir / "out").string()}});
  const CliResult r = run_cli("walk --config " + (dir / "cfg.json").string(), dir / "err.txt");
  EXPECT_NE(r.exit_code, 0);
  const json j = r.output_json();
  EXPECT_EQ(j.at("error").at("code").get<std::string>(), "validation");
  EXPECT_NE(j.at("error").at("message").get<std::string>().find("bogus"), std::string::npos);
}

TEST(CliWalk, EmitsCsvWithCompleteManifest) {
  const fs::path dir = scratch_dir("walk");
  const fs::path out = dir / "out";
  const CliResult r = run_cli(
      "walk --group heisenberg --dist uniform_cube --radius 0.5 --n 32 --m 4 --trials 6 "
      "--seed 11 --out " + out.string(),
      dir / "log.txt");
  ASSERT_EQ(r.exit_code, 0) << r.output;

  const std::string csv = carnot::read_text_file((out / "walks.csv").string());
  std::size_t lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  EXPECT_EQ(lines, 7u);  // header + one row per trial
  EXPECT_EQ(csv.rfind("seed,trial,n,m,gap,x_1,x_2,x_3", 0), 0u);

  const json manifest = json::parse(carnot::read_text_file((out / "manifest.json").string()));
  EXPECT_EQ(manifest.at("command").get<std::string>(), "walk");
  std::set<std::string> listed;
  for (const auto& f : manifest.at("outputs")) listed.insert(f.get<std::string>());
  listed.insert("manifest.json");
  EXPECT_EQ(listed, dir_entries(out));  // no orphan files
}

TEST(CliRate, IdentityTargetReportsZero) {
  const fs::path dir = scratch_dir("rate_zero");
  write_config(dir / "cfg.json",
               {{"group", "heisenberg"},
                {"model", {{"kind", "gaussian"}}},
                {"target", {0.0, 0.0, 0.0}},
                {"m_schedule", {2, 4}},
                {"optimizer", {{"restarts", 2}}},
                {"seed", 1},
                {"out", (dir / "out").string()}});
  const CliResult r = run_cli("rate --config " + (dir / "cfg.json").string(), dir / "log.txt");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json rate = json::parse(carnot::read_text_file((dir / "out" / "rate.json").string()));
  EXPECT_LE(rate.at("j_estimate").get<double>(), 1e-10);
  ASSERT_EQ(rate.at("points").size(), 2u);
  EXPECT_TRUE(rate.at("points")[0].at("feasible").get<bool>());
}

TEST(CliRate, EmittedControlRoundTripsThroughTheParser) {
  const fs::path dir = scratch_dir("rate_rt");
  write_config(dir / "cfg.json",
               {{"group", "heisenberg"},
                {"model", {{"kind", "gaussian"}}},
                {"target", {1.0, 0.5, 0.0}},
                {"m_schedule", {3}},
                {"optimizer", {{"restarts", 2}}},
                {"seed", 1},
                {"out", (dir / "out").string()}});
  ASSERT_EQ(run_cli("rate --config " + (dir / "cfg.json").string(), dir / "log.txt").exit_code, 0);
  const json rate = json::parse(carnot::read_text_file((dir / "out" / "rate.json").string()));
  const json& point = rate.at("points")[0];
  json ctrl;
  ctrl["m"] = point.at("m");
  ctrl["values"] = point.at("control");
  const carnot::PiecewiseControl c = carnot::control_from_json(ctrl);
  EXPECT_EQ(c.segments(), 3);
  EXPECT_EQ(c.values[0].size(), 2);
}

TEST(CliRate, InfeasibleFiberFailsLoudlyButWritesFiles) {
  // The m = 2 vertical fiber on Heisenberg is empty: the two block averages
  // cancel, so no control reaches the target.
  const fs::path dir = scratch_dir("rate_inf");
  write_config(dir / "cfg.json",
               {{"group", "heisenberg"},
                {"model", {{"kind", "gaussian"}}},
                {"target", {0.0, 0.0, 1.0}},
                {"m_schedule", {2}},
                {"optimizer", {{"restarts", 3}}},
                {"seed", 1},
                {"out", (dir / "out").string()}});
  const CliResult r = run_cli("rate --config " + (dir / "cfg.json").string(), dir / "log.txt");
  EXPECT_NE(r.exit_code, 0);
  const json err = r.output_json();
  EXPECT_EQ(err.at("error").at("code").get<std::string>(), "infeasible");
  const json rate = json::parse(carnot::read_text_file((dir / "out" / "rate.json").string()));
  EXPECT_FALSE(rate.at("points")[0].at("feasible").get<bool>());
}

TEST(CliMcSlope, ZeroTrialsIsAValidationError) {
  const fs::path dir = scratch_dir("mc_zero");
  write_config(dir / "cfg.json",
               {{"group", "line"},
                {"distribution", {{"kind", "gaussian"}}},
                {"event", {{"kind", "gnorm_exceed"}, {"threshold", 0.5}}},
                {"n_schedule", {5, 10}},
                {"trials", 0},
                {"out", (dir / "out").string()}});
  const CliResult r = run_cli("mc-slope --config " + (dir / "cfg.json").string(), dir / "e.txt");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(r.output_json().at("error").at("code").get<std::string>(), "validation");
}

TEST(CliDeterminism, RerunsAndThreadCountsAreByteIdentical) {
  const fs::path dir = scratch_dir("det");
  write_config(dir / "cfg.json",
               {{"group", "engel"},
                {"distribution", {{"kind", "uniform_cube"}}},
                {"event", {{"kind", "gnorm_exceed"}, {"threshold", 0.3}}},
                {"n_schedule", {8, 16}},
                {"trials", 4000},
                {"reference", {{"method", "none"}}},
                {"seed", 7}});
  const std::string base = "mc-slope --config " + (dir / "cfg.json").string();
  ASSERT_EQ(run_cli(base + " --out " + (dir / "a").string() + " --threads 1", dir / "l1.txt")
                .exit_code, 0);
  ASSERT_EQ(run_cli(base + " --out " + (dir / "b").string() + " --threads 8", dir / "l2.txt")
                .exit_code, 0);
  ASSERT_EQ(run_cli(base + " --out " + (dir / "c").string() + " --threads 1", dir / "l3.txt")
                .exit_code, 0);
  for (const char* f : {"slope.json", "estimates.csv", "long.csv"}) {
    const std::string a = carnot::read_text_file((dir / "a" / f).string());
    EXPECT_EQ(a, carnot::read_text_file((dir / "b" / f).string())) << f;
    EXPECT_EQ(a, carnot::read_text_file((dir / "c" / f).string())) << f;
  }
  const std::string ma = strip_wall_clock(carnot::read_text_file((dir / "a" / "manifest.json").string()));
  const std::string mb = strip_wall_clock(carnot::read_text_file((dir / "b" / "manifest.json").string()));
  EXPECT_EQ(ma, mb);
}

TEST(CliApproxStudy, TableCensorsTheExactRow) {
  const fs::path dir = scratch_dir("approx");
  write_config(dir / "cfg.json",
               {{"group", "heisenberg"},
                {"distribution", {{"kind", "gaussian"}}},
                {"delta", 0.05},
                {"n_schedule", {64}},
                {"m_list", {1, 64}},
                {"trials", 50},
                {"seed", 2},
                {"out", (dir / "out").string()}});
  ASSERT_EQ(
      run_cli("approx-study --config " + (dir / "cfg.json").string(), dir / "log.txt").exit_code,
      0);
  const json decay = json::parse(carnot::read_text_file((dir / "out" / "decay.json").string()));
  ASSERT_EQ(decay.at("rows").size(), 2u);
  const json& exact = decay.at("rows")[1];
  EXPECT_EQ(exact.at("m").get<int>(), 64);
  EXPECT_TRUE(exact.at("censored").get<bool>());
  EXPECT_EQ(exact.at("median_gap").get<double>(), 0.0);
  const std::string csv = carnot::read_text_file((dir / "out" / "decay.csv").string());
  EXPECT_NE(csv.find("censored"), std::string::npos);
}

TEST(CliDiag, WindowTableShowsBothNormFormulas) {
  const fs::path dir = scratch_dir("diag");
  write_config(dir / "cfg.json",
               {{"windows", {{1, 3}, {0, 4}}},
                {"subexp", {{"parts", {{1.0, 1.0}, {1.0, 1.0}}}, {"independent", true}}},
                {"seed", 1},
                {"out", (dir / "out").string()}});
  ASSERT_EQ(run_cli("diag --config " + (dir / "cfg.json").string(), dir / "log.txt").exit_code, 0);
  const json d = json::parse(carnot::read_text_file((dir / "out" / "diag.json").string()));
  const json& w13 = d.at("windows")[0];
  EXPECT_NEAR(w13.at("hs").get<double>(), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(w13.at("hs_variant").get<double>(), std::sqrt(6.0), 1e-15);
  EXPECT_GT(w13.at("hs_variant").get<double>(), w13.at("hs").get<double>());
  EXPECT_EQ(d.at("subexp").at("nu2").get<double>(), 2.0);
}
