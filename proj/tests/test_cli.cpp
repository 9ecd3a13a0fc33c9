#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "modsel/cli.hpp"

using namespace modsel;

namespace {

const std::string kData = MODSEL_DATA_DIR;
const std::string kProfile = kData + "/desk_profile.json";
const std::string kScenario = kData + "/desk_scenario.csv";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string tmp(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / "modsel_test_cli";
  std::filesystem::create_directories(d);
  return (d / name).string();
}

double mean_throughput(const std::string& dir) {
  const auto rows = parse_windows_csv(detail::read_file(dir + "/windows.csv"));
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.throughput);
  return summarize(v).mean;
}

}  // namespace

TEST(Cli, ProfileValidate) {
  const auto ok = invoke({"profile", "validate", kProfile});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("ok: desk"), std::string::npos);

  const auto text = detail::read_file(kProfile);
  const auto cut = tmp("truncated.json");
  detail::write_file(cut, text.substr(0, text.size() / 2));
  const auto bad = invoke({"profile", "validate", cut});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);

  auto doc = nlohmann::json::parse(text);
  doc["latency_ms"]["video"] = {30.0};
  const auto partial = tmp("partial.json");
  detail::write_file(partial, doc.dump());
  const auto r = invoke({"profile", "validate", partial});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("latency_ms.video: incomplete latency table"), std::string::npos) << r.err;

  EXPECT_EQ(invoke({"profile", "validate", tmp("missing.json")}).code, 1);
}

TEST(Cli, ProfileSynthDeterministic) {
  const auto a = tmp("synth_a.json"), b = tmp("synth_b.json");
  for (const auto& path : {a, b}) {
    const auto r = invoke({"profile", "synth", "--modalities", "3", "--max-batch", "4", "--seed", "7", "--out", path});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(detail::read_file(a), detail::read_file(b));
  EXPECT_EQ(invoke({"profile", "validate", a}).code, 0);
  EXPECT_EQ(load_profile(a).n_modalities(), 3);
}

TEST(Cli, MatrixBuildAndInspect) {
  const auto m = tmp("m.json");
  const auto r = invoke({"matrix", "build", "--profile", kProfile, "--sizes", "1-8", "--out", m});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto grid = default_alpha_grid(desk_profile());
  EXPECT_NE(r.out.find("built 8 x " + std::to_string(grid.size()) + " = " + std::to_string(8 * grid.size())),
            std::string::npos)
      << r.out;
  EXPECT_EQ(load_matrix(m).cell_count(), 8 * grid.size());

  const auto i = invoke({"matrix", "inspect", m, "--size", "2", "--alpha", "0.71"});
  ASSERT_EQ(i.code, 0) << i.err;
  EXPECT_NE(i.out.find("latency 80 ms, accuracy 0.735"), std::string::npos) << i.out;

  const auto off = invoke({"matrix", "inspect", m, "--size", "2", "--alpha", "0.333"});
  EXPECT_EQ(off.code, 1);
}

TEST(Cli, MatrixAllInfeasibleWarns) {
  const auto m = tmp("m9.json");
  const auto r = invoke({"matrix", "build", "--profile", kProfile, "--sizes", "1-8", "--alphas", "0.9", "--out", m});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning: 8 of 8 cells are infeasible"), std::string::npos) << r.err;
  const auto i = invoke({"matrix", "inspect", m, "--size", "3", "--alpha", "0.9"});
  EXPECT_NE(i.out.find("infeasible"), std::string::npos);
}

TEST(Cli, SimulateScenario) {
  const auto r = invoke({"simulate", "--profile", kProfile, "--scenario", kScenario, "--policy", "optimized",
                      "--overhead-ms", "0", "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("violations 0 requests"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("job 2 completed at 100 ms, accuracy 0.735"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("job 3 completed at 150 ms, accuracy 0.685"), std::string::npos) << r.out;
}

TEST(Cli, SimulateWithPrebuiltMatrix) {
  const auto m = tmp("m64.json");
  ASSERT_EQ(invoke({"matrix", "build", "--profile", kProfile, "--out", m}).code, 0);
  const auto r = invoke({"simulate", "--profile", kProfile, "--matrix", m, "--scenario", kScenario,
                      "--overhead-ms", "0", "--seed", "1"});
  EXPECT_EQ(r.code, 0) << r.err;

  const auto other = tmp("other_profile.json");
  ASSERT_EQ(invoke({"profile", "synth", "--modalities", "2", "--max-batch", "2", "--seed", "1", "--out", other}).code, 0);
  const auto bad = invoke({"simulate", "--profile", other, "--matrix", m, "--qps", "5", "--seed", "1"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("hash"), std::string::npos) << bad.err;
}

TEST(Cli, CompareOverload) {
  const auto dir = tmp("cmp");
  const auto r = invoke({"compare", "--profile", kProfile, "--qps", "33", "--duration", "60", "--seed", "1", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = detail::read_file(dir + "/compare.csv");
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> viol;
  while (std::getline(in, line)) {
    const auto cells = detail::split_csv(line);
    viol[cells[0]] = std::stod(cells[3]);
  }
  ASSERT_EQ(viol.size(), 4u);
  for (const auto& [name, v] : viol) {
    if (name != "none") {
      EXPECT_LT(v, viol["none"]) << name;
    }
  }
  for (const char* p : {"optimized", "random", "aggressive", "none"}) {
    EXPECT_TRUE(std::filesystem::exists(dir + "/" + p + "/windows.csv")) << p;
  }
}

TEST(Cli, CompareSharesJobStream) {
  const auto dir = tmp("cmp_share");
  ASSERT_EQ(invoke({"compare", "--profile", kProfile, "--qps", "20", "--duration", "10", "--seed", "4", "--out", dir,
                 "--policies", "optimized,none"})
                .code,
            0);
  const auto a = parse_jobs_csv(detail::read_file(dir + "/optimized/jobs.csv"));
  const auto b = parse_jobs_csv(detail::read_file(dir + "/none/jobs.csv"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].arrival, b[i].arrival);
    EXPECT_EQ(a[i].size, b[i].size);
    EXPECT_EQ(a[i].accuracy_slo, b[i].accuracy_slo);
  }
}

TEST(Cli, DiscrepancyLowersThroughput) {
  const auto fast = tmp("d10"), slow = tmp("d25");
  ASSERT_EQ(invoke({"simulate", "--profile", kProfile, "--qps", "33", "--seed", "1", "--out", fast}).code, 0);
  ASSERT_EQ(invoke({"simulate", "--profile", kProfile, "--qps", "33", "--seed", "1", "--discrepancy", "2.5", "--out", slow})
                .code,
            0);
  EXPECT_LT(mean_throughput(slow), mean_throughput(fast));
  EXPECT_EQ(invoke({"simulate", "--profile", kProfile, "--qps", "33", "--seed", "1", "--discrepancy", "3"}).code, 1);
}

TEST(Cli, ReproducibleExports) {
  const auto a = tmp("rep_a"), b = tmp("rep_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(invoke({"simulate", "--profile", kProfile, "--trace", kData + "/sample_trace.csv", "--duration", "60",
                   "--seed", "3", "--policy", "random", "--out", d})
                  .code,
              0);
  }
  EXPECT_EQ(detail::read_file(a + "/windows.csv"), detail::read_file(b + "/windows.csv"));
  EXPECT_EQ(detail::read_file(a + "/jobs.csv"), detail::read_file(b + "/jobs.csv"));
}

TEST(Cli, ConfigFileWithOverride) {
  const auto cfg = tmp("run.toml");
  detail::write_file(cfg, "[simulate]\nprofile = \"" + kProfile + "\"\nscenario = \"" + kScenario +
                              "\"\nseed = 1\noverhead-ms = 70\npolicy = \"none\"\n");
  const auto base = invoke({"--config", cfg, "simulate"});
  ASSERT_EQ(base.code, 0) << base.err;
  EXPECT_NE(base.out.find("policy none"), std::string::npos) << base.out;

  const auto over = invoke({"--config", cfg, "simulate", "--policy", "optimized", "--overhead-ms", "0"});
  ASSERT_EQ(over.code, 0) << over.err;
  EXPECT_NE(over.out.find("policy optimized"), std::string::npos);
  EXPECT_NE(over.out.find("job 3 completed at 150 ms, accuracy 0.685"), std::string::npos) << over.out;
}

TEST(Cli, ExitCodesAndHelp) {
  const auto help = invoke({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("simulate"), std::string::npos);
  const auto sub = invoke({"simulate", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--discrepancy"), std::string::npos);

  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"simulate", "--profile", kProfile, "--qps", "5"}).code, 1);  // seed required
  EXPECT_EQ(invoke({"simulate", "--profile", kProfile, "--seed", "1"}).code, 1);  // no workload
  EXPECT_EQ(invoke({"simulate", "--profile", kProfile, "--seed", "1", "--qps", "5", "--policy", "greedy"}).code, 1);
  EXPECT_EQ(invoke({"simulate", "--profile", kProfile, "--seed", "1", "--qps", "5", "--out", "/proc/none/x"}).code, 2);
}
