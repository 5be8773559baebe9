#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cwb/json.hpp"

#ifndef CWB_CLI_PATH
#error "CWB_CLI_PATH must point at the cwb executable"
#endif

namespace fs = std::filesystem;
using cwb::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(CWB_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int st = pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("cwb_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string write(const std::string& name, const std::string& text) const {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

// Health scores 1-5 shift both treatment and outcome.
std::string student_like_csv(std::size_t n) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> health(1, 5);
  std::normal_distribution<double> noise;
  std::uniform_real_distribution<double> u;
  std::ostringstream os;
  os << "health,internet,t,y\n";
  for (std::size_t i = 0; i < n; ++i) {
    const int h = health(rng);
    const bool net = u(rng) < 0.7;
    const double p = 1 / (1 + std::exp(-(-1.0 + 0.3 * h)));
    const int t = u(rng) < p ? 1 : 0;
    os << h << ',' << (net ? "yes" : "no") << ',' << t << ',' << (0.5 * h + 2 * t + noise(rng)) << '\n';
  }
  return os.str();
}

const char* kDag = R"({"nodes":[{"name":"X"},{"name":"T"},{"name":"Y"}],
  "links":[{"source":"X","target":"T"},{"source":"X","target":"Y"},{"source":"T","target":"Y"}],
  "treatment":"T","outcome":"Y"})";

}  // namespace

TEST_CASE("cli classify") {
  Workspace ws;
  const auto dag = ws.write("d.json", kDag);
  const Run r = run("classify --dag " + dag);
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out)["confounders"] == json{"X"});
}

TEST_CASE("cli balance with identical groups") {
  Workspace ws;
  const auto csv = ws.write("c.csv", "t,a,b\n1,1,0\n0,1,0\n1,2,1\n0,2,1\n1,5,0\n0,5,0\n");
  const Run r = run("balance --data " + csv + " --treatment t --covariates a,b");
  REQUIRE(r.status == 0);
  for (const auto& c : json::parse(r.out)["covariates"]) CHECK(c["unadjusted"] == 0.0);
}

TEST_CASE("cli pipeline: propensity, match, balance, effects, facet, versions") {
  Workspace ws;
  const auto csv = ws.write("s.csv", student_like_csv(600));
  const std::string data = "--data " + csv + " --one-hot internet";

  const Run ps = run("propensity " + data + " --treatment t --covariates health,internet --bins 10 --out " +
                     ws.path("ps.json"));
  REQUIRE(ps.status == 0);
  const json psj = cwb::read_json_file(ws.path("ps.json"));
  CHECK(psj["model"]["covariates"] == json{"health", "internet=yes"});
  CHECK(psj["histogram"]["edges"].size() == 11);

  const Run m = run("match " + data + " --treatment t --scores " + ws.path("ps.json") + " --metric logit --out " +
                    ws.path("m.json"));
  REQUIRE(m.status == 0);
  const json mj = cwb::read_json_file(ws.path("m.json"));
  CHECK(mj["pairs"].size() > 50);
  CHECK(mj["treatment"] == "t");

  const Run bal = run("balance " + data + " --treatment t --covariates health,internet --adjusted " + ws.path("m.json") +
                      " --sort adjusted");
  REQUIRE(bal.status == 0);
  CHECK(json::parse(bal.out)["mode"] == "cohort_adjusted");
  const Run wbal = run("balance " + data + " --treatment t --covariates health --weights " + ws.path("ps.json"));
  REQUIRE(wbal.status == 0);
  CHECK(json::parse(wbal.out)["mode"] == "weight_adjusted");

  const Run eff = run("effects --match " + ws.path("m.json") + " --outcome y --n-boot 200");
  REQUIRE(eff.status == 0);
  CHECK(std::abs(json::parse(eff.out)["ate"].get<double>() - 2.0) < 0.5);

  const Run ipw = run("effects --method ipw --data " + csv + " --treatment t --outcome y --weights " + ws.path("ps.json") +
                      " --n-boot 50");
  REQUIRE(ipw.status == 0);
  CHECK(json::parse(ipw.out)["method"] == "ipw");

  const Run fac = run("effects --match " + ws.path("m.json") + " --outcome y --facet health --threshold health=3.5");
  REQUIRE(fac.status == 0);
  const json fj = json::parse(fac.out);
  CHECK(fj["cells"].size() == 2);
  CHECK(fj["thresholds"]["health"] == 3.5);

  const auto dag = ws.write("d.json", kDag);
  const Run v1 = run("versions --file " + ws.path("v.json") + " --dag " + dag + " --match " + ws.path("m.json") +
                     " --outcome y --notes first");
  REQUIRE(v1.status == 0);
  CHECK(json::parse(v1.out)["label"] == "Cohort 1.1");
  const auto ids = ws.write("ids.json", "[1,2,3]");
  const Run v2 = run("versions --file " + ws.path("v.json") + " --dag " + dag + " --ids " + ids + " --ate 1.25");
  REQUIRE(v2.status == 0);
  CHECK(json::parse(v2.out)["label"] == "Cohort 1.2");
  CHECK(json::parse(v2.out)["n_versions"] == 2);
}

TEST_CASE("cli ipw effects take the treatment from the DAG") {
  Workspace ws;
  const auto csv = ws.write("s.csv", student_like_csv(300));
  const auto dag = ws.write("d.json", R"({"nodes":[{"name":"health"},{"name":"t"},{"name":"y"}],
    "links":[{"source":"health","target":"t"},{"source":"health","target":"y"},{"source":"t","target":"y"}],
    "treatment":"t","outcome":"y"})");
  REQUIRE(run("propensity --data " + csv + " --dag " + dag + " --out " + ws.path("ps.json")).status == 0);
  const Run r = run("effects --method ipw --data " + csv + " --dag " + dag + " --weights " + ws.path("ps.json") +
                    " --n-boot 50");
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out)["method"] == "ipw");
}

TEST_CASE("cli exit codes") {
  Workspace ws;
  CHECK(run("classify --dag /nonexistent/d.json").status == 2);
  const auto cyc = ws.write("c.json", R"({"nodes":[{"name":"A"},{"name":"B"}],
    "links":[{"source":"A","target":"B"},{"source":"B","target":"A"}]})");
  CHECK(run("classify --dag " + cyc).status == 1);
  const auto nodes = ws.write("n.json", R"({"nodes":[{"name":"A"}],"links":[]})");
  CHECK(run("classify --dag " + nodes).status == 1);
  CHECK(run("frobnicate").status == 1);
  CHECK(run("balance --bogus-flag").status == 1);
  CHECK(run("--help").status == 0);
  const auto csv = ws.write("x.csv", "t,a\n1,1\n1,2\n");
  CHECK(run("propensity --data " + csv + " --treatment t --covariates a").status == 1);
}

TEST_CASE("cli serve prints its configuration") {
  const Run r = run("serve --port 9123 --max-upload-mb 8 --print-config");
  REQUIRE(r.status == 0);
  const json cfg = json::parse(r.out);
  CHECK(cfg["port"] == 9123);
  CHECK(cfg["max_upload_mb"] == 8);
}
