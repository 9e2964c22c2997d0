#include "brc/cli.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = brc::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  for (std::string line; std::getline(s, line);) out.push_back(line);
  return out;
}

// Drops the trailing wall-time column of a run log.
std::string without_seconds(const std::string& csv) {
  std::string out;
  for (const auto& l : lines(csv)) out += l.substr(0, l.rfind(',')) + "\n";
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("bifurcation table") {
  TempDir dir("brc_cli_bif");
  const auto r = run({"bifurcation", "--c", "0.5", "--a-min", "0.2", "--a-max", "1.8", "--steps", "200", "--out",
                      dir / "bif.csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("rows=") != std::string::npos);
  const auto csv = slurp(dir / "bif.csv");
  const auto rows = lines(csv);
  CHECK(rows.front() == "a,h_star,stability,multiplier");
  CHECK(rows.size() > 200);
  std::map<std::string, int> per_a;
  for (std::size_t i = 1; i < rows.size(); ++i) ++per_a[rows[i].substr(0, rows[i].find(','))];
  CHECK(per_a.size() == 200);
  for (const auto& [a, n] : per_a) CHECK((n == 1 || n == 3));
  const auto meta = slurp(dir / "bif.csv.meta");
  CHECK(meta.find("version=") != std::string::npos);
  CHECK(meta.find("wall_seconds=") != std::string::npos);
  CHECK(meta.find("opt.steps=200") != std::string::npos);

  REQUIRE(run({"bifurcation", "--c", "0.5", "--a-min", "0.2", "--a-max", "1.8", "--steps", "200", "--out",
               dir / "again.csv"}).code == 0);
  CHECK(slurp(dir / "again.csv") == csv);

  REQUIRE(run({"bifurcation", "--sweep", "drive", "--a", "1.5", "--steps", "11", "--out", dir / "d.csv"}).code == 0);
  CHECK(lines(slurp(dir / "d.csv")).front() == "a,drive,h_star,stability,multiplier");
}

TEST_CASE("gradient check") {
  const auto r = run({"grad-check", "--cell", "nbrc", "--hidden", "8", "--T", "10", "--seed", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_error=") != std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.err.find("# seed=3") != std::string::npos);
  // A large step makes the difference quotient too coarse to pass.
  CHECK(run({"grad-check", "--cell", "gru", "--eps", "0.3"}).code == 1);
}

TEST_CASE("train, eval, trace") {
  TempDir dir("brc_cli_train");
  const std::vector<std::string> args{"train", "--cell", "brc", "--benchmark", "copy_first", "--T", "50", "--layers",
                                      "2x8", "--iters", "20", "--batch", "8", "--eval-every", "10", "--test-size",
                                      "50", "--seed", "7", "--out"};
  auto a = args;
  a.push_back(dir / "run1");
  const auto r = run(a);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "run1/log.csv"));
  CHECK(fs::exists(dir / "run1/model.ckpt"));
  const auto meta = slurp(dir / "run1/metadata.txt");
  CHECK(meta.find("seed=7") != std::string::npos);
  CHECK(meta.find("opt.layers=2x8") != std::string::npos);
  CHECK(meta.find("wall_seconds=") != std::string::npos);
  const auto log = lines(slurp(dir / "run1/log.csv"));
  CHECK(log.size() == 4);  // header, iterations 0, 10, 20

  auto b = args;
  b.push_back(dir / "run2");
  REQUIRE(run(b).code == 0);
  CHECK(without_seconds(slurp(dir / "run1/log.csv")) == without_seconds(slurp(dir / "run2/log.csv")));
  CHECK(slurp(dir / "run1/model.ckpt").find("seed=7") != std::string::npos);
  std::string ck1 = slurp(dir / "run1/model.ckpt"), ck2 = slurp(dir / "run2/model.ckpt");
  CHECK(ck1.substr(ck1.find("tensors")) == ck2.substr(ck2.find("tensors")));

  const auto ev = run({"eval", "--model", dir / "run1/model.ckpt", "--test-size", "50"});
  REQUIRE(ev.code == 0);
  const std::string last = log.back();
  const std::string logged = last.substr(0, last.rfind(',')).substr(last.substr(0, last.rfind(',')).rfind(',') + 1);
  CHECK(std::stod(ev.out.substr(ev.out.find("mse=") + 4)) == doctest::Approx(std::stod(logged)).epsilon(1e-8));
  const auto zero = run({"eval", "--model", dir / "run1/model.ckpt", "--predict-zero", "--out", dir / "zero.csv"});
  REQUIRE(zero.code == 0);
  CHECK(zero.out.find("predictor=zero") != std::string::npos);
  CHECK(lines(slurp(dir / "zero.csv")).front() == "metric,value");

  const auto tr = run({"trace", "--model", dir / "run1/model.ckpt", "--out", dir / "trace.csv"});
  REQUIRE(tr.code == 0);
  const auto trace = lines(slurp(dir / "trace.csv"));
  CHECK(trace.front() == "t,layer,bistable_fraction,mean_c");
  CHECK(trace.size() == 1 + 50 * 2);

  REQUIRE(run({"train", "--cell", "gru", "--layers", "4", "--iters", "2", "--batch", "2", "--test-size", "4",
               "--out", dir / "gru"}).code == 0);
  CHECK(run({"trace", "--model", dir / "gru/model.ckpt"}).code == 1);
}

TEST_CASE("classification training on procedural digits") {
  TempDir dir("brc_cli_digits");
  const auto r = run({"train", "--cell", "nbrc", "--benchmark", "seq_mnist", "--synthetic", "50", "--image-side",
                      "4", "--layers", "6", "--iters", "3", "--batch", "4", "--test-size", "10", "--out",
                      dir / "m"});
  REQUIRE(r.code == 0);
  const auto ev = run({"eval", "--model", dir / "m/model.ckpt"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("accuracy=") != std::string::npos);
}

TEST_CASE("gen-data writes reproducible test sets") {
  TempDir dir("brc_cli_gen");
  const std::vector<std::string> base{"gen-data", "--benchmark", "denoising", "--T", "20", "--N", "5", "--count", "3",
                                      "--seed", "2", "--out"};
  auto a = base, b = base;
  a.push_back(dir / "a");
  b.push_back(dir / "b");
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  const auto inputs = lines(slurp(dir / "a/inputs.csv"));
  CHECK(inputs.front() == "sample,t,x0,x1");
  CHECK(inputs.size() == 1 + 3 * 20);
  CHECK(lines(slurp(dir / "a/targets.csv")).front() == "sample,y0,y1,y2,y3,y4");
  CHECK(slurp(dir / "a/inputs.csv") == slurp(dir / "b/inputs.csv"));
  CHECK(slurp(dir / "a/targets.csv") == slurp(dir / "b/targets.csv"));
  CHECK(fs::exists(dir / "a/metadata.txt"));
}

TEST_CASE("scalar analysis commands") {
  TempDir dir("brc_cli_scalar");
  const auto fp = run({"fixed-points", "--a", "2.0", "--c", "0.5", "--out", dir / "fp.csv"});
  REQUIRE(fp.code == 0);
  CHECK(fp.out.find("count=3") != std::string::npos);
  CHECK(lines(slurp(dir / "fp.csv")).size() == 4);

  const auto pf = run({"pitchfork-check", "--c", "0.5"});
  CHECK(pf.code == 0);
  CHECK(pf.out.find("PASS") != std::string::npos);

  const auto sim = run({"simulate-cell", "--a", "1.5", "--c", "0.5", "--steps", "200", "--out", dir / "sim.csv"});
  REQUIRE(sim.code == 0);
  const auto traj = lines(slurp(dir / "sim.csv"));
  CHECK(traj.front() == "t,h");
  CHECK(traj.size() == 202);
  CHECK(fs::exists(dir / "sim.csv.meta"));
}

TEST_CASE("config files and flag precedence") {
  TempDir dir("brc_cli_config");
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# scalar sweep\nc = 0.3\nsteps=7\na_min=0.5\n";
  }
  REQUIRE(run({"bifurcation", "--config", dir / "run.cfg", "--steps", "5", "--out", dir / "b.csv"}).code == 0);
  const auto rows = lines(slurp(dir / "b.csv"));
  CHECK(rows[1].rfind("0.5,", 0) == 0);
  std::map<std::string, int> per_a;
  for (std::size_t i = 1; i < rows.size(); ++i) ++per_a[rows[i].substr(0, rows[i].find(','))];
  CHECK(per_a.size() == 5);
  const auto meta = slurp(dir / "b.csv.meta");
  CHECK(meta.find("opt.c=0.3") != std::string::npos);
  CHECK(meta.find("config_file=") != std::string::npos);

  {
    std::ofstream bad(dir / "bad.cfg");
    bad << "just words\n";
  }
  CHECK(run({"bifurcation", "--config", dir / "bad.cfg"}).code == 2);
  CHECK(run({"bifurcation", "--config", dir / "missing.cfg"}).code == 2);

  const auto merged = brc::cli::merge_config({"train", "--iters=5"}, {{"iters", "9"}, {"eval_every", "3"}});
  CHECK(merged == std::vector<std::string>{"train", "--iters=5", "--eval-every=3"});
}

TEST_CASE("usage and runtime errors") {
  CHECK(run({}).code == 2);
  CHECK(run({"fly"}).code == 2);
  const auto bad = run({"train", "--bogus"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("Usage") != std::string::npos);
  CHECK(run({"train", "--T", "0", "--out", "/tmp/brc_never"}).code == 2);
  CHECK(!fs::exists("/tmp/brc_never"));
  CHECK(run({"train", "--cell", "mgu", "--out", "/tmp/brc_never"}).code == 2);
  CHECK(run({"train", "--benchmark", "denoising", "--T", "10", "--N", "8", "--out", "/tmp/brc_never"}).code == 2);
  CHECK(run({"train", "--benchmark", "seq_mnist", "--out", "/tmp/brc_never"}).code == 2);
  CHECK(run({"fixed-points", "--c", "1.5"}).code == 2);
  CHECK(run({"eval"}).code == 2);
  CHECK(run({"eval", "--model", "/nonexistent.ckpt"}).code == 1);
  CHECK(run({"train", "--benchmark", "seq_mnist", "--mnist-dir", "/nonexistent", "--iters", "1", "--out",
             "/tmp/brc_never"}).code == 1);
  fs::remove_all("/tmp/brc_never");
  const auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.rfind("0.1.0", 0) == 0);
}

}
