#include "brc/cli.hpp"

#include "brc/checkpoint.hpp"
#include "brc/dynamics.hpp"
#include "brc/gradcheck.hpp"
#include "brc/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef BRC_VERSION
#define BRC_VERSION "0.1.0"
#endif

namespace brc::cli {
namespace fs = std::filesystem;

namespace {

using Meta = std::map<std::string, std::string>;

// Flag problems found after parsing; reported like parse errors (exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

// ---------------------------------------------------------------------------
// Benchmark flags shared by train, eval, gen-data and trace

struct BenchFlags {
  std::string benchmark = "copy_first";
  Index T = 50;
  Index N = 0;
  Index n_black = 0;
  Index image_side = 0;
  bool pad32 = false;
  std::string mnist_dir;
  long synthetic = 0;
  long subset = 0;

  void add_to(CLI::App* app) {
    app->add_option("--benchmark", benchmark, "copy_first | denoising | sparse_copy | seq_mnist");
    app->add_option("--T", T, "sequence length (synthetic benchmarks)");
    app->add_option("--N", N, "denoising forgetting period");
    app->add_option("--n-black", n_black, "seq_mnist: trailing black pixels");
    app->add_option("--image-side", image_side, "seq_mnist: resample images to side x side (0 keeps 28x28)");
    app->add_flag("--pad32", pad32, "seq_mnist: zero-pad to 32x32 first");
    app->add_option("--mnist-dir", mnist_dir, "seq_mnist: directory with the four standard IDX files");
    app->add_option("--synthetic", synthetic, "seq_mnist: use N procedural digits instead of IDX files");
    app->add_option("--subset", subset, "seq_mnist: keep only the first N training images");
  }

  SampleSpec spec() const {
    SampleSpec s;
    s.kind = parse_benchmark_kind(benchmark);
    s.T = T;
    s.N = N;
    s.n_black = n_black;
    s.image_side = image_side;
    s.pad32 = pad32;
    validate(s);
    if (s.kind == BenchmarkKind::seq_mnist) {
      require(!mnist_dir.empty() || synthetic > 0, "seq_mnist needs --mnist-dir or --synthetic");
      require(subset >= 0, "--subset must be non-negative");
    }
    return s;
  }

  void to_meta(Meta& m) const {
    m["benchmark"] = benchmark;
    m["T"] = std::to_string(T);
    m["N"] = std::to_string(N);
    m["n_black"] = std::to_string(n_black);
    m["image_side"] = std::to_string(image_side);
    m["pad32"] = pad32 ? "true" : "false";
    m["mnist_dir"] = mnist_dir;
    m["synthetic"] = std::to_string(synthetic);
    m["subset"] = std::to_string(subset);
  }

  static BenchFlags from_meta(const Meta& m) {
    BenchFlags f;
    auto get = [&](const char* key) -> std::string {
      auto it = m.find(key);
      if (it == m.end()) throw std::runtime_error(std::string("checkpoint lacks benchmark key '") + key + "'");
      return it->second;
    };
    f.benchmark = get("benchmark");
    f.T = std::stol(get("T"));
    f.N = std::stol(get("N"));
    f.n_black = std::stol(get("n_black"));
    f.image_side = std::stol(get("image_side"));
    f.pad32 = get("pad32") == "true";
    f.mnist_dir = get("mnist_dir");
    f.synthetic = std::stol(get("synthetic"));
    f.subset = std::stol(get("subset"));
    return f;
  }
};

MnistDataset take_first(MnistDataset d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  d.images.count = std::uint32_t(n);
  d.images.pixels.resize(n * d.images.rows * d.images.cols);
  d.labels.labels.resize(n);
  return d;
}

Benchmark make_benchmark(const BenchFlags& f) {
  const SampleSpec spec = f.spec();
  if (spec.kind != BenchmarkKind::seq_mnist) return Benchmark(spec);
  MnistDataset train, test;
  if (!f.mnist_dir.empty()) {
    const fs::path dir(f.mnist_dir);
    train = load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    test = load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  } else {
    train = synthetic_digits(std::size_t(f.synthetic), 1);
    test = synthetic_digits(std::max<std::size_t>(std::size_t(f.synthetic) / 5, 1), 2);
  }
  train = take_first(std::move(train), std::size_t(f.subset));
  return Benchmark(spec, std::make_shared<const MnistDataset>(std::move(train)),
                   std::make_shared<const MnistDataset>(std::move(test)));
}

// ---------------------------------------------------------------------------
// Metadata records

struct RunContext {
  std::vector<std::string> args;
  std::string command;
  std::string config_path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::string started = utc_now();
  std::ostream* err = nullptr;
  Meta options;  // final value of every flag of the subcommand

  Meta base(std::uint64_t seed) const {
    Meta m = options;
    m["version"] = version();
    m["command"] = command;
    std::string joined;
    for (const auto& a : args) joined += (joined.empty() ? "" : " ") + a;
    m["argv"] = joined;
    m["config_file"] = config_path;
    m["seed"] = std::to_string(seed);
    m["started_utc"] = started;
    return m;
  }

  void write(const fs::path& path, Meta m) const {
    m["wall_seconds"] = fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    auto f = open_out(path);
    for (const auto& [k, v] : m) f << k << '=' << v << '\n';
  }

  // Commands without an output path print the record to stderr instead.
  void write_or_print(const std::string& out_path, const fs::path& meta_path, Meta m) const {
    if (!out_path.empty()) return write(meta_path, std::move(m));
    m["wall_seconds"] = fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    for (const auto& [k, v] : m) *err << "# " << k << '=' << v << '\n';
  }
};

void add_options_meta(const CLI::App* app, Meta& m) {
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "--config") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    m["opt." + name.substr(name.find_first_not_of('-'))] = value;
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct Flags {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;
  std::string config;

  // train / grad-check
  std::string cell = "brc";
  std::string layers = "2x50";
  long iters = 30000;
  Index batch = 100;
  double lr = 1e-3;
  double clip = 5.0;
  long eval_every = 1000;
  Index test_size = 2000;

  // eval / trace
  std::string model;
  bool predict_zero = false;

  // gen-data
  Index count = 1000;

  // scalar analysis
  double a = 1.5;
  double c = 0.5;
  double drive = 0.0;
  double a_min = 0.2;
  double a_max = 1.8;
  int steps = 200;
  std::string sweep = "a";
  double drive_min = -1.0;
  double drive_max = 1.0;
  double pulse = 1.0;
  int pulse_steps = 5;
  double h0 = 0.0;

  // grad-check
  Index hidden = 8;
  Index depth = 1;
  Index input_dim = 2;
  Index output_dim = 3;
  double eps = 1e-5;
  double tol = 1e-5;

  BenchFlags bench;
};

int cmd_train(const Flags& f, const RunContext& ctx, std::ostream& out) {
  NetworkSpec netspec;
  SampleSpec spec;
  TrainConfig cfg;
  try {
    spec = f.bench.spec();
    netspec.cell = parse_cell_kind(f.cell);
    netspec.layer_sizes = parse_layers(f.layers);
    netspec.input_dim = spec.input_dim();
    netspec.output_dim = spec.output_dim();
    netspec.head = spec.classification() ? OutputHead::softmax : OutputHead::linear;
    netspec.validate();
    cfg.iterations = f.iters;
    cfg.batch_size = f.batch;
    cfg.eval_every = f.eval_every;
    cfg.seed = f.seed;
    cfg.loss = spec.classification() ? LossKind::cross_entropy : LossKind::mse;
    cfg.lr = f.lr;
    cfg.clip_norm = f.clip;
    cfg.test_size = f.test_size;
    cfg.workers = f.workers;
    cfg.validate();
    require(f.lr > 0 && f.clip > 0, "--lr and --clip must be positive");
    require(!f.out.empty(), "--out is required");
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const Benchmark bench = make_benchmark(f.bench);

  const fs::path dir(f.out);
  fs::create_directories(dir);
  auto result = train<double>(netspec, bench, cfg);
  {
    auto log = open_out(dir / "log.csv");
    result.log.write_csv(log);
  }
  Meta meta = ctx.base(f.seed);
  f.bench.to_meta(meta);
  meta["iterations"] = std::to_string(cfg.iterations);
  Checkpoint ckpt{result.net, meta};
  save_checkpoint(dir / "model.ckpt", ckpt);
  ctx.write(dir / "metadata.txt", meta);

  const auto& last = result.log.records.back();
  out << "train cell=" << f.cell << " benchmark=" << f.bench.benchmark << " iterations=" << last.iteration
      << " train_loss=" << last.train_loss << " test_metric=" << last.test_metric << " out=" << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Flags& f, const RunContext& ctx, std::ostream& out, const CLI::App* app) {
  if (f.model.empty()) throw UsageError("--model is required");
  if (f.test_size < 1) throw UsageError("--test-size must be at least 1");
  const Checkpoint ckpt = load_checkpoint(f.model);
  const BenchFlags bf = BenchFlags::from_meta(ckpt.meta);
  std::uint64_t seed = f.seed;
  if (app->count("--seed") == 0 && ckpt.meta.count("seed")) seed = std::stoull(ckpt.meta.at("seed"));
  const Benchmark bench = make_benchmark(bf);
  Rng test_rng = Rng(seed).split(3);
  const auto set = make_test_set<double>(bench, f.test_size, test_rng);

  double metric = 0;
  if (f.predict_zero) {
    Index n = 0;
    for (const auto& b : set.batches) {
      const MatrixXd zeros = MatrixXd::Zero(ckpt.net.spec.output_dim, b.size());
      metric += double(set.classification ? accuracy<double>(zeros, b.labels) : mse_loss<double>(zeros, b.targets).value) *
                double(b.size());
      n += b.size();
    }
    metric /= double(n);
  } else {
    metric = evaluate(ckpt.net, set);
  }
  const std::string name = set.classification ? "accuracy" : "mse";
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    csv << "metric,value\n" << name << ',' << fmt(metric) << '\n';
  }
  Meta meta = ctx.base(seed);
  meta["model"] = f.model;
  ctx.write_or_print(f.out, f.out + ".meta", meta);
  out << "eval " << name << '=' << fmt(metric) << " samples=" << f.test_size << (f.predict_zero ? " predictor=zero" : "")
      << '\n';
  return 0;
}

int cmd_gen_data(const Flags& f, const RunContext& ctx, std::ostream& out) {
  try {
    f.bench.spec();
    require(f.count >= 1, "--count must be at least 1");
    require(!f.out.empty(), "--out is required");
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const Benchmark bench = make_benchmark(f.bench);
  Rng rng = Rng(f.seed).split(3);
  const auto samples = bench.test_set<double>(f.count, rng);

  const fs::path dir(f.out);
  fs::create_directories(dir);
  auto inputs = open_out(dir / "inputs.csv");
  auto targets = open_out(dir / "targets.csv");
  inputs << std::setprecision(std::numeric_limits<double>::max_digits10);
  targets << std::setprecision(std::numeric_limits<double>::max_digits10);
  const Index d = samples.front().inputs.cols();
  inputs << "sample,t";
  for (Index k = 0; k < d; ++k) inputs << ",x" << k;
  inputs << '\n';
  const bool classification = bench.spec().classification();
  targets << "sample";
  if (classification)
    targets << ",label";
  else
    for (Index k = 0; k < samples.front().target.size(); ++k) targets << ",y" << k;
  targets << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    for (Index t = 0; t < s.inputs.rows(); ++t) {
      inputs << i << ',' << t;
      for (Index k = 0; k < d; ++k) inputs << ',' << s.inputs(t, k);
      inputs << '\n';
    }
    targets << i;
    if (classification)
      targets << ',' << s.label;
    else
      for (Index k = 0; k < s.target.size(); ++k) targets << ',' << s.target(k);
    targets << '\n';
  }
  Meta meta = ctx.base(f.seed);
  f.bench.to_meta(meta);
  ctx.write(dir / "metadata.txt", meta);
  out << "gen-data benchmark=" << f.bench.benchmark << " samples=" << samples.size() << " out=" << dir.string()
      << '\n';
  return 0;
}

int cmd_fixed_points(const Flags& f, const RunContext& ctx, std::ostream& out) {
  const ScalarCellConfig<double> cfg{f.a, f.c, f.drive};
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const auto report = find_fixed_points(cfg);
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    write_fixed_points_csv(csv, report);
  }
  ctx.write_or_print(f.out, f.out + ".meta", ctx.base(f.seed));
  out << "fixed-points a=" << f.a << " c=" << f.c << " drive=" << f.drive << " count=" << report.points.size();
  for (const auto& p : report.points) out << ' ' << fmt(p.h_star) << ':' << to_string(p.stability);
  out << '\n';
  return 0;
}

int cmd_bifurcation(const Flags& f, const RunContext& ctx, std::ostream& out) {
  std::vector<BifurcationRow<double>> rows;
  const bool by_drive = f.sweep == "drive";
  try {
    require(f.sweep == "a" || by_drive, "--sweep must be 'a' or 'drive'");
    require(f.c > 0 && f.c < 1, "--c must lie in (0, 1)");
    require(f.steps >= 1, "--steps must be at least 1");
    if (by_drive) {
      ScalarCellConfig<double>{f.a, f.c, 0.0}.validate();
      require(f.drive_min <= f.drive_max, "--drive-min must not exceed --drive-max");
    } else {
      require(f.a_min > 0 && f.a_max < 2 && f.a_min <= f.a_max, "a range must lie in (0, 2)");
    }
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  rows = by_drive ? drive_sweep(f.a, f.c, f.drive_min, f.drive_max, f.steps)
                  : bifurcation_sweep(f.a_min, f.a_max, f.steps, f.c, f.drive);
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    write_bifurcation_csv(csv, rows, by_drive);
  }
  ctx.write_or_print(f.out, f.out + ".meta", ctx.base(f.seed));
  out << "bifurcation sweep=" << f.sweep << " c=" << f.c << " steps=" << f.steps << " rows=" << rows.size() << '\n';
  return 0;
}

int cmd_pitchfork(const Flags& f, const RunContext& ctx, std::ostream& out) {
  if (!(f.c > 0 && f.c < 1)) throw UsageError("--c must lie in (0, 1)");
  const auto report = check_pitchfork_conditions(f.c);
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    csv << std::setprecision(std::numeric_limits<double>::max_digits10);
    csv << "quantity,closed_form,finite_difference\n";
    for (const auto& q : report.values) csv << q.name << ',' << q.closed_form << ',' << q.finite_difference << '\n';
  }
  ctx.write_or_print(f.out, f.out + ".meta", ctx.base(f.seed));
  const bool ok = report.equalities_hold() && report.closed_forms_match() && report.supercritical();
  out << "pitchfork-check c=" << f.c;
  for (const auto& q : report.values) out << ' ' << q.name << '=' << fmt(q.closed_form) << '/' << fmt(q.finite_difference);
  out << (ok ? " PASS" : " FAIL") << '\n';
  return ok ? 0 : 1;
}

int cmd_simulate(const Flags& f, const RunContext& ctx, std::ostream& out) {
  if (!(f.c >= 0 && f.c <= 1) || !(f.a >= 0 && f.a <= 2)) throw UsageError("--a must lie in [0, 2] and --c in [0, 1]");
  if (f.steps < 1 || f.pulse_steps < 0 || f.pulse_steps > f.steps)
    throw UsageError("need --steps >= 1 and 0 <= --pulse-steps <= --steps");
  const auto n = std::size_t(f.steps);
  std::vector<double> a(n, f.a), c(n, f.c), drive(n, f.drive);
  for (std::size_t t = 0; t < std::size_t(f.pulse_steps); ++t) drive[t] += f.pulse;
  const auto traj = simulate_scalar_cell<double>(a, c, drive, f.h0);
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    write_trajectory_csv(csv, traj);
  }
  ctx.write_or_print(f.out, f.out + ".meta", ctx.base(f.seed));
  out << "simulate-cell a=" << f.a << " c=" << f.c << " steps=" << f.steps << " final_h=" << fmt(traj.back()) << '\n';
  return 0;
}

int cmd_trace(const Flags& f, const RunContext& ctx, std::ostream& out, const CLI::App* app) {
  if (f.model.empty()) throw UsageError("--model is required");
  const Checkpoint ckpt = load_checkpoint(f.model);
  std::uint64_t seed = f.seed;
  if (app->count("--seed") == 0 && ckpt.meta.count("seed")) seed = std::stoull(ckpt.meta.at("seed"));
  const Benchmark bench = make_benchmark(BenchFlags::from_meta(ckpt.meta));
  Rng rng = Rng(seed).split(3);
  const auto sample = bench.sample<double>(rng, true);
  const LayerTrace trace = trace_layers(ckpt.net, sample.inputs);
  if (!f.out.empty()) {
    auto csv = open_out(f.out);
    write_layer_trace_csv(csv, trace);
  }
  Meta meta = ctx.base(seed);
  meta["model"] = f.model;
  ctx.write_or_print(f.out, f.out + ".meta", meta);
  double frac = 0, mean_c = 0;
  for (const auto& r : trace.rows) {
    frac += r.bistable_fraction;
    mean_c += r.mean_c;
  }
  const double rows = double(std::max<std::size_t>(trace.rows.size(), 1));
  out << "trace steps=" << sample.inputs.rows() << " layers=" << ckpt.net.layers.size()
      << " mean_bistable_fraction=" << frac / rows << " mean_c=" << mean_c / rows << '\n';
  return 0;
}

int cmd_grad_check(const Flags& f, const RunContext& ctx, std::ostream& out) {
  NetworkSpec spec;
  try {
    spec.cell = parse_cell_kind(f.cell);
    require(f.hidden >= 1 && f.depth >= 1 && f.bench.T >= 1 && f.batch >= 1, "sizes must be at least 1");
    require(f.input_dim >= 1 && f.output_dim >= 1, "dims must be at least 1");
    require(f.eps > 0 && f.tol > 0, "--eps and --tol must be positive");
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  spec.layer_sizes.assign(std::size_t(f.depth), f.hidden);
  spec.input_dim = f.input_dim;
  spec.output_dim = f.output_dim;
  Rng rng(f.seed);
  const auto net = Network<double>::random(spec, rng);
  SequenceBatch<double> batch;
  for (Index t = 0; t < f.bench.T; ++t) batch.inputs.push_back(uniform_matrix<double>(f.input_dim, f.batch, -1.0, 1.0, rng));
  batch.targets = uniform_matrix<double>(f.output_dim, f.batch, -1.0, 1.0, rng);
  const auto r = grad_check(net, batch, LossKind::mse, GradCheckOptions{f.eps, 1e-8});
  ctx.write_or_print(f.out, f.out, ctx.base(f.seed));
  const bool ok = r.max_rel_error <= f.tol;
  out << "grad-check cell=" << f.cell << " params=" << r.checked << " max_rel_error=" << r.max_rel_error
      << " max_abs_error=" << r.max_abs_error << " worst=" << r.worst << (ok ? " PASS" : " FAIL") << '\n';
  return ok ? 0 : 1;
}

std::string config_path_in(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return "";
}

}  // namespace

std::string version() { return BRC_VERSION; }

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::map<std::string, std::string> config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    config[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return config;
}

std::vector<std::string> merge_config(const std::vector<std::string>& args,
                                      const std::map<std::string, std::string>& config) {
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : config) {
    std::string flag = "--" + key;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    bool present = false;
    for (const auto& a : args) present = present || a == flag || a.rfind(flag + "=", 0) == 0;
    if (!present) merged.push_back(flag + "=" + value);
  }
  return merged;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bistable recurrent cells: training, evaluation and dynamics analysis", "brc"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version());
  Flags f;

  auto common = [&](CLI::App* sub, bool with_workers) {
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output path");
    sub->add_option("--config", f.config, "key=value file; explicit flags take precedence");
    if (with_workers) sub->add_option("--workers", f.workers, "threads for batch fan-out");
  };

  auto* train_cmd = app.add_subcommand("train", "train a network on a benchmark; writes log.csv, model.ckpt, metadata.txt");
  common(train_cmd, true);
  f.bench.add_to(train_cmd);
  train_cmd->add_option("--cell", f.cell, "brc | nbrc | gru | lstm | rnn");
  train_cmd->add_option("--layers", f.layers, "NxM or comma-separated widths");
  train_cmd->add_option("--iters", f.iters, "training iterations");
  train_cmd->add_option("--batch", f.batch, "minibatch size");
  train_cmd->add_option("--lr", f.lr, "Adam learning rate");
  train_cmd->add_option("--clip", f.clip, "global gradient-norm clip");
  train_cmd->add_option("--eval-every", f.eval_every, "iterations between log records");
  train_cmd->add_option("--test-size", f.test_size, "test-set size");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its benchmark's test set");
  common(eval_cmd, false);
  eval_cmd->add_option("--model", f.model, "checkpoint path");
  eval_cmd->add_option("--test-size", f.test_size, "test-set size");
  eval_cmd->add_flag("--predict-zero", f.predict_zero, "score the all-zero predictor instead of the model");

  auto* gen_cmd = app.add_subcommand("gen-data", "write a fixed benchmark test set as CSV");
  common(gen_cmd, false);
  f.bench.add_to(gen_cmd);
  gen_cmd->add_option("--count", f.count, "number of sequences");

  auto* fp_cmd = app.add_subcommand("fixed-points", "fixed points of the scalar cell");
  common(fp_cmd, false);
  fp_cmd->add_option("--a", f.a, "feedback gain in (0, 2)");
  fp_cmd->add_option("--c", f.c, "update gate in (0, 1)");
  fp_cmd->add_option("--drive", f.drive, "constant input drive");

  auto* bif_cmd = app.add_subcommand("bifurcation", "fixed points over a sweep of a (or of the drive)");
  common(bif_cmd, false);
  bif_cmd->add_option("--sweep", f.sweep, "a | drive");
  bif_cmd->add_option("--c", f.c, "update gate in (0, 1)");
  bif_cmd->add_option("--a-min", f.a_min, "sweep start");
  bif_cmd->add_option("--a-max", f.a_max, "sweep end");
  bif_cmd->add_option("--steps", f.steps, "grid points");
  bif_cmd->add_option("--drive", f.drive, "constant drive for the a sweep");
  bif_cmd->add_option("--a", f.a, "gain for the drive sweep");
  bif_cmd->add_option("--drive-min", f.drive_min, "drive sweep start");
  bif_cmd->add_option("--drive-max", f.drive_max, "drive sweep end");

  auto* pf_cmd = app.add_subcommand("pitchfork-check", "pitchfork conditions at h=0, a=1");
  common(pf_cmd, false);
  pf_cmd->add_option("--c", f.c, "update gate in (0, 1)");

  auto* sim_cmd = app.add_subcommand("simulate-cell", "scalar cell response to an input pulse");
  common(sim_cmd, false);
  sim_cmd->add_option("--a", f.a, "feedback gain");
  sim_cmd->add_option("--c", f.c, "update gate");
  sim_cmd->add_option("--drive", f.drive, "baseline drive");
  sim_cmd->add_option("--pulse", f.pulse, "pulse amplitude added to the drive");
  sim_cmd->add_option("--pulse-steps", f.pulse_steps, "pulse duration at the start");
  sim_cmd->add_option("--steps", f.steps, "total steps");
  sim_cmd->add_option("--h0", f.h0, "initial state");

  auto* trace_cmd = app.add_subcommand("trace", "per-layer bistable fraction and mean c over one test sequence");
  common(trace_cmd, false);
  trace_cmd->add_option("--model", f.model, "BRC or nBRC checkpoint");

  auto* gc_cmd = app.add_subcommand("grad-check", "analytic BPTT gradient vs central differences");
  common(gc_cmd, false);
  gc_cmd->add_option("--cell", f.cell, "brc | nbrc | gru | lstm | rnn");
  gc_cmd->add_option("--hidden", f.hidden, "neurons per layer");
  gc_cmd->add_option("--layers", f.depth, "number of layers");
  gc_cmd->add_option("--T", f.bench.T, "sequence length");
  gc_cmd->add_option("--batch", f.batch, "batch size")->default_val(2);
  gc_cmd->add_option("--input-dim", f.input_dim, "input features");
  gc_cmd->add_option("--output-dim", f.output_dim, "outputs");
  gc_cmd->add_option("--eps", f.eps, "finite-difference step");
  gc_cmd->add_option("--tol", f.tol, "maximum accepted relative error");

  RunContext ctx;
  ctx.err = &err;
  std::vector<std::string> args = raw_args;
  try {
    ctx.config_path = config_path_in(raw_args);
    if (!ctx.config_path.empty()) args = merge_config(raw_args, read_config_file(ctx.config_path));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  ctx.args = args;

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    std::string help;
    for (auto* sub : app.get_subcommands()) help = sub->help();
    err << (help.empty() ? app.help() : help);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  ctx.command = sub->get_name();
  try {
    add_options_meta(sub, ctx.options);
    if (ctx.command == "train") return cmd_train(f, ctx, out);
    if (ctx.command == "eval") return cmd_eval(f, ctx, out, sub);
    if (ctx.command == "gen-data") return cmd_gen_data(f, ctx, out);
    if (ctx.command == "fixed-points") return cmd_fixed_points(f, ctx, out);
    if (ctx.command == "bifurcation") return cmd_bifurcation(f, ctx, out);
    if (ctx.command == "pitchfork-check") return cmd_pitchfork(f, ctx, out);
    if (ctx.command == "simulate-cell") return cmd_simulate(f, ctx, out);
    if (ctx.command == "trace") return cmd_trace(f, ctx, out, sub);
    if (ctx.command == "grad-check") return cmd_grad_check(f, ctx, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n' << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace brc::cli
