// Dynamical-systems analysis of the bistable cell in scalar form
//
//   h_t = F(h_{t-1}) = c h_{t-1} + (1 - c) tanh(drive + a h_{t-1}),
//   G(h) = h - F(h),
//
// plus runtime instrumentation of BRC/nBRC layers.
#pragma once

#include "brc/network.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

namespace brc {

/// Intrinsic current I = v - alpha tanh(v), evaluated pointwise.
template <typename Scalar>
Vector<Scalar> iv_curve(Scalar alpha, const Vector<Scalar>& v_grid) {
  return (v_grid.array() - alpha * v_grid.array().tanh()).matrix();
}

template <typename Scalar>
struct ScalarCellConfig {
  Scalar a = 1;      // feedback gain; cells produce (0, 2), analysis accepts [0, 2]
  Scalar c = 0.5;    // update gate, (0, 1)
  Scalar drive = 0;  // U x_t

  void validate() const {
    require(a >= 0 && a <= 2, "scalar cell: a must lie in [0, 2]");
    require(c > 0 && c < 1, "scalar cell: c must lie in (0, 1)");
    require(std::isfinite(double(drive)), "scalar cell: drive must be finite");
  }
};

template <typename Scalar>
Scalar cell_map(const ScalarCellConfig<Scalar>& cfg, Scalar h) {
  return cfg.c * h + (Scalar(1) - cfg.c) * std::tanh(cfg.drive + cfg.a * h);
}

template <typename Scalar>
Scalar cell_residual(const ScalarCellConfig<Scalar>& cfg, Scalar h) {
  return h - cell_map(cfg, h);
}

/// dF/dh = c + (1 - c) a (1 - tanh^2(drive + a h)).
template <typename Scalar>
Scalar cell_multiplier(const ScalarCellConfig<Scalar>& cfg, Scalar h) {
  const Scalar t = std::tanh(cfg.drive + cfg.a * h);
  return cfg.c + (Scalar(1) - cfg.c) * cfg.a * (Scalar(1) - t * t);
}

enum class Stability { stable, unstable, singular };

inline std::string_view to_string(Stability s) {
  switch (s) {
    case Stability::stable: return "stable";
    case Stability::unstable: return "unstable";
    case Stability::singular: return "singular";
  }
  return "?";
}

template <typename Scalar>
struct FixedPoint {
  Scalar h_star;
  Stability stability;
  Scalar multiplier;
};

template <typename Scalar>
struct FixedPointReport {
  std::vector<FixedPoint<Scalar>> points;  // ascending in h_star

  std::size_t stable_count() const {
    std::size_t n = 0;
    for (const auto& p : points) n += p.stability == Stability::stable;
    return n;
  }
};

struct FixedPointOptions {
  double lo = -2.0;            // |h*| <= 1 always holds, the margin guards bracketing
  double hi = 2.0;
  int grid = 4001;             // odd, so h = 0 is a grid node
  double root_tol = 1e-12;     // |G(h*)| bound
  double singular_tol = 1e-6;  // |multiplier - 1| band
};

template <typename Scalar>
Stability classify(Scalar multiplier, double singular_tol) {
  if (std::abs(double(multiplier) - 1.0) < singular_tol) return Stability::singular;
  return std::abs(multiplier) < Scalar(1) ? Stability::stable : Stability::unstable;
}

/// All roots of G on [lo, hi]: sign changes on a uniform grid, refined by
/// bisection to machine precision; exact zeros at grid nodes are kept as is.
template <typename Scalar>
FixedPointReport<Scalar> find_fixed_points(const ScalarCellConfig<Scalar>& cfg, const FixedPointOptions& opt = {}) {
  cfg.validate();
  require(opt.grid >= 3 && opt.hi > opt.lo, "find_fixed_points: bad search grid");
  auto node = [&](int i) { return Scalar(opt.lo) + Scalar(opt.hi - opt.lo) * Scalar(i) / Scalar(opt.grid - 1); };
  FixedPointReport<Scalar> report;
  auto add = [&](Scalar h) {
    const Scalar m = cell_multiplier(cfg, h);
    report.points.push_back({h, classify(m, opt.singular_tol), m});
  };

  Scalar x0 = node(0), g0 = cell_residual(cfg, x0);
  if (g0 == Scalar(0)) add(x0);
  for (int i = 1; i < opt.grid; ++i) {
    const Scalar x1 = node(i), g1 = cell_residual(cfg, x1);
    if (g1 == Scalar(0)) {
      add(x1);
    } else if (g0 != Scalar(0) && (g0 < 0) != (g1 < 0)) {
      Scalar lo = x0, hi = x1, glo = g0;
      for (int iter = 0; iter < 200; ++iter) {
        const Scalar mid = Scalar(0.5) * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const Scalar gm = cell_residual(cfg, mid);
        if (gm == Scalar(0)) {
          lo = hi = mid;
          break;
        }
        if ((gm < 0) == (glo < 0)) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      const Scalar root = std::abs(cell_residual(cfg, lo)) <= std::abs(cell_residual(cfg, hi)) ? lo : hi;
      if (std::abs(double(cell_residual(cfg, root))) < opt.root_tol) add(root);
    }
    x0 = x1;
    g0 = g1;
  }
  return report;
}

template <typename Scalar>
struct BifurcationRow {
  Scalar a;
  Scalar drive;
  FixedPoint<Scalar> point;
};

/// Fixed points for `steps` evenly spaced gains in [a_min, a_max].
template <typename Scalar>
std::vector<BifurcationRow<Scalar>> bifurcation_sweep(Scalar a_min, Scalar a_max, int steps, Scalar c,
                                                      Scalar drive = 0, const FixedPointOptions& opt = {}) {
  require(a_min > 0 && a_max < 2 && a_min <= a_max, "bifurcation_sweep: a range must lie in (0, 2)");
  require(steps >= 1, "bifurcation_sweep: need at least one step");
  std::vector<BifurcationRow<Scalar>> rows;
  for (int i = 0; i < steps; ++i) {
    const Scalar a = steps == 1 ? a_min : a_min + (a_max - a_min) * Scalar(i) / Scalar(steps - 1);
    for (const auto& p : find_fixed_points(ScalarCellConfig<Scalar>{a, c, drive}, opt).points)
      rows.push_back({a, drive, p});
  }
  return rows;
}

/// Fixed points for `steps` evenly spaced drives at fixed (a, c); shows where
/// the outer branches fold away under a sustained input.
template <typename Scalar>
std::vector<BifurcationRow<Scalar>> drive_sweep(Scalar a, Scalar c, Scalar drive_min, Scalar drive_max, int steps,
                                                const FixedPointOptions& opt = {}) {
  require(drive_min <= drive_max && steps >= 1, "drive_sweep: bad range");
  std::vector<BifurcationRow<Scalar>> rows;
  for (int i = 0; i < steps; ++i) {
    const Scalar d = steps == 1 ? drive_min : drive_min + (drive_max - drive_min) * Scalar(i) / Scalar(steps - 1);
    for (const auto& p : find_fixed_points(ScalarCellConfig<Scalar>{a, c, d}, opt).points) rows.push_back({a, d, p});
  }
  return rows;
}

/// Largest |drive| (searched on a grid then refined) for which the zero-drive
/// cell with gain a still has three fixed points. Zero when a <= 1.
template <typename Scalar>
Scalar bistable_drive_limit(Scalar a, Scalar c, const FixedPointOptions& opt = {}) {
  auto count = [&](Scalar d) { return find_fixed_points(ScalarCellConfig<Scalar>{a, c, d}, opt).points.size(); };
  if (count(Scalar(0)) < 3) return Scalar(0);
  Scalar lo = 0, hi = Scalar(0.05);
  while (count(hi) >= 3 && hi < Scalar(2)) {
    lo = hi;
    hi *= Scalar(2);
  }
  for (int i = 0; i < 60; ++i) {
    const Scalar mid = Scalar(0.5) * (lo + hi);
    (count(mid) >= 3 ? lo : hi) = mid;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Pitchfork conditions at (h, a) = (0, 1)

struct PitchforkQuantity {
  std::string_view name;
  double closed_form;
  double finite_difference;
};

struct PitchforkReport {
  double c;
  // G, dG/dh, d2G/dh2, dG/da, d3G/dh3, d2G/(dh da), in that order.
  std::array<PitchforkQuantity, 6> values;

  bool equalities_hold(double tol = 1e-9) const {
    for (std::size_t i = 0; i < 4; ++i)
      if (std::abs(values[i].closed_form) >= tol || std::abs(values[i].finite_difference) >= tol) return false;
    return true;
  }
  bool closed_forms_match(double tol = 1e-6) const {
    for (const auto& q : values)
      if (std::abs(q.closed_form - q.finite_difference) >= tol) return false;
    return true;
  }
  bool supercritical() const { return values[4].closed_form > 0 && values[5].closed_form < 0; }
};

namespace detail {

// One Richardson step on a central stencil with O(step^2) error.
template <typename F>
double richardson(F&& stencil, double step) {
  return (4.0 * stencil(step / 2) - stencil(step)) / 3.0;
}

}  // namespace detail

/// Evaluates the six pitchfork quantities at h = 0, a = 1 for drive 0, both
/// analytically and by Richardson-refined central differences (step 1e-3).
inline PitchforkReport check_pitchfork_conditions(double c, double step = 1e-3) {
  require(c > 0 && c < 1, "pitchfork: c must lie in (0, 1)");
  auto G = [c](double h, double a) { return h - (c * h + (1 - c) * std::tanh(a * h)); };
  const double h0 = 0.0, a0 = 1.0;

  // Analytic derivatives of G = (1-c)(h - tanh(a h)) at general (h, a).
  const double t = std::tanh(a0 * h0), s = 1 - t * t;
  const double g = (1 - c) * (h0 - t);
  const double g_h = (1 - c) * (a0 * (t * t - 1) + 1);
  const double g_hh = (1 - c) * 2 * a0 * a0 * t * s;
  const double g_a = (1 - c) * h0 * (t * t - 1) + 0.0;
  const double g_hhh = 2 * (1 - c);
  const double g_ha = c - 1;

  const double fd_h = detail::richardson([&](double e) { return (G(h0 + e, a0) - G(h0 - e, a0)) / (2 * e); }, step);
  const double fd_hh = detail::richardson(
      [&](double e) { return (G(h0 + e, a0) - 2 * G(h0, a0) + G(h0 - e, a0)) / (e * e); }, step);
  const double fd_a = detail::richardson([&](double e) { return (G(h0, a0 + e) - G(h0, a0 - e)) / (2 * e); }, step);
  const double fd_hhh = detail::richardson(
      [&](double e) {
        return (G(h0 + 2 * e, a0) - 2 * G(h0 + e, a0) + 2 * G(h0 - e, a0) - G(h0 - 2 * e, a0)) / (2 * e * e * e);
      },
      step);
  const double fd_ha = detail::richardson(
      [&](double e) {
        return (G(h0 + e, a0 + e) - G(h0 + e, a0 - e) - G(h0 - e, a0 + e) + G(h0 - e, a0 - e)) / (4 * e * e);
      },
      step);

  PitchforkReport r{c, {}};
  r.values = {PitchforkQuantity{"G", g, G(h0, a0)},
              PitchforkQuantity{"dG/dh", g_h, fd_h},
              PitchforkQuantity{"d2G/dh2", g_hh, fd_hh},
              PitchforkQuantity{"dG/da", g_a, fd_a},
              PitchforkQuantity{"d3G/dh3", g_hhh, fd_hhh},
              PitchforkQuantity{"d2G/dhda", g_ha, fd_ha}};
  return r;
}

// ---------------------------------------------------------------------------
// Scalar simulation and layer instrumentation

/// Iterates the scalar cell with per-step gain, gate and drive. Returns
/// h_0 .. h_T (length T + 1).
template <typename Scalar>
std::vector<Scalar> simulate_scalar_cell(std::span<const Scalar> a_series, std::span<const Scalar> c_series,
                                         std::span<const Scalar> drive_series, Scalar h0) {
  require(a_series.size() == c_series.size() && a_series.size() == drive_series.size(),
          "simulate_scalar_cell: series lengths differ");
  std::vector<Scalar> traj;
  traj.reserve(a_series.size() + 1);
  traj.push_back(h0);
  Scalar h = h0;
  for (std::size_t t = 0; t < a_series.size(); ++t) {
    h = c_series[t] * h + (Scalar(1) - c_series[t]) * std::tanh(drive_series[t] + a_series[t] * h);
    traj.push_back(h);
  }
  return traj;
}

struct LayerTraceRow {
  Index t;
  Index layer;
  double bistable_fraction;  // share of neurons with a_t > 1
  double mean_c;
};

struct LayerTrace {
  std::vector<LayerTraceRow> rows;  // ordered by t, then layer
};

/// Forward pass over one sequence (T x input_dim) recording, per step and
/// layer, the share of bistable neurons and the mean update gate.
template <typename Scalar>
LayerTrace trace_layers(const Network<Scalar>& net, const Matrix<Scalar>& seq) {
  require(net.spec.cell == CellKind::brc || net.spec.cell == CellKind::nbrc,
          "trace_layers: needs a BRC or nBRC network, got " + std::string(to_string(net.spec.cell)));
  const auto fwd = forward_sequence(net, seq);
  LayerTrace trace;
  const Index steps = fwd.cache.length();
  for (Index t = 0; t < steps; ++t)
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& k = std::get<BistableCache<Scalar>>(fwd.cache.steps[l][std::size_t(t)]);
      const double frac = double((k.a.array() > Scalar(1)).count()) / double(k.a.size());
      trace.rows.push_back({t, Index(l), frac, double(k.c.mean())});
    }
  return trace;
}

// ---------------------------------------------------------------------------
// CSV tables

namespace detail {
inline void full_precision(std::ostream& out) { out << std::setprecision(std::numeric_limits<double>::max_digits10); }
}  // namespace detail

template <typename Scalar>
void write_bifurcation_csv(std::ostream& out, const std::vector<BifurcationRow<Scalar>>& rows, bool with_drive = false) {
  detail::full_precision(out);
  out << (with_drive ? "a,drive,h_star,stability,multiplier\n" : "a,h_star,stability,multiplier\n");
  for (const auto& r : rows) {
    out << double(r.a) << ',';
    if (with_drive) out << double(r.drive) << ',';
    out << double(r.point.h_star) << ',' << to_string(r.point.stability) << ',' << double(r.point.multiplier) << '\n';
  }
}

template <typename Scalar>
void write_fixed_points_csv(std::ostream& out, const FixedPointReport<Scalar>& report) {
  detail::full_precision(out);
  out << "h_star,stability,multiplier\n";
  for (const auto& p : report.points)
    out << double(p.h_star) << ',' << to_string(p.stability) << ',' << double(p.multiplier) << '\n';
}

template <typename Scalar>
void write_trajectory_csv(std::ostream& out, const std::vector<Scalar>& traj) {
  detail::full_precision(out);
  out << "t,h\n";
  for (std::size_t t = 0; t < traj.size(); ++t) out << t << ',' << double(traj[t]) << '\n';
}

inline void write_layer_trace_csv(std::ostream& out, const LayerTrace& trace) {
  detail::full_precision(out);
  out << "t,layer,bistable_fraction,mean_c\n";
  for (const auto& r : trace.rows) out << r.t << ',' << r.layer << ',' << r.bistable_fraction << ',' << r.mean_c << '\n';
}

}  // namespace brc
