#pragma once

// Quantized Riemannian gradient tracking (Q-RGT) and the retraction-based
// gradient-tracking baseline (RGT).
//
// Per agent i, one Q-RGT epoch k → k+1 is
//
//   x_i ← Σ_j (W^t)_ij x_j − α s_i
//   Γ_i ← Q_N(grad f_i(x_i))             landing-directed, dithered
//   s_i ← Σ_j (W^t)_ij s_j + Γ_i − Γ_i,prev
//
// with no retraction: iterates stay in a neighborhood of the manifold whose
// width shrinks with the bit width N. RGT replaces the first line by
// x_i ← R_{x_i}(P_{T_{x_i}}(Σ_j (W^t)_ij x_j − x_i − α s_i)) and Γ by the exact
// Riemannian gradient.
//
// All randomness comes from streams keyed by (seed, agent, epoch); agent work
// inside an epoch can run on any number of threads with identical results.

#include "qrgt/metrics.hpp"
#include "qrgt/network.hpp"
#include "qrgt/problems.hpp"
#include "qrgt/quantizer.hpp"
#include "qrgt/random.hpp"
#include "qrgt/stiefel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace qrgt {

enum class Algorithm { QRGT, RGT };

/// How Q-RGT compresses local gradients. Exact disables quantization and
/// yields plain (unquantized) gradient tracking without retraction.
enum class Compression { Dithered, Landing, Nearest, Exact };

struct AlgoConfig {
  double alpha = 1e-5;
  int t = 1;
  BitWidth bits{8};
  Compression compression = Compression::Dithered;
  int max_epochs = 10000;
  double ds_tolerance = 1e-8;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::QRGT;
  Retraction retraction = Retraction::QR;
  bool enforce_safety = true;
  /// Worker threads for per-agent work; 1 runs sequentially.
  int threads = 1;
  bool record_wall_time = false;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
      throw ValidationError("alpha must be a positive finite number");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (t < 1) throw ValidationError("t must be >= 1");
    if (!(ds_tolerance >= 0.0)) throw ValidationError("ds_tolerance must be >= 0");
    if (threads < 1) throw ValidationError("threads must be >= 1");
  }

  bool quantized() const {
    return algorithm == Algorithm::QRGT && compression != Compression::Exact;
  }

  QuantizerSpec quantizer_spec() const {
    QuantizerSpec spec;
    spec.bits = bits;
    spec.dither_seed = seed;
    switch (compression) {
      case Compression::Nearest: spec.mode = QuantMode::NearestTies; break;
      case Compression::Landing: spec.mode = QuantMode::LandingDirected; break;
      default: spec.mode = QuantMode::LandingDirectedDithered; break;
    }
    return spec;
  }
};

struct AgentState {
  Matrix x;
  /// Gradient tracker.
  Matrix s;
  /// Last (quantized) local gradient Γ_i,k.
  Matrix gamma_prev;
};

using States = std::vector<AgentState>;

enum class Termination { MaxEpochs, DsTolerance, Diverged };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::MaxEpochs: return "MaxEpochs";
    case Termination::DsTolerance: return "DsTolerance";
    case Termination::Diverged: return "Diverged";
  }
  return "?";
}

struct TraceRow {
  int epoch = 0;
  MetricRow metrics;
  double wall_ms = 0.0;
  std::int64_t wire_bits_cum = 0;
};

/// Step-size ceilings from the stability and rate analysis.
struct StepBounds {
  double descent = 0.0;          // 1/(8 L_m)
  double stability_loose = 0.0;  // (1−σ₂)²/(4 L_m), linear-system stability
  double stability = 0.0;        // (1−σ₂)²/(16 L_m)
  double rate = 0.0;             // (1/(16 L_m))·sqrt(n(1−σ₂)³/(2L_m²+1))
  double consensus = 0.0;        // (n(1−σ₂)³)^{1/4}/(16 L_m)

  /// The guarded bound: minimum over all but the loose stability term.
  double min() const { return std::min({descent, stability, rate, consensus}); }
};

struct RunTrace {
  std::vector<TraceRow> rows;
  Termination reason = Termination::MaxEpochs;
  std::string diverged_what;
  std::vector<std::string> warnings;
  double alpha = 0.0;
  SmoothnessConstants consts;
  StepBounds bounds;
  /// max_k ‖s̄_k − Γ̄_k‖ over the run (gradient-tracking mean identity).
  double max_tracker_gap = 0.0;
  /// Per-message payload of one Γ exchange, in bits.
  std::int64_t message_bits = 0;
};

// --- safety bounds ---------------------------------------------------------

inline StepBounds safety_step_bounds(const SmoothnessConstants& consts,
                                     double sigma2, int n) {
  if (!(consts.L_m > 0.0)) throw ValidationError("safety bound: L_m must be positive");
  if (!(sigma2 >= 0.0) || sigma2 >= 1.0)
    throw ValidationError("safety bound: sigma2 must lie in [0, 1) (graph connected)");
  const double Lm = consts.L_m;
  const double gap = 1.0 - sigma2;
  const double gap3 = gap * gap * gap;
  StepBounds b;
  b.descent = 1.0 / (8.0 * Lm);
  b.stability_loose = gap * gap / (4.0 * Lm);
  b.stability = gap * gap / (16.0 * Lm);
  b.rate = std::sqrt(n * gap3 / (2.0 * Lm * Lm + 1.0)) / (16.0 * Lm);
  b.consensus = std::pow(n * gap3, 0.25) / (16.0 * Lm);
  return b;
}

inline double safety_step_bound(const SmoothnessConstants& consts, double sigma2, int n) {
  return safety_step_bounds(consts, sigma2, n).min();
}

/// Computable surrogate for the smoothness constants of the PCA objective:
/// L = λ_max((1/n) Σ A_iᵀA_i), L_f = max_i max_{x∈M} ‖A_iᵀA_i x‖ / R (the
/// root of the sum of the top-r squared eigenvalues of A_iᵀA_i), L_m = L_g.
inline SmoothnessConstants estimate_smoothness(const ProblemInstance& inst,
                                               double landing_weight = 1.0) {
  const double L = inst.truth.spectrum(0) / inst.n();
  const Eigen::Index r = inst.dims.r;
  double Lf = 0.0;
  for (const auto& l : inst.locals) {
    Vector ev;
    if (l.gram) {
      ev = Eigen::SelfAdjointEigenSolver<Matrix>(*l.gram, Eigen::EigenvaluesOnly).eigenvalues();
    } else {
      ev = Eigen::SelfAdjointEigenSolver<Matrix>(l.A * l.A.transpose(), Eigen::EigenvaluesOnly)
               .eigenvalues();
    }
    double acc = 0.0;
    for (Eigen::Index j = 0; j < std::min(r, ev.size()); ++j) {
      const double lam = ev(ev.size() - 1 - j);
      acc += lam * lam;
    }
    Lf = std::max(Lf, std::sqrt(acc) / inst.dims.proximal_radius);
  }
  return SmoothnessConstants::make(L, Lf, 0.0, landing_weight);
}

// --- per-agent work ----------------------------------------------------------

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is owned
/// by exactly one worker; the first exception is rethrown after joining.
template <class Fn>
void for_each_agent(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Stack gather_x(const States& st) {
  Stack out;
  out.reserve(st.size());
  for (const auto& a : st) out.push_back(a.x);
  return out;
}

inline Stack gather_s(const States& st) {
  Stack out;
  out.reserve(st.size());
  for (const auto& a : st) out.push_back(a.s);
  return out;
}

}  // namespace detail

/// Local direction fed to the tracker: Γ_i = Q_N(grad f_i(x)) for Q-RGT, the
/// exact Riemannian gradient otherwise. `epoch` keys the dither stream.
inline Matrix local_direction(const ProblemInstance& inst, int agent, const Matrix& x,
                              const AlgoConfig& cfg, int epoch) {
  Matrix g = project_tangent(x, local_euclidean_grad(inst, agent, x));
  if (!cfg.quantized()) return g;
  DitherStream stream(cfg.seed, static_cast<std::uint64_t>(agent),
                      static_cast<std::uint64_t>(epoch));
  return quantize(g, penalty_grad(x), cfg.quantizer_spec(), stream).value;
}

/// Every agent starts at one shared point x₀ = QR(Gaussian) drawn from the
/// run seed, with s_i,0 = Γ_i,0.
inline States init_states(const ProblemInstance& inst, const AlgoConfig& cfg) {
  std::mt19937_64 eng(derive_seed(cfg.seed, SeedPurpose::Init));
  const Matrix x0 = qr_orthonormalize(gaussian_matrix(inst.dims.d, inst.dims.r, eng));
  States st(static_cast<std::size_t>(inst.n()));
  detail::for_each_agent(inst.n(), cfg.threads, [&](int i) {
    auto& a = st[static_cast<std::size_t>(i)];
    a.x = x0;
    a.gamma_prev = local_direction(inst, i, x0, cfg, 0);
    a.s = a.gamma_prev;
  });
  return st;
}

/// One Q-RGT epoch producing the iterate with index `epoch` (>= 1).
inline States qrgt_epoch(const States& st, const ProblemInstance& inst,
                         const MixingMatrix& W, const AlgoConfig& cfg, int epoch) {
  const Stack mx = mix(W, detail::gather_x(st));
  const Stack ds = mix_delta(W, detail::gather_s(st));
  States next(st.size());
  detail::for_each_agent(inst.n(), cfg.threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    auto& a = next[k];
    a.x = mx[k] - cfg.alpha * st[k].s;
    a.gamma_prev = local_direction(inst, i, a.x, cfg, epoch);
    a.s = st[k].s + (ds[k] + (a.gamma_prev - st[k].gamma_prev));
  });
  return next;
}

/// One RGT epoch. Requires every x_i on the manifold.
inline States rgt_epoch(const States& st, const ProblemInstance& inst,
                        const MixingMatrix& W, const AlgoConfig& cfg, int epoch) {
  for (const auto& a : st)
    if (orthogonality_error(a.x) > kOnManifoldTol)
      throw ValidationError("rgt_epoch: iterate is off the manifold");
  const Stack dx = mix_delta(W, detail::gather_x(st));
  const Stack ds = mix_delta(W, detail::gather_s(st));
  States next(st.size());
  detail::for_each_agent(inst.n(), cfg.threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    const Matrix& x = st[k].x;
    auto& a = next[k];
    const Matrix step = project_tangent(x, dx[k] - cfg.alpha * st[k].s);
    a.x = retract_raw(x, step, cfg.retraction);
    a.gamma_prev = local_direction(inst, i, a.x, cfg, epoch);
    a.s = st[k].s + (ds[k] + (a.gamma_prev - st[k].gamma_prev));
  });
  return next;
}

inline States run_epoch(const States& st, const ProblemInstance& inst,
                        const MixingMatrix& W, const AlgoConfig& cfg, int epoch) {
  return cfg.algorithm == Algorithm::QRGT ? qrgt_epoch(st, inst, W, cfg, epoch)
                                          : rgt_epoch(st, inst, W, cfg, epoch);
}

/// ‖s̄ − Γ̄‖; zero in exact arithmetic for doubly stochastic W.
inline double tracker_gap(const States& st) {
  Matrix acc = Matrix::Zero(st.front().s.rows(), st.front().s.cols());
  for (const auto& a : st) acc += a.s - a.gamma_prev;
  return acc.norm() / static_cast<double>(st.size());
}

/// Non-finite entries, or an iterate with ‖x_i‖ > 10³·√r.
inline bool diverged(const States& st) {
  for (const auto& a : st) {
    if (!a.x.allFinite() || !a.s.allFinite()) return true;
    if (a.x.norm() > 1e3 * std::sqrt(static_cast<double>(a.x.cols()))) return true;
  }
  return false;
}

/// Passed to a run observer after every completed epoch.
struct EpochEvent {
  int epoch;
  const States& before;
  const States& after;
  const MixingMatrix& W;
  const AlgoConfig& cfg;
};

using EpochObserver = std::function<void(const EpochEvent&)>;

inline RunTrace run(const ProblemInstance& inst, const MixingMatrix& W,
                    const AlgoConfig& cfg, const EpochObserver& observer = {}) {
  cfg.validate();
  if (W.n() != inst.n())
    throw ValidationError("mixing matrix has " + std::to_string(W.n()) +
                          " agents, problem has " + std::to_string(inst.n()));
  const MixingMatrix Wt = W.t() == cfg.t ? W : W.with_power(cfg.t);

  RunTrace trace;
  trace.alpha = cfg.alpha;
  trace.consts = estimate_smoothness(inst);
  if (Wt.boundary())
    trace.warnings.push_back("mixing matrix has sigma2 = 0 (complete graph): outside (0,1)");
  trace.bounds = safety_step_bounds(trace.consts, std::min(Wt.sigma2_t(), 1.0 - 1e-15), inst.n());
  if (cfg.enforce_safety && cfg.alpha > trace.bounds.min()) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "alpha = %g exceeds the safety step bound %g", cfg.alpha,
                  trace.bounds.min());
    trace.warnings.emplace_back(buf);
  }
  const auto dr = static_cast<std::int64_t>(inst.dims.d * inst.dims.r);
  trace.message_bits = cfg.quantized() ? dr * cfg.bits.bits() + 64 : dr * 64;

  const auto t0 = std::chrono::steady_clock::now();
  States st = init_states(inst, cfg);
  trace.max_tracker_gap = tracker_gap(st);
  std::int64_t wire = 0;
  trace.rows.reserve(static_cast<std::size_t>(std::min(cfg.max_epochs, 1 << 16)));

  for (int k = 1; k <= cfg.max_epochs; ++k) {
    States next;
    try {
      next = run_epoch(st, inst, Wt, cfg, k);
    } catch (const Error& e) {
      trace.reason = Termination::Diverged;
      trace.diverged_what = e.what();
      return trace;
    }
    if (diverged(next)) {
      trace.reason = Termination::Diverged;
      trace.diverged_what = "non-finite or unbounded iterate at epoch " + std::to_string(k);
      return trace;
    }
    if (observer) observer(EpochEvent{k, st, next, Wt, cfg});
    st = std::move(next);

    trace.max_tracker_gap = std::max(trace.max_tracker_gap, tracker_gap(st));
    wire += trace.message_bits * inst.n();
    TraceRow row;
    row.epoch = k;
    row.metrics = compute_metrics(inst, detail::gather_x(st));
    row.wire_bits_cum = wire;
    if (cfg.record_wall_time)
      row.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0).count();
    trace.rows.push_back(row);
    if (row.metrics.ds <= cfg.ds_tolerance) {
      trace.reason = Termination::DsTolerance;
      return trace;
    }
  }
  trace.reason = Termination::MaxEpochs;
  return trace;
}

inline RunTrace run(const ProblemInstance& inst, const Topology& topology,
                    const AlgoConfig& cfg, const EpochObserver& observer = {}) {
  return run(inst, build_metropolis(topology, cfg.t), cfg, observer);
}

}  // namespace qrgt
