#pragma once

#include "qrgt/random.hpp"
#include "qrgt/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qrgt {

enum class TopologyKind { Ring, ErdosRenyi, Complete, ExplicitEdges };

struct Topology {
  TopologyKind kind = TopologyKind::Ring;
  int n = 2;
  double p = 0.3;            // ErdosRenyi only
  std::uint64_t seed = 0;    // ErdosRenyi only
  std::vector<std::pair<int, int>> edges;  // ExplicitEdges only

  static Topology ring(int n) { return {TopologyKind::Ring, n, 0.0, 0, {}}; }
  static Topology complete(int n) { return {TopologyKind::Complete, n, 0.0, 0, {}}; }
  static Topology erdos_renyi(int n, double p, std::uint64_t seed) {
    return {TopologyKind::ErdosRenyi, n, p, seed, {}};
  }
  static Topology explicit_edges(int n, std::vector<std::pair<int, int>> e) {
    return {TopologyKind::ExplicitEdges, n, 0.0, 0, std::move(e)};
  }
};

/// Undirected simple graph as sorted adjacency lists.
struct Graph {
  int n = 0;
  std::vector<std::vector<int>> adj;
  /// Number of rejected Erdős–Rényi draws before a connected one was found.
  int resamples = 0;

  std::size_t degree(int i) const { return adj[static_cast<std::size_t>(i)].size(); }
};

inline bool is_connected(const Graph& g) {
  if (g.n <= 1) return true;
  std::vector<char> seen(static_cast<std::size_t>(g.n), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int visited = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : g.adj[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++visited;
        frontier.push(v);
      }
    }
  }
  return visited == g.n;
}

namespace detail {

inline Graph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::set<int>> nbrs(static_cast<std::size_t>(n));
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n)
      throw ValidationError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") out of range for n=" + std::to_string(n));
    if (i == j) continue;
    nbrs[static_cast<std::size_t>(i)].insert(j);
    nbrs[static_cast<std::size_t>(j)].insert(i);
  }
  Graph g;
  g.n = n;
  for (auto& s : nbrs) g.adj.emplace_back(s.begin(), s.end());
  return g;
}

}  // namespace detail

/// Edge set of a topology. Erdős–Rényi draws are resampled with an
/// incremented attempt counter until connected (at most 1000 attempts).
inline Graph build_graph(const Topology& topo) {
  const int n = topo.n;
  if (n < 1) throw ValidationError("topology: n must be >= 1");
  std::vector<std::pair<int, int>> edges;
  switch (topo.kind) {
    case TopologyKind::Ring:
      for (int i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
      break;
    case TopologyKind::Complete:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
      break;
    case TopologyKind::ExplicitEdges:
      edges = topo.edges;
      break;
    case TopologyKind::ErdosRenyi: {
      if (!(topo.p > 0.0 && topo.p <= 1.0))
        throw ValidationError("topology.p must lie in (0, 1], got " + std::to_string(topo.p));
      constexpr int kMaxAttempts = 1000;
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::mt19937_64 eng(derive_seed(topo.seed, SeedPurpose::Topology,
                                        static_cast<std::uint64_t>(attempt)));
        edges.clear();
        for (int i = 0; i < n; ++i)
          for (int j = i + 1; j < n; ++j)
            if (canonical_uniform(eng) < topo.p) edges.emplace_back(i, j);
        Graph g = detail::graph_from_edges(n, edges);
        if (is_connected(g)) {
          g.resamples = attempt;
          return g;
        }
      }
      throw ValidationError("Erdos-Renyi graph still disconnected after 1000 draws");
    }
  }
  return detail::graph_from_edges(n, edges);
}

/// Reads an edge list: one "i j" pair per line, 0-indexed; '#' starts a comment.
inline std::vector<std::pair<int, int>> read_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open edge list '" + path + "'");
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    int i = 0, j = 0;
    if (!(ss >> i)) continue;
    std::string rest;
    if (!(ss >> j) || (ss >> rest))
      throw IngestionError(path + ":" + std::to_string(lineno) + ": expected 'i j'");
    edges.emplace_back(i, j);
  }
  return edges;
}

inline void validate_doubly_stochastic(const Matrix& W, double tol = 1e-10) {
  if (W.rows() != W.cols()) throw ValidationError("mixing matrix must be square");
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > tol)
    throw ValidationError("mixing matrix is not symmetric");
  if ((W.rowwise().sum().array() - 1.0).abs().maxCoeff() > tol)
    throw ValidationError("mixing matrix rows do not sum to 1");
  if (W.minCoeff() < -tol) throw ValidationError("mixing matrix has negative entries");
}

/// Second largest singular value of a symmetric doubly stochastic matrix,
/// i.e. the second largest |eigenvalue|.
inline double second_singular_value(const Matrix& W) {
  validate_doubly_stochastic(W);
  if (W.rows() < 2) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(W, Eigen::EigenvaluesOnly);
  Vector mags = es.eigenvalues().cwiseAbs();
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return mags(1);
}

/// W^t by repeated squaring.
inline Matrix matrix_power(const Matrix& W, int t) {
  if (t < 1) throw ValidationError("consensus power t must be >= 1");
  Matrix result = Matrix::Identity(W.rows(), W.cols());
  Matrix base = W;
  for (int e = t; e > 0; e >>= 1) {
    if (e & 1) result = result * base;
    if (e > 1) base = base * base;
  }
  return result;
}

/// Immutable mixing operator: W, its cached power W^t, and σ₂(W).
class MixingMatrix {
 public:
  /// Validates W (symmetric, doubly stochastic, nonnegative) and caches W^t.
  static MixingMatrix from_matrix(Matrix W, int t = 1) {
    MixingMatrix m;
    m.sigma2_ = second_singular_value(W);
    if (W.rows() >= 2 && m.sigma2_ >= 1.0 - 1e-12)
      throw ValidationError("mixing matrix has sigma2 = 1 (graph disconnected)");
    m.power_ = matrix_power(W, t);
    m.W_ = std::move(W);
    m.t_ = t;
    return m;
  }

  const Matrix& weights() const noexcept { return W_; }
  const Matrix& power() const noexcept { return power_; }
  double sigma2() const noexcept { return sigma2_; }
  /// σ₂(W)^t, the contraction factor of one t-step mixing.
  double sigma2_t() const { return std::pow(sigma2_, t_); }
  int t() const noexcept { return t_; }
  int n() const noexcept { return static_cast<int>(W_.rows()); }
  /// σ₂ = 0 sits outside the open interval (0, 1); benign, but flagged.
  bool boundary() const noexcept { return sigma2_ <= 1e-12; }
  int resamples() const noexcept { return resamples_; }

  MixingMatrix with_power(int t) const { return from_matrix(W_, t).with_resamples(resamples_); }

 private:
  MixingMatrix with_resamples(int r) && {
    resamples_ = r;
    return std::move(*this);
  }
  friend MixingMatrix build_metropolis(const Topology&, int);

  Matrix W_;
  Matrix power_;
  double sigma2_ = 0.0;
  int t_ = 1;
  int resamples_ = 0;
};

/// Metropolis weights: W_ij = 1/(1 + max(deg_i, deg_j)) on edges,
/// W_ii = 1 − Σ_{j≠i} W_ij.
inline MixingMatrix build_metropolis(const Topology& topo, int t = 1) {
  const Graph g = build_graph(topo);
  if (!is_connected(g)) throw ValidationError("topology is disconnected");
  Matrix W = Matrix::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    for (int j : g.adj[static_cast<std::size_t>(i)])
      W(i, j) = 1.0 / (1.0 + static_cast<double>(std::max(g.degree(i), g.degree(j))));
  }
  for (int i = 0; i < g.n; ++i) W(i, i) = 1.0 - (W.row(i).sum() - W(i, i));
  return MixingMatrix::from_matrix(std::move(W), t).with_resamples(g.resamples);
}

/// delta_i = Σ_{j≠i} (W^t)_ij · (stacked_j − stacked_i), so that
/// mix = stacked + delta. Each pair contributes ±w(stacked_j − stacked_i) with
/// the upper-triangle weight, so Σ_i delta_i vanishes up to the rounding of
/// the small per-agent sums.
inline Stack mix_delta(const MixingMatrix& W, const Stack& stacked) {
  const Matrix& P = W.power();
  if (static_cast<Eigen::Index>(stacked.size()) != P.rows())
    throw ShapeError("mix: expected " + std::to_string(P.rows()) + " blocks, got " +
                     std::to_string(stacked.size()));
  Stack out(stacked.size(),
            Matrix::Zero(stacked.front().rows(), stacked.front().cols()));
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (Eigen::Index j = i + 1; j < P.cols(); ++j) {
      if (P(i, j) == 0.0) continue;
      const auto uj = static_cast<std::size_t>(j);
      const Matrix d = P(i, j) * (stacked[uj] - stacked[ui]);
      out[ui] += d;
      out[uj] -= d;
    }
  }
  return out;
}

/// out_i = Σ_j (W^t)_ij · stacked_j.
inline Stack mix(const MixingMatrix& W, const Stack& stacked) {
  Stack out = mix_delta(W, stacked);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += stacked[i];
  return out;
}

}  // namespace qrgt
