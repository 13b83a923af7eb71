#pragma once

// Distributed eigenvector problem
//
//   min_x  f(x) = (1/n) Σ_i f_i(x),   f_i(x) = −½ tr(xᵀ A_iᵀ A_i x)
//
// over St(d,r). Local gradients carry no 1/n or 1/m_i factor; the step size
// α = n·α̂/Σm_i supplies the normalization.

#include "qrgt/random.hpp"
#include "qrgt/stiefel.hpp"
#include "qrgt/types.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace qrgt {

struct LocalDataset {
  Matrix A;
  /// AᵀA, cached when m_i >= d.
  std::optional<Matrix> gram;

  Eigen::Index rows() const noexcept { return A.rows(); }

  explicit LocalDataset(Matrix a) : A(std::move(a)) {
    if (A.rows() >= A.cols()) gram = A.transpose() * A;
  }

  /// AᵀA·x without forming AᵀA when it is not cached.
  Matrix gram_times(const Matrix& x) const {
    if (gram) return mul(*gram, x);
    return A.transpose() * (A * x);
  }
};

struct GroundTruth {
  StiefelPoint xstar;
  double fstar = 0.0;
  /// Eigenvalues of Σ_i A_iᵀA_i in descending order.
  Vector spectrum;
  /// λ_r == λ_{r+1} (within 1e-12 relative): the optimal subspace is not unique.
  bool degenerate_gap = false;
};

struct ProblemInstance {
  std::vector<LocalDataset> locals;
  ManifoldDims dims;
  GroundTruth truth;
  /// Right singular vectors used to plant synthetic data (empty otherwise).
  Matrix planted;

  int n() const noexcept { return static_cast<int>(locals.size()); }
  Eigen::Index total_rows() const {
    Eigen::Index m = 0;
    for (const auto& l : locals) m += l.rows();
    return m;
  }
};

struct SyntheticSpec {
  int n = 16;
  Eigen::Index m = 1000;
  Eigen::Index d = 10;
  Eigen::Index r = 5;
  double eigengap = 0.8;
  /// Leading singular value Σ₀₀; values <= 0 keep the one of the Gaussian draw.
  double sigma0 = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw ValidationError("synthetic: n must be >= 1");
    if (m < 1) throw ValidationError("synthetic: m must be >= 1");
    ManifoldDims{d, r, 1.0}.validate();
    if (!(eigengap > 0.0 && eigengap < 1.0))
      throw ValidationError("synthetic: eigengap must lie in (0, 1), got " +
                            std::to_string(eigengap));
    if (static_cast<Eigen::Index>(n) * m < d)
      throw ValidationError("synthetic: n*m < d, the sample matrix is rank deficient");
  }
};

// --- objective -------------------------------------------------------------

/// ∇f_i(x) = −A_iᵀA_i x.
inline Matrix local_euclidean_grad(const ProblemInstance& inst, int agent,
                                   const Matrix& x) {
  if (agent < 0 || agent >= inst.n())
    throw ValidationError("agent index " + std::to_string(agent) + " out of range");
  return -inst.locals[static_cast<std::size_t>(agent)].gram_times(x);
}

/// (1/n) Σ_i ∇f_i(x).
inline Matrix global_euclidean_grad(const ProblemInstance& inst, const Matrix& x) {
  Matrix acc = Matrix::Zero(x.rows(), x.cols());
  for (const auto& l : inst.locals) acc -= l.gram_times(x);
  return acc / static_cast<double>(inst.n());
}

inline double objective_from_locals(const std::vector<LocalDataset>& locals,
                                    const Matrix& x) {
  double acc = 0.0;
  for (const auto& l : locals) {
    if (l.gram)
      acc += (x.transpose() * (*l.gram * x)).trace();
    else
      acc += (l.A * x).squaredNorm();
  }
  return -acc / (2.0 * static_cast<double>(locals.size()));
}

/// f(x) = −(1/2n) Σ_i tr(xᵀA_iᵀA_i x).
inline double global_objective(const ProblemInstance& inst, const Matrix& x) {
  return objective_from_locals(inst.locals, x);
}

/// Top-r eigenvectors of Σ_i A_iᵀA_i (the top-r right singular vectors of the
/// stacked data) and the optimal value.
inline GroundTruth solve_ground_truth(const std::vector<LocalDataset>& locals,
                                      Eigen::Index r) {
  if (locals.empty()) throw ValidationError("ground truth: no local datasets");
  const Eigen::Index d = locals.front().A.cols();
  Matrix total = Matrix::Zero(d, d);
  for (const auto& l : locals) {
    if (l.A.cols() != d) throw ShapeError("ground truth: agents disagree on d");
    total += l.gram ? *l.gram : Matrix(l.A.transpose() * l.A);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(total);
  GroundTruth gt;
  gt.spectrum = es.eigenvalues().reverse();
  Matrix xstar(d, r);
  for (Eigen::Index j = 0; j < r; ++j) xstar.col(j) = es.eigenvectors().col(d - 1 - j);
  if (r < d) {
    const double scale = std::max(1.0, gt.spectrum(0));
    gt.degenerate_gap = gt.spectrum(r - 1) - gt.spectrum(r) <= 1e-12 * scale;
  }
  gt.fstar = objective_from_locals(locals, xstar);
  gt.xstar = StiefelPoint(std::move(xstar));
  return gt;
}

inline ProblemInstance make_instance(std::vector<Matrix> blocks, Eigen::Index r) {
  if (blocks.empty()) throw ValidationError("problem: no agents");
  ProblemInstance inst;
  inst.dims = ManifoldDims{blocks.front().cols(), r, 1.0};
  inst.dims.validate();
  inst.locals.reserve(blocks.size());
  for (auto& b : blocks) {
    if (b.cols() != inst.dims.d) throw ShapeError("problem: agents disagree on d");
    inst.locals.emplace_back(std::move(b));
  }
  inst.truth = solve_ground_truth(inst.locals, r);
  return inst;
}

/// Splits rows into n contiguous blocks; the last block absorbs the remainder.
inline std::vector<Matrix> partition_rows(const Matrix& data, int n) {
  if (n < 1 || data.rows() < n)
    throw ValidationError("partition: need 1 <= n <= rows");
  const Eigen::Index base = data.rows() / n;
  std::vector<Matrix> blocks;
  for (int i = 0; i < n; ++i) {
    const Eigen::Index start = base * i;
    const Eigen::Index count = (i == n - 1) ? data.rows() - start : base;
    blocks.emplace_back(data.middleRows(start, count));
  }
  return blocks;
}

// --- synthetic data --------------------------------------------------------

/// Gaussian (n·m)×d sample with its singular values replaced by
/// Σ₀₀·Δ^{i/2}, i = 0..d−1, split evenly across agents.
inline ProblemInstance generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 eng(derive_seed(spec.seed, SeedPurpose::Data));
  const Matrix G = gaussian_matrix(spec.n * spec.m, spec.d, eng);
  Eigen::BDCSVD<Matrix> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double sigma0 = spec.sigma0 > 0.0 ? spec.sigma0 : sv(0);
  Vector planted(spec.d);
  for (Eigen::Index i = 0; i < spec.d; ++i)
    planted(i) = sigma0 * std::pow(spec.eigengap, static_cast<double>(i) / 2.0);
  const Matrix A = svd.matrixU() * planted.asDiagonal() * svd.matrixV().transpose();
  ProblemInstance inst = make_instance(partition_rows(A, spec.n), spec.r);
  inst.planted = svd.matrixV();
  return inst;
}

// --- IDX3 image files ------------------------------------------------------

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count·rows·cols, image-major
};

inline constexpr std::uint32_t kIdx3Magic = 0x00000803;

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t off) {
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace detail

/// Parses a big-endian IDX3 unsigned-byte image file.
inline IdxImages read_idx3(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open IDX3 file '" + path + "'");
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  auto fail = [&](std::size_t offset, const std::string& what) {
    return IngestionError(path + " @ byte " + std::to_string(offset) + ": " + what);
  };
  if (buf.size() < 16)
    throw fail(buf.size(), "truncated header (" + std::to_string(buf.size()) +
                               " of 16 bytes)");
  const std::uint32_t magic = detail::read_be32(buf, 0);
  if (magic != kIdx3Magic) {
    std::ostringstream msg;
    msg << "bad magic 0x" << std::hex << magic << ", expected 0x00000803";
    throw fail(0, msg.str());
  }
  IdxImages img;
  img.count = detail::read_be32(buf, 4);
  img.rows = detail::read_be32(buf, 8);
  img.cols = detail::read_be32(buf, 12);
  if (img.count == 0 || img.rows == 0 || img.cols == 0)
    throw fail(4, "zero dimension in header");
  const std::uint64_t payload =
      std::uint64_t{img.count} * img.rows * img.cols;
  if (buf.size() - 16 < payload)
    throw fail(buf.size(), "truncated pixel data: header promises " +
                               std::to_string(payload) + " bytes, file holds " +
                               std::to_string(buf.size() - 16));
  if (buf.size() - 16 > payload)
    throw fail(16 + payload, "dimension mismatch: " +
                                 std::to_string(buf.size() - 16 - payload) +
                                 " trailing bytes after pixel data");
  img.pixels.assign(buf.begin() + 16, buf.end());
  return img;
}

inline void write_idx3(const std::string& path, const IdxImages& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot create IDX3 file '" + path + "'");
  detail::write_be32(out, kIdx3Magic);
  detail::write_be32(out, img.count);
  detail::write_be32(out, img.rows);
  detail::write_be32(out, img.cols);
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IngestionError("short write to '" + path + "'");
}

/// Loads an IDX3 image file as a count×(rows·cols) data matrix scaled by 1/255,
/// shuffles its rows with `seed`, and splits them evenly across n agents.
/// expected_d > 0 additionally checks the image dimension.
inline ProblemInstance load_mnist(const std::string& path, int n, Eigen::Index r,
                                  std::uint64_t seed, Eigen::Index expected_d = 0) {
  const IdxImages img = read_idx3(path);
  const Eigen::Index d = static_cast<Eigen::Index>(img.rows) * img.cols;
  const Eigen::Index total = img.count;
  if (expected_d > 0 && d != expected_d)
    throw IngestionError(path + " @ byte 8: dimension mismatch, images have " +
                         std::to_string(d) + " pixels, expected " +
                         std::to_string(expected_d));
  if (n < 1 || total < n) throw ValidationError("load_mnist: need 1 <= n <= image count");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 eng(derive_seed(seed, SeedPurpose::Shuffle));
  std::shuffle(order.begin(), order.end(), eng);

  const Eigen::Index base = total / n;
  std::vector<Matrix> blocks;
  for (int a = 0; a < n; ++a) {
    const Eigen::Index start = base * a;
    const Eigen::Index count = (a == n - 1) ? total - start : base;
    Matrix block(count, d);
    for (Eigen::Index k = 0; k < count; ++k) {
      const std::uint8_t* px =
          img.pixels.data() + static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)] * d);
      for (Eigen::Index c = 0; c < d; ++c) block(k, c) = px[c] / 255.0;
    }
    blocks.push_back(std::move(block));
  }
  return make_instance(std::move(blocks), r);
}

// --- CSV matrices ----------------------------------------------------------

/// Comma-separated numeric rows; blank lines and '#' lines are skipped.
inline Matrix load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open CSV file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IngestionError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IngestionError(path + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(rows.front().size()) + " columns, got " +
                           std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IngestionError(path + ": no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace qrgt
