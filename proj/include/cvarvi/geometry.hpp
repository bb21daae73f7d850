#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cvarvi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// One smooth convex constraint q(h) <= 0.
struct ConvexConstraint {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
  bool affine = false;
};

enum class InequalityStructure { nonneg_orthant, box, general };

/// Projector onto the null space of A: L = I - sum_i u_i u_i^T.
struct SubspaceProjector {
  Mat L;
  Eigen::Index rank = 0;  ///< dimension of the row span of A

  Vec apply(const Vec& v) const { return L * v; }
};

/**
 * Orthonormal basis of the row span of A by modified Gram-Schmidt with one
 * reorthogonalization pass. Rows whose residual falls below 1e-10 times their
 * own norm (or that are zero) are dropped, so dependent rows are harmless.
 * Returned as columns of an n x rank matrix.
 */
inline Mat row_space_basis(const Mat& A) {
  const Eigen::Index n = A.cols();
  std::vector<Vec> basis;
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    Vec v = A.row(r).transpose();
    const double norm0 = v.norm();
    if (!(norm0 > 0.0)) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vec& u : basis) v -= u.dot(v) * u;
    }
    const double res = v.norm();
    if (res <= 1e-10 * norm0) continue;
    basis.push_back(v / res);
  }
  Mat Q(n, static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) Q.col(static_cast<Eigen::Index>(i)) = basis[i];
  return Q;
}

inline SubspaceProjector build_subspace_projector(const Mat& A) {
  if (!A.allFinite()) throw std::invalid_argument("constraint matrix has non-finite entries");
  const Mat Q = row_space_basis(A);
  SubspaceProjector out;
  out.rank = Q.cols();
  out.L = Mat::Identity(A.cols(), A.cols()) - Q * Q.transpose();
  // Exact symmetry; Q Q^T is symmetric only up to rounding.
  out.L = 0.5 * (out.L + out.L.transpose()).eval();
  return out;
}

/// Euclidean projector onto {h : A h = b}, with the row-space basis cached.
class AffineProjector {
 public:
  AffineProjector() = default;
  AffineProjector(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {
    if (A_.rows() != b_.size()) throw std::invalid_argument("dimension mismatch between A and b");
    Q_ = row_space_basis(A_);
    // Minimum-norm particular solution x0 = pinv(A) b, and a consistency check.
    if (A_.rows() > 0) {
      x0_ = A_.completeOrthogonalDecomposition().solve(b_);
      x0_ = Q_ * (Q_.transpose() * x0_);
      const double resid = (A_ * x0_ - b_).lpNorm<Eigen::Infinity>();
      if (resid > 1e-6 * (1.0 + b_.lpNorm<Eigen::Infinity>())) {
        throw std::invalid_argument("infeasible equalities");
      }
    } else {
      x0_ = Vec::Zero(A_.cols());
    }
  }

  Vec project(const Vec& h) const {
    if (h.size() != A_.cols()) throw std::invalid_argument("dimension mismatch");
    if (Q_.cols() == 0) return h;
    // h - Q Q^T (h - x0) lands on the affine set.
    return h - Q_ * (Q_.transpose() * (h - x0_));
  }

  const Mat& A() const { return A_; }
  const Vec& b() const { return b_; }
  Eigen::Index rank() const { return Q_.cols(); }

 private:
  Mat A_;
  Vec b_;
  Mat Q_;
  Vec x0_;
};

inline Vec project_affine(const Vec& h, const Mat& A, const Vec& b) {
  return AffineProjector(A, b).project(h);
}

/// Projection of v onto {x >= 0, sum x = total} by sort-and-threshold.
inline Vec project_simplex(const Vec& v, double total) {
  const Eigen::Index n = v.size();
  if (total <= 0.0 || n == 0) return Vec::Zero(n);
  std::vector<double> s(v.data(), v.data() + n);
  std::sort(s.begin(), s.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cumsum += s[static_cast<std::size_t>(i)];
    const double t = (cumsum - total) / static_cast<double>(i + 1);
    if (i + 1 == n || s[static_cast<std::size_t>(i + 1)] <= t) {
      theta = t;
      break;
    }
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

/**
 * H = {h : A h = b, q^i(h) <= 0}.
 *
 * Inequalities are either a nonnegative orthant, a box, or a general list of
 * convex constraints. When the equalities are disjoint 0/1 group sums over a
 * nonnegative orthant (the routing structure), H is a product of scaled
 * simplices and is projected onto exactly.
 */
class FeasibleSet {
 public:
  struct Group {
    std::vector<Eigen::Index> members;
    double total = 0.0;
  };

  static FeasibleSet nonneg_orthant(Mat A, Vec b) {
    FeasibleSet s(std::move(A), std::move(b));
    s.structure_ = InequalityStructure::nonneg_orthant;
    s.finish();
    return s;
  }

  static FeasibleSet box(Vec lo, Vec hi, Mat A, Vec b) {
    FeasibleSet s(std::move(A), std::move(b));
    if (lo.size() != s.dim() || hi.size() != s.dim()) throw std::invalid_argument("box dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (!(lo[i] <= hi[i])) throw std::invalid_argument("empty box");
    }
    s.structure_ = InequalityStructure::box;
    s.lo_ = std::move(lo);
    s.hi_ = std::move(hi);
    s.finish();
    return s;
  }

  static FeasibleSet general(Mat A, Vec b, std::vector<ConvexConstraint> constraints) {
    FeasibleSet s(std::move(A), std::move(b));
    s.structure_ = InequalityStructure::general;
    s.constraints_ = std::move(constraints);
    s.finish();
    return s;
  }

  Eigen::Index dim() const { return affine_.A().cols(); }
  const Mat& A() const { return affine_.A(); }
  const Vec& b() const { return affine_.b(); }
  InequalityStructure structure() const { return structure_; }
  const Vec& lower() const { return lo_; }
  const Vec& upper() const { return hi_; }
  const AffineProjector& affine() const { return affine_; }
  const std::vector<Group>& simplex_groups() const { return groups_; }
  bool is_simplex_product() const { return !groups_.empty(); }

  /// Number s of scalar inequality functions.
  Eigen::Index ineq_count() const {
    switch (structure_) {
      case InequalityStructure::nonneg_orthant: return dim();
      case InequalityStructure::box: return static_cast<Eigen::Index>(box_rows_.size());
      case InequalityStructure::general: return static_cast<Eigen::Index>(constraints_.size());
    }
    return 0;
  }

  bool all_affine() const {
    if (structure_ != InequalityStructure::general) return true;
    return std::all_of(constraints_.begin(), constraints_.end(), [](const auto& c) { return c.affine; });
  }

  /// q(h), length s.
  Vec ineq_values(const Vec& h) const {
    Vec q(ineq_count());
    switch (structure_) {
      case InequalityStructure::nonneg_orthant: q = -h; break;
      case InequalityStructure::box:
        for (std::size_t r = 0; r < box_rows_.size(); ++r) {
          const auto [i, upper] = box_rows_[r];
          q[static_cast<Eigen::Index>(r)] = upper ? h[i] - hi_[i] : lo_[i] - h[i];
        }
        break;
      case InequalityStructure::general:
        for (std::size_t r = 0; r < constraints_.size(); ++r) {
          q[static_cast<Eigen::Index>(r)] = constraints_[r].value(h);
        }
        break;
    }
    return q;
  }

  /// Jacobian Dq(h), s x n.
  Mat ineq_jacobian(const Vec& h) const {
    Mat D = Mat::Zero(ineq_count(), dim());
    switch (structure_) {
      case InequalityStructure::nonneg_orthant: D.diagonal().setConstant(-1.0); break;
      case InequalityStructure::box:
        for (std::size_t r = 0; r < box_rows_.size(); ++r) {
          const auto [i, upper] = box_rows_[r];
          D(static_cast<Eigen::Index>(r), i) = upper ? 1.0 : -1.0;
        }
        break;
      case InequalityStructure::general:
        for (std::size_t r = 0; r < constraints_.size(); ++r) {
          D.row(static_cast<Eigen::Index>(r)) = constraints_[r].gradient(h).transpose();
        }
        break;
    }
    return D;
  }

  /// (Dq(h))^T lambda without forming the Jacobian for structured sets.
  Vec ineq_jacobian_transpose_times(const Vec& h, const Vec& lambda) const {
    switch (structure_) {
      case InequalityStructure::nonneg_orthant: return -lambda;
      case InequalityStructure::box: {
        Vec out = Vec::Zero(dim());
        for (std::size_t r = 0; r < box_rows_.size(); ++r) {
          const auto [i, upper] = box_rows_[r];
          out[i] += (upper ? 1.0 : -1.0) * lambda[static_cast<Eigen::Index>(r)];
        }
        return out;
      }
      case InequalityStructure::general: return ineq_jacobian(h).transpose() * lambda;
    }
    return Vec::Zero(dim());
  }

  const std::vector<ConvexConstraint>& constraints() const { return constraints_; }

  /// max(||Ah - b||_inf, max_i [q^i(h)]^+).
  double violation(const Vec& h) const {
    double v = 0.0;
    if (A().rows() > 0) v = (A() * h - b()).lpNorm<Eigen::Infinity>();
    if (ineq_count() > 0) v = std::max(v, ineq_values(h).maxCoeff());
    return v;
  }

  /// Some point of H; computed and verified at construction.
  const Vec& anchor() const { return anchor_; }

 private:
  FeasibleSet(Mat A, Vec b) : affine_(std::move(A), std::move(b)) {}

  void finish();
  void detect_simplex_groups();

  AffineProjector affine_;
  InequalityStructure structure_ = InequalityStructure::nonneg_orthant;
  Vec lo_, hi_;
  std::vector<std::pair<Eigen::Index, bool>> box_rows_;  // (coordinate, is upper bound)
  std::vector<ConvexConstraint> constraints_;
  std::vector<Group> groups_;
  Vec anchor_;
};

namespace detail {

// Project x onto {q <= 0} with Newton steps along the gradient toward the
// boundary. Exact for affine q.
inline Vec project_sublevel(const Vec& x, const ConvexConstraint& c) {
  Vec y = x;
  for (int it = 0; it < 100; ++it) {
    const double v = c.value(y);
    if (v <= 0.0) return y;
    const Vec g = c.gradient(y);
    const double gg = g.squaredNorm();
    if (!(gg > 0.0)) throw std::runtime_error("projection tolerance not met");
    y -= (v / gg) * g;
    if (c.affine) return y;
  }
  return y;
}

}  // namespace detail

/// Euclidean projection onto H_ineq = {q(h) <= 0}.
inline Vec project_ineq(const Vec& h, const FeasibleSet& set) {
  switch (set.structure()) {
    case InequalityStructure::nonneg_orthant: return h.cwiseMax(0.0);
    case InequalityStructure::box: return h.cwiseMax(set.lower()).cwiseMin(set.upper());
    case InequalityStructure::general: break;
  }
  const auto& cs = set.constraints();
  if (cs.empty()) return h;
  if (cs.size() == 1) return detail::project_sublevel(h, cs[0]);
  // Dykstra over the individual sublevel sets.
  Vec x = h;
  std::vector<Vec> incr(cs.size(), Vec::Zero(h.size()));
  for (int sweep = 0; sweep < 10000; ++sweep) {
    const Vec before = x;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const Vec y = x + incr[i];
      const Vec p = detail::project_sublevel(y, cs[i]);
      incr[i] = y - p;
      x = p;
    }
    if ((x - before).norm() < 1e-9) return x;
  }
  throw std::runtime_error("projection tolerance not met");
}

/**
 * Euclidean projection onto H = H_aff cap H_ineq.
 *
 * Product-of-simplices sets use the exact per-group threshold projection;
 * otherwise Dykstra alternates between the affine and inequality pieces until
 * both the iterate and the correction terms move by less than tol/10.
 */
inline Vec project_feasible(const Vec& h, const FeasibleSet& set, double tol = 1e-9) {
  if (h.size() != set.dim()) throw std::invalid_argument("dimension mismatch");
  if (set.is_simplex_product()) {
    Vec out = h.cwiseMax(0.0);
    for (const auto& g : set.simplex_groups()) {
      Vec part(static_cast<Eigen::Index>(g.members.size()));
      for (std::size_t i = 0; i < g.members.size(); ++i) part[static_cast<Eigen::Index>(i)] = h[g.members[i]];
      const Vec p = project_simplex(part, g.total);
      for (std::size_t i = 0; i < g.members.size(); ++i) out[g.members[i]] = p[static_cast<Eigen::Index>(i)];
    }
    return out;
  }
  if (set.A().rows() == 0 || set.affine().rank() == 0) return project_ineq(h, set);
  if (set.ineq_count() == 0) return set.affine().project(h);

  Vec x = h;
  Vec p_aff = Vec::Zero(h.size());
  Vec p_ineq = Vec::Zero(h.size());
  for (int it = 0; it < 200000; ++it) {
    const Vec y = set.affine().project(x + p_aff);
    p_aff = x + p_aff - y;
    const Vec z = project_ineq(y + p_ineq, set);
    const Vec dq = y + p_ineq - z;
    const double move = (z - x).norm();
    const double corr = (dq - p_ineq).norm();
    p_ineq = dq;
    x = z;
    if (move < 0.1 * tol && corr < 0.1 * tol && set.violation(x) <= tol) return x;
  }
  throw std::runtime_error("projection tolerance not met");
}

inline void FeasibleSet::detect_simplex_groups() {
  groups_.clear();
  if (structure_ != InequalityStructure::nonneg_orthant || A().rows() == 0) return;
  std::vector<int> owner(static_cast<std::size_t>(dim()), -1);
  std::vector<Group> groups;
  for (Eigen::Index r = 0; r < A().rows(); ++r) {
    Group g;
    for (Eigen::Index c = 0; c < dim(); ++c) {
      const double v = A()(r, c);
      if (v == 0.0) continue;
      if (v != 1.0 || owner[static_cast<std::size_t>(c)] != -1) return;
      owner[static_cast<std::size_t>(c)] = static_cast<int>(r);
      g.members.push_back(c);
    }
    if (g.members.empty() || b()[r] < 0.0) return;
    g.total = b()[r];
    groups.push_back(std::move(g));
  }
  groups_ = std::move(groups);
}

inline void FeasibleSet::finish() {
  if (structure_ == InequalityStructure::box) {
    box_rows_.clear();
    for (Eigen::Index i = 0; i < dim(); ++i) {
      if (std::isfinite(lo_[i])) box_rows_.emplace_back(i, false);
      if (std::isfinite(hi_[i])) box_rows_.emplace_back(i, true);
    }
  }
  detect_simplex_groups();
  Vec start = affine_.project(Vec::Zero(dim()));
  try {
    anchor_ = project_feasible(start, *this, 1e-10);
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("feasible set is empty");
  }
  if (violation(anchor_) > 1e-6) throw std::invalid_argument("feasible set is empty");
}

}  // namespace cvarvi
