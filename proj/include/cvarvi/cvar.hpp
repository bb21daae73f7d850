#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace cvarvi {

/// Risk level alpha in (0, 1]. alpha = 1 is the mean, alpha -> 0 the worst case.
class RiskLevel {
 public:
  explicit RiskLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("risk level must lie in (0, 1]");
    }
  }
  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
};

/// Rows are events, columns are cost components. Every row is one shared event.
using SampleBatch = Eigen::MatrixXd;

namespace detail {

inline void check_samples(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("invalid sample");
  }
}

// Consumes `work`. The minimizing eta of the plug-in objective is an order
// statistic: with t = N*alpha and the samples sorted decreasingly, the value
// is (sum of the top floor(t) samples + frac(t) * next sample) / t.
inline double cvar_of_scratch(std::vector<double>& work, double alpha) {
  const std::size_t n = work.size();
  const long double t = static_cast<long double>(n) * alpha;
  const auto whole = static_cast<std::size_t>(std::floor(t));
  if (whole >= n) {
    long double sum = 0.0L;
    for (double v : work) sum += v;
    return static_cast<double>(sum / static_cast<long double>(n));
  }
  const long double frac = t - static_cast<long double>(whole);
  // Place the (whole+1) largest values at the front, the pivot at index `whole`.
  auto pivot = work.begin() + static_cast<std::ptrdiff_t>(whole);
  std::nth_element(work.begin(), pivot, work.end(), std::greater<>());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < whole; ++i) sum += work[i];
  sum += frac * static_cast<long double>(*pivot);
  return static_cast<double>(sum / t);
}

}  // namespace detail

/**
 * Plug-in CVaR estimate: min over eta of eta + (N alpha)^-1 sum_j [z_j - eta]^+.
 *
 * Computed exactly through the order statistics in O(N). The result always
 * lies in [mean(samples), max(samples)].
 */
inline double empirical_cvar(std::span<const double> samples, RiskLevel level) {
  detail::check_samples(samples);
  std::vector<double> work(samples.begin(), samples.end());
  return detail::cvar_of_scratch(work, level.alpha());
}

/// Column-wise empirical CVaR of one batch of shared events.
inline Eigen::VectorXd empirical_cvar_vector(const SampleBatch& batch, RiskLevel level) {
  if (batch.rows() == 0 || batch.cols() == 0) throw std::invalid_argument("empty batch");
  if (!batch.allFinite()) throw std::invalid_argument("invalid sample");
  Eigen::VectorXd out(batch.cols());
  std::vector<double> work(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index i = 0; i < batch.cols(); ++i) {
    const auto col = batch.col(i);
    std::copy(col.begin(), col.end(), work.begin());
    out[i] = detail::cvar_of_scratch(work, level.alpha());
  }
  return out;
}

/// Closed-form CVaR of uniform(lo, hi): the mean of the upper alpha tail.
inline double exact_cvar_uniform(double lo, double hi, RiskLevel level) {
  if (!(lo <= hi)) throw std::invalid_argument("degenerate interval");
  return hi - level.alpha() * (hi - lo) / 2.0;
}

namespace detail {

// Piecewise polynomial on knots x_0 < ... < x_K; piece k is
// sum_j coef[k][j] * (x - x_k)^j. Zero outside [x_0, x_K].
struct PiecewisePoly {
  std::vector<double> knots;
  std::vector<std::vector<double>> coef;

  std::size_t pieces() const { return coef.size(); }
  double width(std::size_t k) const { return knots[k + 1] - knots[k]; }
};

inline double poly_eval(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * t + *it;
  return v;
}

// Antiderivative vanishing at t = 0.
inline std::vector<double> poly_integral(const std::vector<double>& c) {
  std::vector<double> out(c.size() + 1, 0.0);
  for (std::size_t j = 0; j < c.size(); ++j) out[j + 1] = c[j] / static_cast<double>(j + 1);
  return out;
}

// Coefficients of p(s + shift) in powers of s.
inline std::vector<double> poly_shift(std::vector<double> c, double shift) {
  const std::size_t n = c.size();
  if (shift == 0.0 || n < 2) return c;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = n - 1; j > i; --j) c[j - 1] += shift * c[j];
  }
  return c;
}

inline void poly_axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  if (y.size() < x.size()) y.resize(x.size(), 0.0);
  for (std::size_t j = 0; j < x.size(); ++j) y[j] += a * x[j];
}

// Index of the piece containing x; -1 left of the support, pieces() right of it.
inline std::ptrdiff_t locate(const PiecewisePoly& f, double x) {
  if (x < f.knots.front()) return -1;
  if (x >= f.knots.back()) return static_cast<std::ptrdiff_t>(f.pieces());
  auto it = std::upper_bound(f.knots.begin(), f.knots.end(), x);
  return static_cast<std::ptrdiff_t>(it - f.knots.begin()) - 1;
}

// Density of Z + a V with V ~ U(0, 1), given the density f of Z. Uses
// (1/a) * integral_{x-a}^{x} f, expanded so that no difference of nearly equal
// antiderivative values is divided by a small width.
inline PiecewisePoly convolve_box(const PiecewisePoly& f, double a) {
  const double span = f.knots.back() - f.knots.front() + a;
  const double merge_tol = 1e-13 * span;

  std::vector<double> cand;
  cand.reserve(2 * f.knots.size());
  for (double x : f.knots) {
    cand.push_back(x);
    cand.push_back(x + a);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<double> knots;
  knots.reserve(cand.size());
  for (double x : cand) {
    if (knots.empty() || x - knots.back() > merge_tol) knots.push_back(x);
  }
  if (knots.back() < f.knots.back() + a) knots.back() = f.knots.back() + a;

  const auto n_old = static_cast<std::ptrdiff_t>(f.pieces());
  std::vector<std::vector<double>> prim(f.pieces());
  std::vector<double> full(f.pieces());
  for (std::size_t k = 0; k < f.pieces(); ++k) {
    prim[k] = poly_integral(f.coef[k]);
    full[k] = poly_eval(prim[k], f.width(k));
  }

  PiecewisePoly g;
  g.knots = knots;
  g.coef.resize(knots.size() - 1);
  for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
    const double y = knots[j];
    const double mid = 0.5 * (knots[j] + knots[j + 1]);
    const std::ptrdiff_t hi = locate(f, mid);
    const std::ptrdiff_t lo = locate(f, mid - a);
    std::vector<double> acc;
    if (hi == lo) {
      if (hi >= 0 && hi < n_old) {
        // Same piece: (P(s) - P(s - a)) / a expanded term by term in a.
        const auto& c = f.coef[static_cast<std::size_t>(hi)];
        std::vector<double> q(c.size(), 0.0);
        for (std::size_t d = 0; d < c.size(); ++d) {
          // c_d/(d+1) * sum_{i=1}^{d+1} C(d+1,i) (-1)^{i+1} a^{i-1} s^{d+1-i}
          const std::size_t top = d + 1;
          double binom = 1.0;
          double apow = 1.0;
          for (std::size_t i = 1; i <= top; ++i) {
            binom = binom * static_cast<double>(top - i + 1) / static_cast<double>(i);
            const double sign = (i % 2 == 1) ? 1.0 : -1.0;
            q[top - i] += c[d] / static_cast<double>(top) * binom * sign * apow;
            apow *= a;
          }
        }
        acc = poly_shift(std::move(q), y - f.knots[static_cast<std::size_t>(hi)]);
      } else {
        acc.assign(1, 0.0);
      }
    } else {
      acc.assign(1, 0.0);
      std::ptrdiff_t first_full = 0;
      if (lo >= 0) {
        const auto k = static_cast<std::size_t>(lo);
        acc[0] += full[k];
        poly_axpy(acc, -1.0, poly_shift(prim[k], y - a - f.knots[k]));
        first_full = lo + 1;
      }
      const std::ptrdiff_t last_full = std::min(hi, n_old);
      for (std::ptrdiff_t m = first_full; m < last_full; ++m) acc[0] += full[static_cast<std::size_t>(m)];
      if (hi < n_old) {
        const auto k = static_cast<std::size_t>(hi);
        poly_axpy(acc, 1.0, poly_shift(prim[k], y - f.knots[k]));
      }
      for (double& v : acc) v /= a;
    }
    g.coef[j] = std::move(acc);
  }
  return g;
}

}  // namespace detail

/**
 * Exact CVaR of Z = offset + sum_i widths[i] * V_i with V_i i.i.d. uniform(0, 1).
 *
 * The density of Z is assembled as a piecewise polynomial by successive box
 * convolutions; the upper alpha-quantile and the tail mean are then integrated
 * exactly piece by piece. Negative widths are folded into the offset.
 * Cost grows as 2^m in the number m of distinct nonzero widths.
 */
inline double exact_cvar_uniform_sum(double offset, std::span<const double> widths, RiskLevel level) {
  if (!std::isfinite(offset)) throw std::invalid_argument("invalid sample");
  std::vector<double> w;
  w.reserve(widths.size());
  for (double v : widths) {
    if (!std::isfinite(v)) throw std::invalid_argument("invalid sample");
    if (v < 0.0) {
      offset += v;
      v = -v;
    }
    if (v > 0.0) w.push_back(v);
  }
  if (w.empty()) return offset;
  if (w.size() > 20) throw std::invalid_argument("too many uniform terms for exact CVaR");
  std::sort(w.begin(), w.end(), std::greater<>());
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  // Terms far below the resolution of the sum only shift it; fold in their mean.
  while (w.size() > 1 && w.back() < 1e-14 * total) {
    offset += 0.5 * w.back();
    w.pop_back();
  }

  detail::PiecewisePoly f;
  f.knots = {0.0, w[0]};
  f.coef = {{1.0 / w[0]}};
  for (std::size_t i = 1; i < w.size(); ++i) f = detail::convolve_box(f, w[i]);

  const double alpha = level.alpha();
  const std::size_t pieces = f.pieces();
  std::vector<std::vector<double>> prim(pieces);
  std::vector<double> mass(pieces);
  double total_mass = 0.0;
  for (std::size_t k = 0; k < pieces; ++k) {
    prim[k] = detail::poly_integral(f.coef[k]);
    mass[k] = detail::poly_eval(prim[k], f.width(k));
    total_mass += mass[k];
  }
  const double target = alpha * total_mass;

  // Walk down from the top until the accumulated tail mass reaches alpha.
  double tail = 0.0;
  std::size_t k = pieces;
  while (k > 0 && tail + mass[k - 1] < target) {
    tail += mass[k - 1];
    --k;
  }
  double eta;
  std::size_t kq;
  if (k == 0) {
    kq = 0;
    eta = f.knots.front();
  } else {
    kq = k - 1;
    const double need = target - tail;
    const double top = mass[kq];
    double lo = 0.0, hi = f.width(kq);
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const double upper = top - detail::poly_eval(prim[kq], mid);
      if (upper > need) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    eta = f.knots[kq] + 0.5 * (lo + hi);
  }

  // Tail mean: integral over [eta, inf) of (x - eta) f(x) dx.
  long double excess = 0.0L;
  for (std::size_t j = kq; j < pieces; ++j) {
    const double x0 = f.knots[j];
    const double start = std::max(0.0, eta - x0);
    // Integrate (t + x0 - eta) p(t) over [start, width].
    std::vector<double> tp(f.coef[j].size() + 1, 0.0);
    for (std::size_t d = 0; d < f.coef[j].size(); ++d) {
      tp[d + 1] += f.coef[j][d];
      tp[d] += (x0 - eta) * f.coef[j][d];
    }
    const auto ptp = detail::poly_integral(tp);
    excess += detail::poly_eval(ptp, f.width(j)) - detail::poly_eval(ptp, start);
  }
  return offset + eta + static_cast<double>(excess) / target;
}

}  // namespace cvarvi
