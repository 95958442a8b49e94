#pragma once

// Logistic regression by Newton-Raphson, likelihood-ratio tests and
// bidirectional stepwise selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"

namespace phenotensor {

// ---------------------------------------------------------------------------
// Chi-square upper tail via the regularized incomplete gamma function.

namespace detail {

/// P(a, x) by its power series; accurate for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a, term = sum, ap = a;
  for (int n = 0; n < 10000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Q(a, x) by Lentz's continued fraction; accurate for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma Q(a, x), a > 0, x >= 0.
inline double gamma_q(double a, double x) {
  if (!(a > 0) || x < 0) throw std::domain_error("gamma_q: need a > 0, x >= 0");
  if (x == 0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_fraction(a, x);
}

inline double chi_square_upper_tail(double statistic, double df) {
  if (statistic <= 0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * statistic);
}

// ---------------------------------------------------------------------------

struct LogisticOptions {
  int max_iters = 100;
  double tol = 1e-8;          // on the max absolute (projected) score
  double coef_bound = 30.0;   // |beta_j| clamp
};

struct GlmFit {
  Vector coefficients;     // intercept first, then one per feature column
  Vector standard_errors;  // +inf for clamped or aliased terms
  double log_likelihood = 0;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  std::vector<std::size_t> aliased;  // feature columns dropped as linearly dependent
};

inline double logistic_log_likelihood(const Matrix& design, const Vector& y, const Vector& beta) {
  Vector eta = design * beta;
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y[i] * eta[i] - log1p_exp(eta[i]);
  return ll;
}

namespace detail {

/// Indices of columns of `d` that are linearly independent of the columns
/// before them (greedy, in order). Zero columns are dependent.
inline std::vector<Eigen::Index> independent_columns(const Matrix& d, double rel_tol = 1e-9) {
  std::vector<Eigen::Index> keep;
  Matrix basis(d.rows(), 0);
  for (Eigen::Index c = 0; c < d.cols(); ++c) {
    Vector v = d.col(c);
    const double norm0 = v.norm();
    if (norm0 == 0) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index b = 0; b < basis.cols(); ++b) v -= basis.col(b).dot(v) * basis.col(b);
    if (v.norm() > rel_tol * norm0) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = v / v.norm();
      keep.push_back(c);
    }
  }
  return keep;
}

inline void check_binary(const Vector& y) {
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0)
      has0 = true;
    else if (y[i] == 1)
      has1 = true;
    else
      throw InputError("logistic regression: labels must be 0 or 1");
  }
  if (!has0 || !has1) throw DegenerateEvaluationError("logistic regression: labels contain a single class");
}

}  // namespace detail

/// Maximum-likelihood logistic regression with an internal intercept.
/// `warm_start`, when given, has one entry per coefficient (intercept first).
inline GlmFit fit_logistic(const Matrix& x, const Vector& y, const LogisticOptions& opt = {},
                           const Vector* warm_start = nullptr) {
  if (x.rows() != y.size()) throw InputError("fit_logistic: row count mismatch");
  if (!x.allFinite()) throw InputError("fit_logistic: non-finite feature value");
  detail::check_binary(y);

  const Eigen::Index n = x.rows(), p = x.cols();
  Matrix full(n, p + 1);
  full.col(0).setOnes();
  full.rightCols(p) = x;
  const auto keep = detail::independent_columns(full);

  GlmFit fit;
  std::vector<bool> kept(static_cast<std::size_t>(p + 1), false);
  for (auto c : keep) kept[static_cast<std::size_t>(c)] = true;
  for (Eigen::Index c = 1; c <= p; ++c)
    if (!kept[static_cast<std::size_t>(c)]) fit.aliased.push_back(static_cast<std::size_t>(c - 1));

  const auto q = static_cast<Eigen::Index>(keep.size());
  Matrix d(n, q);
  Vector beta = Vector::Zero(q);
  for (Eigen::Index c = 0; c < q; ++c) {
    d.col(c) = full.col(keep[static_cast<std::size_t>(c)]);
    if (warm_start) beta[c] = std::clamp((*warm_start)[keep[static_cast<std::size_t>(c)]], -opt.coef_bound, opt.coef_bound);
  }
  // Jacobi scaling of the Newton system; the iterates are unaffected.
  Vector scale(q);
  for (Eigen::Index c = 0; c < q; ++c) scale[c] = 1.0 / std::max(d.col(c).cwiseAbs().maxCoeff(), 1e-300);

  auto at_bound = [&](Eigen::Index c, double g) {
    return (beta[c] >= opt.coef_bound && g > 0) || (beta[c] <= -opt.coef_bound && g < 0);
  };

  double ll = logistic_log_likelihood(d, y, beta);
  Matrix hessian(q, q);
  for (fit.iterations = 0; fit.iterations <= opt.max_iters; ++fit.iterations) {
    Vector eta = d * beta;
    Vector mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = sigmoid(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    Vector score = d.transpose() * (y - mu);
    hessian = d.transpose() * w.asDiagonal() * d;

    std::vector<Eigen::Index> free;
    double max_score = 0;
    for (Eigen::Index c = 0; c < q; ++c) {
      if (at_bound(c, score[c])) continue;
      free.push_back(c);
      // Score with respect to max-scaled columns: equals the raw score for
      // features bounded by 1 and stays attainable for wide-range covariates.
      max_score = std::max(max_score, std::abs(score[c]) * std::max(scale[c], 1.0));
    }
    const auto f = static_cast<Eigen::Index>(free.size());
    Matrix hf(f, f);
    Vector gf(f);
    for (Eigen::Index a = 0; a < f; ++a) {
      gf[a] = score[free[static_cast<std::size_t>(a)]] * scale[free[static_cast<std::size_t>(a)]];
      for (Eigen::Index b = 0; b < f; ++b)
        hf(a, b) = hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]) *
                   scale[free[static_cast<std::size_t>(a)]] * scale[free[static_cast<std::size_t>(b)]];
    }
    Eigen::LDLT<Matrix> ldlt(hf);
    Vector step = ldlt.solve(gf);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      // Saturated weights: fall back to a scaled gradient step.
      step = gf;
    }
    // A tiny score alone is not enough: under separation the score vanishes
    // while Newton steps stay O(1), and the coefficient must run to the clamp.
    double max_move = 0;
    for (Eigen::Index a = 0; a < f; ++a) max_move = std::max(max_move, std::abs(step[a] * scale[free[static_cast<std::size_t>(a)]]));
    if (max_score < opt.tol && max_move < 1e-3) {
      // One last Newton step squares the remaining error.
      Vector polished = beta;
      for (Eigen::Index a = 0; a < f; ++a) {
        auto c = free[static_cast<std::size_t>(a)];
        polished[c] = std::clamp(beta[c] + step[a] * scale[c], -opt.coef_bound, opt.coef_bound);
      }
      double polished_ll = logistic_log_likelihood(d, y, polished);
      if (polished_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) beta = polished, ll = polished_ll;
      fit.converged = true;
      break;
    }
    if (fit.iterations == opt.max_iters) break;

    double t = 1.0;
    bool improved = false;
    Vector candidate = beta;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      candidate = beta;
      for (Eigen::Index a = 0; a < f; ++a) {
        auto c = free[static_cast<std::size_t>(a)];
        candidate[c] = std::clamp(beta[c] + t * step[a] * scale[c], -opt.coef_bound, opt.coef_bound);
      }
      double cand_ll = logistic_log_likelihood(d, y, candidate);
      // Near the optimum the likelihood gain drops below rounding noise while
      // the score is still above tol, so equal-within-noise is accepted.
      if (cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) {
        improved = candidate != beta;
        beta = candidate;
        ll = cand_ll;
        break;
      }
    }
    if (!improved) {
      // No representable ascent remains; accept the current point.
      fit.converged = max_score < std::max(opt.tol, 1e-6 * static_cast<double>(n));
      break;
    }
  }

  fit.log_likelihood = ll;
  fit.coefficients = Vector::Zero(p + 1);
  fit.standard_errors = Vector::Constant(p + 1, std::numeric_limits<double>::infinity());
  for (Eigen::Index c = 0; c < q; ++c) {
    fit.coefficients[keep[static_cast<std::size_t>(c)]] = beta[c];
    if (std::abs(beta[c]) >= opt.coef_bound) fit.separation = true;
  }
  Eigen::LDLT<Matrix> ldlt(hessian);
  if (ldlt.info() == Eigen::Success) {
    Matrix cov = ldlt.solve(Matrix::Identity(q, q));
    for (Eigen::Index c = 0; c < q; ++c)
      if (std::abs(beta[c]) < opt.coef_bound && cov(c, c) > 0)
        fit.standard_errors[keep[static_cast<std::size_t>(c)]] = std::sqrt(cov(c, c));
  }
  return fit;
}

/// Likelihood-ratio test of nested fits on identical rows.
inline double lr_pvalue(const GlmFit& full, const GlmFit& reduced, int df) {
  if (df < 1) throw InputError("lr_pvalue: df must be >= 1");
  double stat = 2.0 * (full.log_likelihood - reduced.log_likelihood);
  if (stat < -2e-8) throw NumericalError("lr_pvalue: full model fits worse than the reduced model");
  return chi_square_upper_tail(std::max(stat, 0.0), df);
}

// ---------------------------------------------------------------------------
// Stepwise selection

struct StepwiseOptions {
  double entry = 0.05;
  double exit = 0.10;
  LogisticOptions logistic;
};

struct StepLog {
  std::size_t term = 0;
  bool entered = true;  // false = removed
  double p_value = 1;
};

struct StepwiseResult {
  std::vector<std::size_t> selected;  // sorted column indices
  std::vector<StepLog> steps;
  GlmFit final_fit;                   // coefficients over the selected columns, in `selected` order

  /// Linear predictor of the final model for rows of the full feature matrix.
  Vector linear_predictor(const Matrix& x) const {
    Vector eta = Vector::Constant(x.rows(), final_fit.coefficients[0]);
    for (std::size_t s = 0; s < selected.size(); ++s)
      eta += final_fit.coefficients[static_cast<Eigen::Index>(s + 1)] * x.col(static_cast<Eigen::Index>(selected[s]));
    return eta;
  }
};

/// Fits logistic models on column subsets of one feature matrix, caching by subset.
class SubsetFitter {
 public:
  SubsetFitter(const Matrix& x, const Vector& y, LogisticOptions opt) : x_(x), y_(y), opt_(opt) {}

  const GlmFit& fit(const std::vector<std::size_t>& cols, const std::vector<std::size_t>* warm_from = nullptr) {
    auto it = cache_.find(cols);
    if (it != cache_.end()) return it->second;
    Matrix sub(x_.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = x_.col(static_cast<Eigen::Index>(cols[c]));
    Vector warm;
    const Vector* warm_ptr = nullptr;
    if (warm_from) {
      if (auto w = cache_.find(*warm_from); w != cache_.end()) {
        warm = Vector::Zero(static_cast<Eigen::Index>(cols.size() + 1));
        warm[0] = w->second.coefficients[0];
        for (std::size_t c = 0; c < cols.size(); ++c) {
          auto pos = std::find(warm_from->begin(), warm_from->end(), cols[c]);
          if (pos != warm_from->end())
            warm[static_cast<Eigen::Index>(c + 1)] = w->second.coefficients[static_cast<Eigen::Index>(pos - warm_from->begin() + 1)];
        }
        warm_ptr = &warm;
      }
    }
    return cache_.emplace(cols, fit_logistic(sub, y_, opt_, warm_ptr)).first->second;
  }

 private:
  const Matrix& x_;
  const Vector& y_;
  LogisticOptions opt_;
  std::map<std::vector<std::size_t>, GlmFit> cache_;
};

namespace detail {
inline std::vector<std::size_t> with(std::vector<std::size_t> s, std::size_t j) {
  s.insert(std::upper_bound(s.begin(), s.end(), j), j);
  return s;
}
inline std::vector<std::size_t> without(std::vector<std::size_t> s, std::size_t j) {
  s.erase(std::find(s.begin(), s.end(), j));
  return s;
}
}  // namespace detail

/// Forward entry / backward exit selection by likelihood-ratio p-values,
/// starting from the intercept-only model.
inline StepwiseResult stepwise_select(const Matrix& x, const Vector& y, const StepwiseOptions& opt = {}) {
  detail::check_binary(y);
  SubsetFitter fitter(x, y, opt.logistic);
  std::vector<std::size_t> current;
  std::set<std::vector<std::size_t>> visited{current};
  StepwiseResult result;
  const auto p = static_cast<std::size_t>(x.cols());

  while (true) {
    bool changed = false;
    // Entry.
    {
      const GlmFit base = fitter.fit(current);
      double best_p = 2.0;
      std::size_t best = p;
      for (std::size_t j = 0; j < p; ++j) {
        if (std::binary_search(current.begin(), current.end(), j)) continue;
        auto cand = detail::with(current, j);
        double pv = lr_pvalue(fitter.fit(cand, &current), base, 1);
        if (pv < best_p) {
          best_p = pv;
          best = j;
        }
      }
      if (best < p && best_p < opt.entry) {
        auto next = detail::with(current, best);
        if (visited.count(next)) break;
        current = std::move(next);
        visited.insert(current);
        result.steps.push_back({best, true, best_p});
        changed = true;
      }
    }
    // Exit.
    {
      const GlmFit base = fitter.fit(current);
      double worst_p = -1.0;
      std::size_t worst = p;
      for (std::size_t j : current) {
        auto cand = detail::without(current, j);
        double pv = lr_pvalue(base, fitter.fit(cand, &current), 1);
        if (pv > worst_p) {
          worst_p = pv;
          worst = j;
        }
      }
      if (worst < p && worst_p > opt.exit) {
        auto next = detail::without(current, worst);
        if (visited.count(next)) break;
        current = std::move(next);
        visited.insert(current);
        result.steps.push_back({worst, false, worst_p});
        changed = true;
      }
    }
    if (!changed) break;
  }
  result.selected = current;
  result.final_fit = fitter.fit(current);
  return result;
}

}  // namespace phenotensor
