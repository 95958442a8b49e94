#pragma once

// Supervised non-negative CP factorization by block projected gradient.
//
// Objective: ||X - M||_F^2 + omega * NLL(beta; [1, patient memberships, covariates], y)
// over the labeled patients. Each outer iteration refits beta, then takes one
// backtracking projected-gradient step per mode (patient, diagnosis,
// medication) and max-normalizes the columns.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "cp_model.hpp"
#include "glm.hpp"
#include "tensor.hpp"
#include "text_io.hpp"

namespace phenotensor {

struct SolverConfig {
  std::size_t rank = 50;
  double omega = 0.0;
  int max_outer_iters = 500;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  double backtrack_shrink = 0.5;
  double backtrack_init = 1.0;  // multiple of 1 / (Lipschitz estimate)
  int backtrack_max = 30;
  /// Projected-gradient steps per block per outer iteration. The block's
  /// MTTKRP and Gram matrices are reused, so extra steps are cheap.
  int inner_iters = 10;
  /// Try an extrapolated point along the last outer move; kept only when it
  /// lowers the objective.
  bool extrapolate = true;

  void validate() const {
    if (rank < 1) throw InputError("solver config: rank must be >= 1");
    if (!(omega >= 0) || !std::isfinite(omega)) throw InputError("solver config: omega must be >= 0");
    if (max_outer_iters < 0) throw InputError("solver config: max_outer_iters must be >= 0");
    if (!(rel_tol > 0)) throw InputError("solver config: rel_tol must be > 0");
    if (!(backtrack_shrink > 0 && backtrack_shrink < 1)) throw InputError("solver config: backtrack_shrink in (0,1)");
    if (!(backtrack_init > 0)) throw InputError("solver config: backtrack_init must be > 0");
    if (backtrack_max < 0) throw InputError("solver config: backtrack_max must be >= 0");
    if (inner_iters < 1) throw InputError("solver config: inner_iters must be >= 1");
  }
};

/// Applies recognized keys; unknown keys are an error so typos surface.
inline void apply_solver_keys(SolverConfig& c, const std::unordered_map<std::string, std::string>& kv,
                              bool ignore_unknown = false) {
  for (const auto& [k, v] : kv) {
    try {
      if (k == "rank")
        c.rank = std::stoul(v);
      else if (k == "omega")
        c.omega = std::stod(v);
      else if (k == "max_outer_iters")
        c.max_outer_iters = std::stoi(v);
      else if (k == "rel_tol")
        c.rel_tol = std::stod(v);
      else if (k == "seed")
        c.seed = std::stoull(v);
      else if (k == "backtrack_shrink")
        c.backtrack_shrink = std::stod(v);
      else if (k == "backtrack_init")
        c.backtrack_init = std::stod(v);
      else if (k == "backtrack_max")
        c.backtrack_max = std::stoi(v);
      else if (k == "inner_iters")
        c.inner_iters = std::stoi(v);
      else if (k == "extrapolate")
        c.extrapolate = v == "true" || v == "1";
      else if (!ignore_unknown)
        throw InputError("solver config: unknown key '" + k + "'");
    } catch (const std::logic_error&) {
      throw InputError("solver config: bad value for '" + k + "': " + v);
    }
  }
  c.validate();
}

inline SolverConfig read_solver_config(const std::string& path) {
  SolverConfig c;
  apply_solver_keys(c, read_key_values(path));
  return c;
}

/// Labels (possibly for a subset of patients) and optional fixed covariates.
struct Supervision {
  std::vector<std::size_t> patients;  // tensor patient indices with a label
  std::vector<int> labels;            // 0/1, parallel to `patients`
  Matrix covariates;                  // n_patients x C, C may be 0
  Vector beta;                        // intercept, R phenotype terms, C covariate terms

  std::size_t n_covariates() const { return static_cast<std::size_t>(covariates.cols()); }

  void validate(std::size_t n_patients) const {
    if (patients.size() != labels.size()) throw InputError("supervision: patients/labels size mismatch");
    for (auto p : patients)
      if (p >= n_patients) throw InputError("supervision: labeled patient not in the tensor");
    for (auto y : labels)
      if (y != 0 && y != 1) throw InputError("supervision: labels must be 0 or 1");
    if (covariates.cols() > 0 && static_cast<std::size_t>(covariates.rows()) != n_patients)
      throw InputError("supervision: covariate rows must match patients");
    if (beta.size() > 0 && !beta.allFinite()) throw NumericalError("supervision: non-finite beta");
  }
};

struct TraceRow {
  int iteration = 0;
  double objective = 0;
  double frobenius = 0;
  double logistic = 0;  // unweighted NLL at (memberships, beta)
  std::array<double, 3> step{0, 0, 0};
  double beta_loglik = 0;  // log-likelihood right after the beta refit
};

struct FitTrace {
  std::vector<TraceRow> rows;
  bool supervised = false;
  std::string stop_reason;
};

class SolverAborted : public NumericalError {
 public:
  SolverAborted(const std::string& what, FitTrace trace) : NumericalError(what), trace(std::move(trace)) {}
  FitTrace trace;
};

// ---------------------------------------------------------------------------

/// Seeded uniform (0,1) factors, lambda = 1, then max-normalized.
inline CPModel init_factors(std::array<std::size_t, 3> dims, std::size_t rank, std::uint64_t seed) {
  if (rank < 1) throw InputError("init_factors: rank must be >= 1");
  Rng rng(seed);
  CPModel m = CPModel::zeros(dims, rank);
  m.lambda.setOnes();
  for (auto& f : m.factors)
    for (Eigen::Index r = 0; r < f.cols(); ++r)
      for (Eigen::Index i = 0; i < f.rows(); ++i) f(i, r) = uniform_open01(rng);
  return normalize_columns(std::move(m));
}

namespace detail {

inline bool is_supervised(const Supervision* sup, double omega) { return sup != nullptr && omega > 0; }

/// Linear predictors of the labeled patients for patient factor `a`.
inline Vector linear_predictors(const Matrix& a, const Supervision& sup) {
  const auto R = a.cols();
  Vector z(static_cast<Eigen::Index>(sup.patients.size()));
  for (std::size_t n = 0; n < sup.patients.size(); ++n) {
    auto p = static_cast<Eigen::Index>(sup.patients[n]);
    double v = sup.beta[0] + a.row(p).dot(sup.beta.segment(1, R));
    if (sup.covariates.cols() > 0) v += sup.covariates.row(p).dot(sup.beta.tail(sup.covariates.cols()));
    z[static_cast<Eigen::Index>(n)] = v;
  }
  return z;
}

inline double logistic_nll(const Matrix& a, const Supervision& sup) {
  Vector z = linear_predictors(a, sup);
  double s = 0;
  for (Eigen::Index n = 0; n < z.size(); ++n) s += log1p_exp(z[n]) - sup.labels[static_cast<std::size_t>(n)] * z[n];
  return s;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration. Only
/// exact scalings appear, so scaling g by a power of two scales the result exactly.
inline double top_eigenvalue(const Matrix& g) {
  if (g.size() == 0) return 0;
  Vector v = Vector::Ones(g.rows());
  double estimate = 0;
  for (int it = 0; it < 30; ++it) {
    Vector w = g * v;
    double n = w.norm();
    if (n == 0) return 0;
    v = w / n;
    estimate = v.dot(g * v);
  }
  return estimate;
}

inline void check_supervision(const CPModel& m, const Supervision& sup) {
  sup.validate(m.dims()[kPatient]);
  if (static_cast<std::size_t>(sup.beta.size()) != 1 + m.rank() + sup.n_covariates())
    throw InputError("supervision: beta must have 1 + rank + covariates entries");
}

}  // namespace detail

/// F(m, t) + omega * NLL. With omega = 0 (or no supervision) this is F exactly.
inline double combined_objective(const CPModel& m, const SparseTensor3& t, const Supervision* sup, double omega) {
  double f = frobenius_fit(m, t);
  if (!detail::is_supervised(sup, omega)) return f;
  detail::check_supervision(m, *sup);
  return f + omega * detail::logistic_nll(m.factors[kPatient], *sup);
}

/// Frobenius gradient of one mode from precomputed MTTKRP and weighted Gram.
inline Matrix frobenius_gradient(const CPModel& m, std::size_t mode, const Matrix& k, const Matrix& gamma) {
  return 2.0 * (m.factors[mode] * gamma - k * m.lambda.asDiagonal());
}

/// omega * (sigmoid(z_p) - y_p) * beta_pheno^T on labeled rows.
inline void add_supervised_gradient(Matrix& grad, const CPModel& m, const Supervision& sup, double omega) {
  const auto R = static_cast<Eigen::Index>(m.rank());
  Vector z = detail::linear_predictors(m.factors[kPatient], sup);
  for (std::size_t n = 0; n < sup.patients.size(); ++n) {
    double resid = sigmoid(z[static_cast<Eigen::Index>(n)]) - sup.labels[n];
    grad.row(static_cast<Eigen::Index>(sup.patients[n])) += omega * resid * sup.beta.segment(1, R).transpose();
  }
}

inline Matrix patient_mode_gradient(const CPModel& m, const SparseTensor3& t, const Supervision* sup, double omega) {
  Matrix g = frobenius_gradient(m, kPatient, mttkrp(t, m, kPatient), weighted_gram_except(m, kPatient));
  if (detail::is_supervised(sup, omega)) {
    detail::check_supervision(m, *sup);
    add_supervised_gradient(g, m, *sup, omega);
  }
  return g;
}

inline Matrix other_mode_gradient(const CPModel& m, const SparseTensor3& t, std::size_t mode) {
  if (mode != kDiagnosis && mode != kMedication) throw InputError("other_mode_gradient: mode must be 1 or 2");
  return frobenius_gradient(m, mode, mttkrp(t, m, mode), weighted_gram_except(m, mode));
}

/// Logistic fit on [memberships, covariates] of the labeled patients, warm
/// started from sup.beta. The previous beta is kept if the refit would not
/// lower the NLL.
inline Vector refit_beta(const CPModel& m, const Supervision& sup, const LogisticOptions& opt = {}) {
  sup.validate(m.dims()[kPatient]);
  const auto R = static_cast<Eigen::Index>(m.rank());
  const auto C = sup.covariates.cols();
  const auto n = static_cast<Eigen::Index>(sup.patients.size());
  Matrix x(n, R + C);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto p = static_cast<Eigen::Index>(sup.patients[static_cast<std::size_t>(i)]);
    x.row(i).head(R) = m.factors[kPatient].row(p);
    if (C > 0) x.row(i).tail(C) = sup.covariates.row(p);
    y[i] = sup.labels[static_cast<std::size_t>(i)];
  }
  const bool has_prev = sup.beta.size() == 1 + R + C;
  GlmFit fit = fit_logistic(x, y, opt, has_prev ? &sup.beta : nullptr);
  if (has_prev) {
    Supervision trial = sup;
    trial.beta = fit.coefficients;
    if (detail::logistic_nll(m.factors[kPatient], trial) > detail::logistic_nll(m.factors[kPatient], sup))
      return sup.beta;
  }
  return fit.coefficients;
}

// ---------------------------------------------------------------------------

namespace detail {

struct ModeStep {
  double step = 0;
  double objective = 0;
};

/// Up to cfg.inner_iters backtracking projected-gradient steps on `mode`.
/// Objective values are evaluated from the mode's MTTKRP and Gram matrices
/// without touching the nonzeros again. Reports the last accepted step size.
inline ModeStep mode_step(CPModel& m, const SparseTensor3& t, const Supervision* sup, double omega, std::size_t mode,
                          const SolverConfig& cfg, double x_norm_sq) {
  const bool supervised = mode == kPatient && is_supervised(sup, omega);
  const Matrix k = mttkrp(t, m, mode);
  const Matrix gamma = weighted_gram_except(m, mode);

  auto objective_at = [&](const Matrix& u) {
    double inner = u.cwiseProduct(k).colwise().sum().dot(m.lambda.transpose());
    double model_sq = (u.transpose() * u).cwiseProduct(gamma).sum();
    double f = x_norm_sq - 2.0 * inner + model_sq;
    if (supervised) f += omega * logistic_nll(u, *sup);
    return f;
  };

  double lipschitz = 2.0 * top_eigenvalue(gamma);
  if (supervised) lipschitz += 0.25 * omega * sup->beta.segment(1, static_cast<Eigen::Index>(m.rank())).squaredNorm();

  ModeStep out{0.0, objective_at(m.factors[mode])};
  for (int inner = 0; inner < cfg.inner_iters; ++inner) {
    Matrix grad = 2.0 * (m.factors[mode] * gamma - k * m.lambda.asDiagonal());
    if (supervised) add_supervised_gradient(grad, m, *sup, omega);
    for (Eigen::Index r = 0; r < m.lambda.size(); ++r)
      if (m.lambda[r] == 0.0) grad.col(r).setZero();  // dead components stay frozen

    bool accepted = false;
    double eta = lipschitz > 0 ? cfg.backtrack_init / lipschitz : cfg.backtrack_init;
    for (int h = 0; h <= cfg.backtrack_max; ++h, eta *= cfg.backtrack_shrink) {
      Matrix cand = (m.factors[mode] - eta * grad).cwiseMax(0.0);
      double value = objective_at(cand);
      if (!std::isfinite(value)) continue;
      if (value <= out.objective) {
        accepted = cand != m.factors[mode];
        const double gain = out.objective - value;
        m.factors[mode] = std::move(cand);
        out = {eta, value};
        if (gain <= 1e-15 * std::abs(value)) accepted = false;  // block is converged
        break;
      }
    }
    if (!accepted) break;
  }
  return out;
}

}  // namespace detail

struct FactorizeResult {
  CPModel model;
  FitTrace trace;
  Vector beta;  // final logistic coefficients (empty when unsupervised)
};

/// Fits a non-negative CP model. `initial`, when given, replaces the seeded
/// initialization (its rank must equal cfg.rank).
inline FactorizeResult factorize(const SparseTensor3& t, const SolverConfig& cfg, const Supervision* supervision = nullptr,
                                 const CPModel* initial = nullptr) {
  cfg.validate();
  if (t.empty()) throw InputError("factorize: empty tensor");
  t.validate();

  CPModel m;
  if (initial) {
    if (initial->dims() != t.dims || initial->rank() != cfg.rank)
      throw InputError("factorize: initial model does not match tensor dims / rank");
    m = normalize_columns(*initial);
  } else {
    m = init_factors(t.dims, cfg.rank, cfg.seed);
    // Best global scale of the initialization, so the iterate sequence is
    // invariant to rescaling the counts.
    const double inner = inner_product(t, m), norm_sq = model_squared_norm(m);
    if (inner > 0 && norm_sq > 0) m.lambda *= inner / norm_sq;
  }
  m.labels = t.labels;

  const bool supervised = detail::is_supervised(supervision, cfg.omega);
  Supervision sup;
  if (supervised) {
    sup = *supervision;
    if (static_cast<std::size_t>(sup.beta.size()) != 1 + cfg.rank + sup.n_covariates())
      sup.beta = Vector::Zero(static_cast<Eigen::Index>(1 + cfg.rank + sup.n_covariates()));
    detail::check_supervision(m, sup);
  }
  const Supervision* sup_ptr = supervised ? &sup : nullptr;

  FitTrace trace;
  trace.supervised = supervised;
  const double x_norm_sq = t.squared_norm();

  auto record = [&](int it, std::array<double, 3> steps, double beta_ll) {
    TraceRow row;
    row.iteration = it;
    row.frobenius = frobenius_fit(m, t);
    row.logistic = supervised ? detail::logistic_nll(m.factors[kPatient], sup) : 0.0;
    row.objective = row.frobenius + (supervised ? cfg.omega * row.logistic : 0.0);
    row.step = steps;
    row.beta_loglik = beta_ll;
    trace.rows.push_back(row);
    if (!std::isfinite(row.objective)) throw SolverAborted("factorize: non-finite objective", trace);
    return row.objective;
  };

  double previous = record(0, {0, 0, 0}, 0.0);
  double alpha = 0.5;  // extrapolation length, adapted on success / failure
  trace.stop_reason = "max_outer_iters";
  for (int it = 1; it <= cfg.max_outer_iters; ++it) {
    double beta_ll = 0;
    if (supervised) {
      sup.beta = refit_beta(m, sup);
      beta_ll = -detail::logistic_nll(m.factors[kPatient], sup);
    }
    const CPModel start = m;
    std::array<double, 3> steps{};
    for (std::size_t mode = 0; mode < 3; ++mode)
      steps[mode] = detail::mode_step(m, t, sup_ptr, cfg.omega, mode, cfg, x_norm_sq).step;

    // lambda is untouched by the block steps, so start and m share a scale.
    if (cfg.extrapolate && it > 1) {
      auto objective = [&](const CPModel& x) {
        return frobenius_fit(x, t) + (supervised ? cfg.omega * detail::logistic_nll(x.factors[kPatient], sup) : 0.0);
      };
      CPModel jump = m;
      for (std::size_t mode = 0; mode < 3; ++mode)
        for (Eigen::Index r = 0; r < m.lambda.size(); ++r)
          if (m.lambda[r] != 0.0)
            jump.factors[mode].col(r) =
                (m.factors[mode].col(r) + alpha * (m.factors[mode].col(r) - start.factors[mode].col(r))).cwiseMax(0.0);
      const double jumped = objective(jump);
      if (std::isfinite(jumped) && jumped < objective(m)) {
        m = std::move(jump);
        alpha = std::min(1.5 * alpha, 10.0);
      } else {
        alpha = std::max(0.5 * alpha, 0.1);
      }
    }

    // Max-normalize; the patient rescaling moves into beta so every linear
    // predictor is unchanged.
    const CPModel before = m;
    m = normalize_columns(std::move(m));
    if (supervised) {
      for (Eigen::Index r = 0; r < m.lambda.size(); ++r) {
        double mx = before.factors[kPatient].col(r).maxCoeff();
        sup.beta[1 + r] = m.lambda[r] == 0.0 ? 0.0 : sup.beta[1 + r] * mx;
      }
    }

    double current = record(it, steps, beta_ll);
    double denom = std::max(std::abs(previous), 1e-300);
    if (current == 0.0 || std::abs(previous - current) / denom < cfg.rel_tol) {
      trace.stop_reason = "rel_tol";
      break;
    }
    previous = current;
  }

  FactorizeResult res;
  auto order = importance_order(m);
  res.model = permute_components(m, order);
  res.model.labels = t.labels;
  res.trace = std::move(trace);
  if (supervised) {
    res.beta = sup.beta;
    for (std::size_t n = 0; n < order.size(); ++n) res.beta[static_cast<Eigen::Index>(1 + n)] = sup.beta[static_cast<Eigen::Index>(1 + order[n])];
  }
  return res;
}

inline void write_trace(const FitTrace& trace, std::ostream& out) {
  out << "iteration,objective,frobenius,logistic,step_patient,step_diagnosis,step_medication,beta_loglik\n";
  out.precision(17);
  for (const auto& r : trace.rows)
    out << r.iteration << ',' << r.objective << ',' << r.frobenius << ',' << r.logistic << ',' << r.step[0] << ','
        << r.step[1] << ',' << r.step[2] << ',' << r.beta_loglik << '\n';
}

inline void write_trace(const FitTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  write_trace(trace, out);
}

}  // namespace phenotensor
