#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace phenotensor;

namespace {

Supervision random_supervision(std::mt19937_64& rng, std::size_t n_patients, std::size_t rank, std::size_t n_cov) {
  Supervision s;
  std::normal_distribution<double> g(0, 1);
  for (std::size_t p = 0; p < n_patients; ++p)
    if (p == 0 || rng() % 4 != 0) {
      s.patients.push_back(p);
      s.labels.push_back(static_cast<int>(rng() % 2));
    }
  s.covariates = Matrix(static_cast<Eigen::Index>(n_patients), static_cast<Eigen::Index>(n_cov));
  for (Eigen::Index i = 0; i < s.covariates.size(); ++i) s.covariates.data()[i] = g(rng);
  s.beta = Vector(static_cast<Eigen::Index>(1 + rank + n_cov));
  for (Eigen::Index i = 0; i < s.beta.size(); ++i) s.beta[i] = g(rng);
  return s;
}

/// Tensor holding round(value) of a model with integer-friendly entries.
SparseTensor3 tensor_from_model(const CPModel& m) {
  auto dims = m.dims();
  SparseTensor3 t;
  t.dims = dims;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < dims[k]; ++i) t.labels[k].push_back(std::to_string(i));
  for (std::uint32_t i = 0; i < dims[0]; ++i)
    for (std::uint32_t j = 0; j < dims[1]; ++j)
      for (std::uint32_t k = 0; k < dims[2]; ++k) {
        auto v = std::llround(reconstruct_entry(m, i, j, k));
        if (v > 0) {
          t.coords.push_back({i, j, k});
          t.counts.push_back(v);
        }
      }
  return t;
}

/// Plain full-batch gradient descent on the mean logistic NLL.
Vector gradient_descent_logistic(const Matrix& x, const Vector& y, int iters = 200000, double lr = 0.5) {
  Vector beta = Vector::Zero(x.cols() + 1);
  const double n = static_cast<double>(x.rows());
  for (int it = 0; it < iters; ++it) {
    Vector grad = Vector::Zero(beta.size());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double z = beta[0] + x.row(i).dot(beta.tail(x.cols()));
      double r = 1.0 / (1.0 + std::exp(-z)) - y[i];
      grad[0] += r;
      grad.tail(x.cols()) += r * x.row(i).transpose();
    }
    beta -= lr * grad / n;
    if (grad.norm() / n < 1e-10) break;
  }
  return beta;
}

}  // namespace

TEST(SolverConfig, DefaultsAndKeys) {
  SolverConfig c;
  EXPECT_EQ(c.rank, 50u);
  EXPECT_EQ(c.omega, 0.0);
  apply_solver_keys(c, {{"rank", "8"}, {"omega", "0.5"}, {"seed", "42"}});
  EXPECT_EQ(c.rank, 8u);
  EXPECT_EQ(c.omega, 0.5);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.inner_iters, 10);
  EXPECT_TRUE(c.extrapolate);
  apply_solver_keys(c, {{"inner_iters", "1"}, {"extrapolate", "false"}});
  EXPECT_EQ(c.inner_iters, 1);
  EXPECT_FALSE(c.extrapolate);
  EXPECT_THROW(apply_solver_keys(c, {{"inner_iters", "0"}}), InputError);
  c.inner_iters = 1;
  EXPECT_THROW(apply_solver_keys(c, {{"rnak", "8"}}), InputError);
  EXPECT_THROW(apply_solver_keys(c, {{"rank", "eight"}}), InputError);
  EXPECT_THROW(apply_solver_keys(c, {{"omega", "-1"}}), InputError);
  EXPECT_THROW(apply_solver_keys(c, {{"rank", "0"}}), InputError);
}

TEST(InitFactors, DeterminismAndRange) {
  auto a = init_factors({2, 2, 2}, 1, 7), b = init_factors({2, 2, 2}, 1, 7), c = init_factors({2, 2, 2}, 1, 8);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a.factors[k], b.factors[k]);
    EXPECT_GT(a.factors[k].minCoeff(), 0.0);
    EXPECT_LE(a.factors[k].maxCoeff(), 1.0);
  }
  bool differ = false;
  for (std::size_t k = 0; k < 3; ++k) differ |= a.factors[k] != c.factors[k];
  EXPECT_TRUE(differ);
  EXPECT_THROW(init_factors({2, 2, 2}, 0, 1), InputError);
}

TEST(CombinedObjective, WorkedExamples) {
  std::mt19937_64 rng(31);
  auto t = pt_test::random_tensor(rng, {4, 3, 3});
  auto m = pt_test::random_model(rng, t.dims, 2);
  auto sup = random_supervision(rng, 4, 2, 2);
  EXPECT_EQ(combined_objective(m, t, &sup, 0.0), frobenius_fit(m, t));
  EXPECT_EQ(combined_objective(m, t, nullptr, 3.0), frobenius_fit(m, t));

  auto zero = sup;
  zero.beta.setZero();
  const double n = static_cast<double>(zero.patients.size());
  EXPECT_NEAR(combined_objective(m, t, &zero, 2.0), frobenius_fit(m, t) + 2.0 * n * std::log(2.0), 1e-10);

  EXPECT_NEAR(combined_objective(m, t, &sup, 0.7), pt_test::dense_fit(m, t) + 0.7 * pt_test::nll_oracle(m, sup), 1e-10);

  sup.beta[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(combined_objective(m, t, &sup, 1.0), NumericalError);
}

TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 15; ++trial) {
    std::array<std::size_t, 3> dims{2 + rng() % 3, 2 + rng() % 3, 2 + rng() % 3};
    auto t = pt_test::random_tensor(rng, dims, 0.5, 4);
    std::size_t R = 1 + rng() % 3;
    auto m = pt_test::random_model(rng, dims, R);
    auto sup = random_supervision(rng, dims[0], R, rng() % 3);
    for (double omega : {0.0, 0.1, 1.0}) {
      auto g = patient_mode_gradient(m, t, &sup, omega);
      EXPECT_LE(pt_test::relative_error(g, pt_test::fd_gradient(m, t, &sup, omega, kPatient)), 1e-5);
    }
    for (std::size_t mode : {std::size_t{kDiagnosis}, std::size_t{kMedication}})
      EXPECT_LE(pt_test::relative_error(other_mode_gradient(m, t, mode), pt_test::fd_gradient(m, t, nullptr, 0, mode)), 1e-5);
  }
}

TEST(Gradients, SpecialCases) {
  std::mt19937_64 rng(33);
  auto t = pt_test::random_tensor(rng, {3, 2, 2});
  auto m = pt_test::random_model(rng, t.dims, 2);
  auto sup = random_supervision(rng, 3, 2, 0);
  Matrix pure = 2.0 * (m.factors[0] * weighted_gram_except(m, 0) - mttkrp(t, m, 0) * m.lambda.asDiagonal());
  EXPECT_LE((patient_mode_gradient(m, t, &sup, 0.0) - pure).cwiseAbs().maxCoeff(), 1e-12);

  // sigma(z_p) = y_p cannot hold for 0/1 labels at finite z; a constant
  // predictor with beta_pheno = 0 gives zero supervised contribution instead.
  auto flat = sup;
  flat.beta.setZero();
  EXPECT_LE((patient_mode_gradient(m, t, &flat, 5.0) - pure).cwiseAbs().maxCoeff(), 1e-12);

  // Exact fit: zero gradient.
  CPModel exact = CPModel::zeros({2, 2, 2}, 1);
  exact.lambda[0] = 4;  // all entries integral
  exact.factors[0] << 1, 0.5;
  exact.factors[1] << 1, 1;
  exact.factors[2] << 0.5, 1;
  auto x = tensor_from_model(exact);
  EXPECT_LE(other_mode_gradient(exact, x, kDiagnosis).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(other_mode_gradient(exact, x, kMedication).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE(patient_mode_gradient(exact, x, nullptr, 0).cwiseAbs().maxCoeff(), 1e-9);

  // Empty tensor: 2 U Gamma.
  SparseTensor3 empty;
  empty.dims = t.dims;
  empty.labels = t.labels;
  Matrix expect = 2.0 * m.factors[1] * weighted_gram_except(m, 1);
  EXPECT_LE((other_mode_gradient(m, empty, kDiagnosis) - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(other_mode_gradient(m, t, kPatient), InputError);
}

TEST(RefitBeta, SymmetricAndDeterministic) {
  CPModel m = CPModel::zeros({4, 1, 1}, 2);
  m.lambda << 1, 1;
  Supervision sup;
  sup.patients = {0, 1, 2, 3};
  sup.labels = {0, 1, 0, 1};
  auto beta = refit_beta(m, sup);
  EXPECT_NEAR(beta[0], 0.0, 1e-10);
  EXPECT_NEAR(beta[1], 0.0, 1e-10);
  EXPECT_NEAR(beta[2], 0.0, 1e-10);

  std::mt19937_64 rng(34);
  auto rm = pt_test::random_model(rng, {30, 2, 2}, 2);
  auto rs = random_supervision(rng, 30, 2, 1);
  rs.beta.resize(0);
  EXPECT_EQ(refit_beta(rm, rs), refit_beta(rm, rs));
}

TEST(RefitBeta, MatchesGradientDescentOracle) {
  Rng rng(35);
  const std::size_t n = 400;
  CPModel m = CPModel::zeros({n, 1, 1}, 2);
  m.lambda << 1, 1;
  Supervision sup;
  for (std::size_t p = 0; p < n; ++p) {
    m.factors[0](static_cast<Eigen::Index>(p), 0) = uniform_open01(rng);
    m.factors[0](static_cast<Eigen::Index>(p), 1) = uniform_open01(rng);
    double z = -0.5 + 1.5 * m.factors[0](static_cast<Eigen::Index>(p), 0) - 1.0 * m.factors[0](static_cast<Eigen::Index>(p), 1);
    sup.patients.push_back(p);
    sup.labels.push_back(uniform_open01(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0);
  }
  Vector y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = sup.labels[i];
  auto oracle = gradient_descent_logistic(m.factors[0], y);
  auto beta = refit_beta(m, sup);
  EXPECT_LE((beta - oracle).cwiseAbs().maxCoeff(), 0.05) << beta.transpose() << " vs " << oracle.transpose();
}

TEST(RefitBeta, SingleClassIsDegenerate) {
  CPModel m = CPModel::zeros({3, 1, 1}, 1);
  m.lambda << 1;
  Supervision sup;
  sup.patients = {0, 1, 2};
  sup.labels = {1, 1, 1};
  EXPECT_THROW(refit_beta(m, sup), DegenerateEvaluationError);
}

TEST(Factorize, ExactRankOneRecovery) {
  CPModel truth = CPModel::zeros({4, 3, 3}, 1);
  truth.lambda << 8;
  truth.factors[0] << 1, 0.5, 1, 0.5;
  truth.factors[1] << 0.5, 1, 1;
  truth.factors[2] << 1, 1, 0.5;
  auto t = tensor_from_model(truth);
  SolverConfig cfg;
  cfg.rank = 1;
  cfg.rel_tol = 1e-12;
  cfg.seed = 3;
  auto res = factorize(t, cfg);
  EXPECT_LE(frobenius_fit(res.model, t), 1e-6 * t.squared_norm());
}

TEST(Factorize, ZeroIterationsReturnsInitialization) {
  std::mt19937_64 rng(36);
  auto t = pt_test::random_tensor(rng, {5, 4, 3});
  SolverConfig cfg;
  cfg.rank = 3;
  cfg.max_outer_iters = 0;
  cfg.seed = 9;
  auto res = factorize(t, cfg);
  auto init = init_factors(t.dims, 3, 9);
  ASSERT_EQ(res.trace.rows.size(), 1u);
  // Same directions as the normalized initialization; only lambda is rescaled.
  auto order = importance_order(init);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(res.model.factors[k], permute_components(init, order).factors[k]);
}

TEST(Factorize, MonotoneNonNegativeAndSorted) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 4; ++trial) {
    auto t = pt_test::random_tensor(rng, {12, 6, 5}, 0.3, 6);
    auto sup = random_supervision(rng, 12, 3, 2);
    sup.beta.resize(0);
    for (double omega : {0.0, 1.0}) {
      SolverConfig cfg;
      cfg.rank = 3;
      cfg.omega = omega;
      cfg.max_outer_iters = 60;
      cfg.seed = static_cast<std::uint64_t>(trial);
      auto res = factorize(t, cfg, &sup);
      EXPECT_EQ(res.trace.supervised, omega > 0);
      for (std::size_t r = 1; r < res.trace.rows.size(); ++r)
        EXPECT_LE(res.trace.rows[r].objective, res.trace.rows[r - 1].objective * (1 + 1e-12) + 1e-12);
      for (const auto& f : res.model.factors) EXPECT_GE(f.minCoeff(), 0.0);
      for (Eigen::Index r = 1; r < res.model.lambda.size(); ++r) EXPECT_GE(res.model.lambda[r - 1], res.model.lambda[r]);
      if (omega > 0) {
        EXPECT_EQ(res.beta.size(), 1 + 3 + 2);
      }
    }
  }
}

TEST(Factorize, SortedBetaMatchesSortedModel) {
  std::mt19937_64 rng(38);
  auto t = pt_test::random_tensor(rng, {15, 5, 5}, 0.3, 6);
  auto sup = random_supervision(rng, 15, 3, 0);
  sup.beta.resize(0);
  SolverConfig cfg;
  cfg.rank = 3;
  cfg.omega = 1.0;
  cfg.max_outer_iters = 30;
  auto res = factorize(t, cfg, &sup);
  // The returned beta reproduces the final logistic term of the trace.
  Supervision check = sup;
  check.beta = res.beta;
  EXPECT_NEAR(pt_test::nll_oracle(res.model, check), res.trace.rows.back().logistic, 1e-8);
}

TEST(Factorize, ScaleInvariance) {
  std::mt19937_64 rng(39);
  auto t = pt_test::random_tensor(rng, {8, 5, 4}, 0.4, 5);
  auto t4 = t;
  for (auto& c : t4.counts) c *= 4;
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.max_outer_iters = 40;
  auto a = factorize(t, cfg), b = factorize(t4, cfg);
  ASSERT_EQ(a.trace.rows.size(), b.trace.rows.size());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LE((a.model.factors[k] - b.model.factors[k]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((4.0 * a.model.lambda - b.model.lambda).cwiseAbs().maxCoeff(), 1e-8 * b.model.lambda.maxCoeff());
}

TEST(Factorize, DeterministicForSeed) {
  std::mt19937_64 rng(40);
  auto t = pt_test::random_tensor(rng, {8, 5, 4});
  SolverConfig cfg;
  cfg.rank = 2;
  cfg.seed = 5;
  auto a = factorize(t, cfg), b = factorize(t, cfg);
  EXPECT_EQ(a.model.lambda, b.model.lambda);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.model.factors[k], b.model.factors[k]);
}

TEST(Factorize, LabelIndependentSupervisionBarelyMovesFit) {
  SyntheticSpec spec;
  spec.n_patients = 300;
  spec.true_rank = 3;
  spec.label_coefficients = {0, 0, 0};
  spec.covariate_effects = {0, 0, 0, 0, 0, 0};
  spec.label_intercept = 0;
  spec.seed = 4;
  auto cohort = simulate_cohort(spec);
  auto dir = pt_test::temp_dir("solver_null");
  auto paths = write_synthetic(cohort, dir);
  ExperimentConfig ec;
  ec.encounters = paths.encounters;
  ec.demographics = paths.demographics;
  ec.income = paths.income;
  ec.mapping = paths.mapping;
  auto data = build_data(prepare_cohort(ec), Correspondence::kEqual, nullptr, 0.99);
  std::vector<std::size_t> all(data.labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto sup = make_supervision(data, all, false);
  SolverConfig cfg;
  cfg.rank = 3;
  cfg.seed = 1;
  auto base = factorize(data.tensor, cfg);
  cfg.omega = 1.0;
  auto supervised = factorize(data.tensor, cfg, &sup, &base.model);
  double f0 = base.trace.rows.back().frobenius, f1 = supervised.trace.rows.back().frobenius;
  EXPECT_LE(std::abs(f1 - f0), 0.05 * f0) << f0 << " vs " << f1;
}

TEST(Factorize, InputErrors) {
  std::mt19937_64 rng(41);
  auto t = pt_test::random_tensor(rng, {4, 3, 3});
  SolverConfig cfg;
  cfg.rank = 2;
  EXPECT_THROW(factorize(SparseTensor3{}, cfg), InputError);
  auto wrong = init_factors({4, 3, 3}, 3, 1);
  EXPECT_THROW(factorize(t, cfg, nullptr, &wrong), InputError);
  Supervision bad;
  bad.patients = {10};
  bad.labels = {1};
  cfg.omega = 1;
  EXPECT_THROW(factorize(t, cfg, &bad), InputError);
  cfg.rel_tol = 0;
  EXPECT_THROW(factorize(t, cfg), InputError);
}

TEST(Trace, CsvHeader) {
  FitTrace tr;
  tr.rows.push_back({});
  std::ostringstream out;
  write_trace(tr, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')),
            "iteration,objective,frobenius,logistic,step_patient,step_diagnosis,step_medication,beta_loglik");
}
