#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace phenotensor;

namespace {

CPModel rank1(double lambda, double a, double b, double c) {
  CPModel m = CPModel::zeros({1, 1, 1}, 1);
  m.lambda[0] = lambda;
  m.factors[0](0, 0) = a;
  m.factors[1](0, 0) = b;
  m.factors[2](0, 0) = c;
  return m;
}

}  // namespace

TEST(ReconstructEntry, WorkedExamples) {
  EXPECT_DOUBLE_EQ(reconstruct_entry(rank1(2, 1, 0.5, 0.25), 0, 0, 0), 0.25);
  EXPECT_DOUBLE_EQ(reconstruct_entry(rank1(2, 1, 0.0, 0.25), 0, 0, 0), 0.0);
  CPModel m = CPModel::zeros({1, 1, 1}, 2);
  m.lambda << 1, 1;
  for (auto& f : m.factors) f << 1, 0.5;
  EXPECT_DOUBLE_EQ(reconstruct_entry(m, 0, 0, 0), 1.125);
  EXPECT_THROW(reconstruct_entry(m, 1, 0, 0), InputError);
}

TEST(FrobeniusFit, ExactAndEmptyModel) {
  std::mt19937_64 rng(2);
  auto t = pt_test::random_tensor(rng, {3, 3, 2});
  auto zero = CPModel::zeros(t.dims, 2);
  EXPECT_NEAR(frobenius_fit(zero, t), t.squared_norm(), 1e-12);

  // Rank-1 tensor from integer-valued factors, fit by the same factors.
  CPModel m = CPModel::zeros({2, 2, 2}, 1);
  m.lambda[0] = 1;
  m.factors[0] << 1, 2;
  m.factors[1] << 1, 3;
  m.factors[2] << 2, 1;
  SparseTensor3 x;
  x.dims = {2, 2, 2};
  for (auto& l : x.labels) l = {"0", "1"};
  for (std::uint32_t i = 0; i < 2; ++i)
    for (std::uint32_t j = 0; j < 2; ++j)
      for (std::uint32_t k = 0; k < 2; ++k) {
        x.coords.push_back({i, j, k});
        x.counts.push_back(static_cast<std::int64_t>(std::llround(reconstruct_entry(m, i, j, k))));
      }
  EXPECT_NEAR(frobenius_fit(m, x), 0.0, 1e-9);
}

TEST(FrobeniusFit, MatchesDenseOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    std::array<std::size_t, 3> dims{1 + rng() % 4, 1 + rng() % 4, 1 + rng() % 4};
    auto t = pt_test::random_tensor(rng, dims);
    auto m = pt_test::random_model(rng, dims, 1 + rng() % 3);
    EXPECT_NEAR(frobenius_fit(m, t), pt_test::dense_fit(m, t), 1e-9);
  }
}

TEST(FrobeniusFit, DimensionMismatch) {
  std::mt19937_64 rng(1);
  auto t = pt_test::random_tensor(rng, {2, 2, 2});
  EXPECT_THROW(frobenius_fit(CPModel::zeros({3, 2, 2}, 1), t), InputError);
}

TEST(Mttkrp, WorkedExamples) {
  SparseTensor3 t;
  t.dims = {1, 1, 1};
  t.labels = {{{"p"}, {"A"}, {"x"}}};
  t.coords = {{0, 0, 0}};
  t.counts = {3};
  auto m = rank1(1, 1, 1, 1);
  EXPECT_DOUBLE_EQ(mttkrp(t, m, 0)(0, 0), 3.0);

  SparseTensor3 empty;
  empty.dims = {2, 2, 2};
  for (auto& l : empty.labels) l = {"0", "1"};
  std::mt19937_64 rng(4);
  auto rm = pt_test::random_model(rng, {2, 2, 2}, 2);
  for (std::size_t mode = 0; mode < 3; ++mode) EXPECT_EQ(mttkrp(empty, rm, mode), Matrix::Zero(2, 2));
  EXPECT_THROW(mttkrp(empty, rm, 3), InputError);
}

TEST(Mttkrp, MatchesDenseOracle) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 25; ++trial) {
    std::array<std::size_t, 3> dims{1 + rng() % 4, 1 + rng() % 4, 1 + rng() % 4};
    auto t = pt_test::random_tensor(rng, dims);
    auto m = pt_test::random_model(rng, dims, 1 + rng() % 3);
    for (std::size_t mode = 0; mode < 3; ++mode)
      EXPECT_LE((mttkrp(t, m, mode) - pt_test::dense_mttkrp(t, m, mode)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(NormalizeColumns, WorkedExamples) {
  CPModel m = CPModel::zeros({1, 2, 1}, 1);
  m.lambda[0] = 1;
  m.factors[0] << 1;
  m.factors[1] << 2, 4;
  m.factors[2] << 1;
  auto n = normalize_columns(m);
  EXPECT_DOUBLE_EQ(n.factors[1](0, 0), 0.5);
  EXPECT_DOUBLE_EQ(n.factors[1](1, 0), 1.0);
  EXPECT_DOUBLE_EQ(n.lambda[0], 4.0);

  auto again = normalize_columns(n);
  EXPECT_EQ(again.lambda, n.lambda);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(again.factors[k], n.factors[k]);

  CPModel dead = CPModel::zeros({2, 2, 2}, 2);
  dead.lambda << 1, 1;
  for (auto& f : dead.factors) f.col(0).setConstant(0.5);
  auto d = normalize_columns(dead);
  EXPECT_FALSE(d.is_dead(0));
  EXPECT_TRUE(d.is_dead(1));
}

TEST(NormalizeColumns, PreservesReconstruction) {
  std::mt19937_64 rng(8);
  auto m = pt_test::random_model(rng, {3, 4, 2}, 3);
  auto n = normalize_columns(m);
  for (std::size_t k = 0; k < 3; ++k)
    for (Eigen::Index r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(n.factors[k].col(r).maxCoeff(), 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(reconstruct_entry(n, i, j, k), reconstruct_entry(m, i, j, k), 1e-12);
}

TEST(SortByImportance, Cases) {
  CPModel m = CPModel::zeros({1, 1, 1}, 3);
  m.lambda << 1, 3, 2;
  m.factors[0] << 10, 30, 20;
  auto s = sort_by_importance(m);
  EXPECT_EQ(s.lambda, (Vector(3) << 3, 2, 1).finished());
  EXPECT_EQ(s.factors[0], (Matrix(1, 3) << 30, 20, 10).finished());

  m.lambda << 1, 1, 1;
  EXPECT_EQ(sort_by_importance(m).factors[0], m.factors[0]);

  m.lambda << 0, 1, 2;
  EXPECT_EQ(importance_order(m), (std::vector<std::size_t>{2, 1, 0}));
}

TEST(ExportPhenotypes, LengthsAndDeadComponents) {
  CPModel m = CPModel::zeros({1, 3, 2}, 2);
  m.lambda << 2, 0;
  m.factors[0] << 1, 0;
  m.factors[1] << 1.0, 0, 0.05, 0, 0, 0;
  m.factors[2] << 1, 0, 0.3, 0;
  m.labels[1] = {"A", "B", "C"};
  m.labels[2] = {"x", "y"};
  auto rep = export_phenotypes(m, 0.1);
  ASSERT_EQ(rep.phenotypes.size(), 2u);
  EXPECT_EQ(rep.phenotypes[0].diagnoses.size(), 2u);
  EXPECT_EQ(rep.phenotypes[0].diagnoses[0].name, "A");
  EXPECT_TRUE(rep.phenotypes[1].dead());
  EXPECT_TRUE(rep.phenotypes[1].diagnoses.empty());
  EXPECT_EQ(rep.lengths.live_components, 1u);
  EXPECT_DOUBLE_EQ(rep.lengths.mean_dx_nonzero, 2);
  EXPECT_DOUBLE_EQ(rep.lengths.mean_dx_above, 1);
  EXPECT_DOUBLE_EQ(rep.lengths.mean_med_nonzero, 2);
  EXPECT_DOUBLE_EQ(rep.lengths.mean_med_above, 2);

  std::ostringstream txt;
  write_phenotype_text(rep, txt);
  EXPECT_NE(txt.str().find("max-norm"), std::string::npos);
  auto j = phenotype_json(rep);
  EXPECT_EQ(j["phenotypes"].size(), 2u);
}

TEST(ExportPhenotypes, IdenticalComponentsListIdentically) {
  CPModel m = CPModel::zeros({2, 3, 2}, 2);
  m.lambda << 1, 1;
  for (auto& f : m.factors) f.setConstant(0.5);
  m.factors[1](0, 0) = m.factors[1](0, 1) = 1.0;
  m.labels[1] = {"A", "B", "C"};
  m.labels[2] = {"x", "y"};
  auto rep = export_phenotypes(m);
  ASSERT_EQ(rep.phenotypes[0].diagnoses.size(), rep.phenotypes[1].diagnoses.size());
  for (std::size_t i = 0; i < rep.phenotypes[0].diagnoses.size(); ++i) {
    EXPECT_EQ(rep.phenotypes[0].diagnoses[i].name, rep.phenotypes[1].diagnoses[i].name);
    EXPECT_EQ(rep.phenotypes[0].diagnoses[i].value, rep.phenotypes[1].diagnoses[i].value);
  }
}

TEST(ModelIo, JsonRoundTripAndErrors) {
  std::mt19937_64 rng(9);
  auto m = pt_test::random_model(rng, {3, 2, 2}, 2);
  m.labels = {{{"a", "b", "c"}, {"A", "B"}, {"x", "y"}}};
  auto dir = pt_test::temp_dir("model_io");
  write_model(m, (dir / "m.json").string());
  auto back = read_model((dir / "m.json").string());
  EXPECT_EQ(back.labels, m.labels);
  EXPECT_LE((back.lambda - m.lambda).cwiseAbs().maxCoeff(), 1e-15);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LE((back.factors[k] - m.factors[k]).cwiseAbs().maxCoeff(), 1e-15);

  pt_test::write_file(dir / "bad.json", "{\"rank\": 2, \"lambda\": [1]}");
  EXPECT_THROW(read_model((dir / "bad.json").string()), InputError);
  pt_test::write_file(dir / "junk.json", "not json");
  EXPECT_THROW(read_model((dir / "junk.json").string()), InputError);
}
