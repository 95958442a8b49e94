#pragma once

// CP model of a 3-way tensor and its exact kernels.

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "tensor.hpp"

namespace phenotensor {

/// Sum of R rank-one components lambda_r * a_r o b_r o c_r.
/// factors[kPatient], factors[kDiagnosis], factors[kMedication] are n_mode x R.
struct CPModel {
  Vector lambda;
  std::array<Matrix, 3> factors;
  std::array<std::vector<std::string>, 3> labels;  // optional, may be empty

  std::size_t rank() const { return static_cast<std::size_t>(lambda.size()); }
  std::array<std::size_t, 3> dims() const {
    return {static_cast<std::size_t>(factors[0].rows()), static_cast<std::size_t>(factors[1].rows()),
            static_cast<std::size_t>(factors[2].rows())};
  }

  bool is_dead(std::size_t r) const { return lambda[static_cast<Eigen::Index>(r)] == 0.0; }

  static CPModel zeros(std::array<std::size_t, 3> dims, std::size_t rank) {
    CPModel m;
    m.lambda = Vector::Zero(static_cast<Eigen::Index>(rank));
    for (std::size_t k = 0; k < 3; ++k)
      m.factors[k] = Matrix::Zero(static_cast<Eigen::Index>(dims[k]), static_cast<Eigen::Index>(rank));
    return m;
  }
};

namespace detail {

inline void check_dims(const CPModel& m, const SparseTensor3& t) {
  if (m.dims() != t.dims) throw InputError("model and tensor dimensions differ");
  for (std::size_t k = 0; k < 3; ++k)
    if (static_cast<std::size_t>(m.factors[k].cols()) != m.rank()) throw InputError("factor column count != rank");
}

}  // namespace detail

inline double reconstruct_entry(const CPModel& m, std::size_t i, std::size_t j, std::size_t k) {
  auto d = m.dims();
  if (i >= d[0] || j >= d[1] || k >= d[2]) throw InputError("reconstruct_entry: index out of range");
  double s = 0;
  for (Eigen::Index r = 0; r < m.lambda.size(); ++r)
    s += m.lambda[r] * m.factors[0](static_cast<Eigen::Index>(i), r) *
         m.factors[1](static_cast<Eigen::Index>(j), r) * m.factors[2](static_cast<Eigen::Index>(k), r);
  return s;
}

/// Gram matrix U^T U of one mode.
inline Matrix gram(const CPModel& m, std::size_t mode) { return m.factors[mode].transpose() * m.factors[mode]; }

/// (lambda lambda^T) .* (Hadamard product of the Gram matrices of all modes except `skip`).
inline Matrix weighted_gram_except(const CPModel& m, std::size_t skip) {
  Matrix g = m.lambda * m.lambda.transpose();
  for (std::size_t k = 0; k < 3; ++k)
    if (k != skip) g = g.cwiseProduct(gram(m, k));
  return g;
}

/// ||M||_F^2 = lambda^T (G_1 .* G_2 .* G_3) lambda.
inline double model_squared_norm(const CPModel& m) {
  Matrix h = gram(m, 0).cwiseProduct(gram(m, 1)).cwiseProduct(gram(m, 2));
  return m.lambda.dot(h * m.lambda);
}

/// Matricized tensor times Khatri-Rao product of the two other factors, without lambda:
/// out(i_mode, r) = sum over nonzeros x * U_a(idx_a, r) * U_b(idx_b, r).
inline Matrix mttkrp(const SparseTensor3& t, const CPModel& m, std::size_t mode) {
  detail::check_dims(m, t);
  if (mode > 2) throw InputError("mttkrp: mode must be 0, 1 or 2");
  const auto R = static_cast<Eigen::Index>(m.rank());
  const std::size_t a = mode == 0 ? 1 : 0;
  const std::size_t b = mode == 2 ? 1 : 2;
  // Row-major accumulation keeps each nonzero's update contiguous.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(m.factors[mode].rows(), R);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ua = m.factors[a], ub = m.factors[b];
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    const auto& c = t.coords[e];
    const double x = static_cast<double>(t.counts[e]);
    out.row(c[mode]) += x * ua.row(c[a]).cwiseProduct(ub.row(c[b]));
  }
  return out;
}

/// <X, M> from a precomputed mode-`mode` MTTKRP.
inline double inner_from_mttkrp(const CPModel& m, std::size_t mode, const Matrix& k) {
  return m.factors[mode].cwiseProduct(k).colwise().sum().dot(m.lambda.transpose());
}

/// <X, M> summed over the nonzeros of X.
inline double inner_product(const SparseTensor3& t, const CPModel& m) {
  return inner_from_mttkrp(m, kPatient, mttkrp(t, m, kPatient));
}

/// ||X - M||_F^2 over all cells, computed as ||X||^2 - 2<X,M> + ||M||^2.
inline double frobenius_fit(const CPModel& m, const SparseTensor3& t) {
  detail::check_dims(m, t);
  // Expanded form; cancellation can leave a tiny negative residue at an exact fit.
  return std::max(0.0, t.squared_norm() - 2.0 * inner_product(t, m) + model_squared_norm(m));
}

/// Max-normalizes every factor column, moving the scale into lambda.
/// A component with an all-zero column in any mode becomes dead: all of its
/// columns are zeroed and lambda_r = 0.
inline CPModel normalize_columns(CPModel m) {
  for (Eigen::Index r = 0; r < m.lambda.size(); ++r) {
    std::array<double, 3> maxima{};
    for (std::size_t k = 0; k < 3; ++k)
      maxima[k] = m.factors[k].rows() > 0 ? m.factors[k].col(r).maxCoeff() : 0.0;
    bool dead = m.lambda[r] == 0.0 || std::any_of(maxima.begin(), maxima.end(), [](double v) { return v <= 0.0; });
    if (dead) {
      m.lambda[r] = 0.0;
      for (auto& f : m.factors) f.col(r).setZero();
      continue;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      m.factors[k].col(r) /= maxima[k];
      m.lambda[r] *= maxima[k];
    }
  }
  return m;
}

/// Stable permutation of components by descending lambda.
inline std::vector<std::size_t> importance_order(const CPModel& m) {
  std::vector<std::size_t> order(m.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return m.lambda[static_cast<Eigen::Index>(a)] > m.lambda[static_cast<Eigen::Index>(b)];
  });
  return order;
}

inline CPModel permute_components(const CPModel& m, const std::vector<std::size_t>& order) {
  CPModel out = m;
  for (std::size_t n = 0; n < order.size(); ++n) {
    auto dst = static_cast<Eigen::Index>(n), src = static_cast<Eigen::Index>(order[n]);
    out.lambda[dst] = m.lambda[src];
    for (std::size_t k = 0; k < 3; ++k) out.factors[k].col(dst) = m.factors[k].col(src);
  }
  return out;
}

inline CPModel sort_by_importance(const CPModel& m) { return permute_components(m, importance_order(m)); }

// ---------------------------------------------------------------------------
// Phenotype export

struct Member {
  std::string name;
  double value = 0;
};

struct Phenotype {
  std::size_t index = 0;  // 0-based position in the sorted model
  double importance = 0;
  std::vector<Member> diagnoses;   // value > 0, descending
  std::vector<Member> medications;  // value > 0, descending
  bool dead() const { return importance == 0.0; }
};

/// Average phenotype lengths over live components, at > 0 and > threshold.
struct PhenotypeLengths {
  double threshold = 0.1;
  std::size_t live_components = 0;
  double mean_dx_nonzero = 0;
  double mean_med_nonzero = 0;
  double mean_dx_above = 0;
  double mean_med_above = 0;
};

struct PhenotypeReport {
  std::vector<Phenotype> phenotypes;
  PhenotypeLengths lengths;
};

namespace detail {

inline std::vector<Member> members(const Matrix& f, Eigen::Index r, const std::vector<std::string>& labels) {
  std::vector<Member> out;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    double v = f(i, r);
    if (v > 0) out.push_back({static_cast<std::size_t>(i) < labels.size() ? labels[static_cast<std::size_t>(i)]
                                                                           : std::to_string(i),
                              v});
  }
  std::stable_sort(out.begin(), out.end(), [](const Member& a, const Member& b) { return a.value > b.value; });
  return out;
}

inline std::size_t count_above(const std::vector<Member>& ms, double threshold) {
  return static_cast<std::size_t>(
      std::count_if(ms.begin(), ms.end(), [&](const Member& m) { return m.value > threshold; }));
}

}  // namespace detail

/// Expects a normalized, importance-sorted model. Labels default to the
/// model's own label tables.
inline PhenotypeReport export_phenotypes(const CPModel& m, double display_threshold = 0.1,
                                         const std::array<std::vector<std::string>, 3>* labels = nullptr) {
  const auto& names = labels ? *labels : m.labels;
  PhenotypeReport rep;
  rep.lengths.threshold = display_threshold;
  double dx0 = 0, med0 = 0, dxt = 0, medt = 0;
  for (std::size_t r = 0; r < m.rank(); ++r) {
    Phenotype p;
    p.index = r;
    p.importance = m.lambda[static_cast<Eigen::Index>(r)];
    if (!m.is_dead(r)) {
      p.diagnoses = detail::members(m.factors[kDiagnosis], static_cast<Eigen::Index>(r), names[kDiagnosis]);
      p.medications = detail::members(m.factors[kMedication], static_cast<Eigen::Index>(r), names[kMedication]);
      ++rep.lengths.live_components;
      dx0 += static_cast<double>(p.diagnoses.size());
      med0 += static_cast<double>(p.medications.size());
      dxt += static_cast<double>(detail::count_above(p.diagnoses, display_threshold));
      medt += static_cast<double>(detail::count_above(p.medications, display_threshold));
    }
    rep.phenotypes.push_back(std::move(p));
  }
  if (auto n = static_cast<double>(rep.lengths.live_components); n > 0) {
    rep.lengths.mean_dx_nonzero = dx0 / n;
    rep.lengths.mean_med_nonzero = med0 / n;
    rep.lengths.mean_dx_above = dxt / n;
    rep.lengths.mean_med_above = medt / n;
  }
  return rep;
}

inline constexpr const char* kNormalizationNote = "membership normalization: max-norm (each column scaled to max 1)";

inline void write_phenotype_text(const PhenotypeReport& rep, std::ostream& out) {
  const double thr = rep.lengths.threshold;
  out << "# " << kNormalizationNote << "\n";
  out << "# live phenotypes: " << rep.lengths.live_components << "\n";
  out << "# mean length (> 0):   diagnoses " << rep.lengths.mean_dx_nonzero << ", medications "
      << rep.lengths.mean_med_nonzero << "\n";
  out << "# mean length (> " << thr << "): diagnoses " << rep.lengths.mean_dx_above << ", medications "
      << rep.lengths.mean_med_above << "\n";
  for (const auto& p : rep.phenotypes) {
    if (p.dead()) continue;
    out << "\nPhenotype " << p.index + 1 << "  (importance " << p.importance << ")\n";
    out << "  Diagnoses:\n";
    for (const auto& d : p.diagnoses)
      if (d.value > thr) out << "    " << d.name << "  " << d.value << "\n";
    out << "  Medications:\n";
    for (const auto& d : p.medications)
      if (d.value > thr) out << "    " << d.name << "  " << d.value << "\n";
  }
}

inline nlohmann::json phenotype_json(const PhenotypeReport& rep) {
  using nlohmann::json;
  json j;
  j["normalization"] = "max";
  j["threshold"] = rep.lengths.threshold;
  j["live_components"] = rep.lengths.live_components;
  j["mean_length"] = {{"diagnoses_nonzero", rep.lengths.mean_dx_nonzero},
                      {"medications_nonzero", rep.lengths.mean_med_nonzero},
                      {"diagnoses_above_threshold", rep.lengths.mean_dx_above},
                      {"medications_above_threshold", rep.lengths.mean_med_above}};
  json list = json::array();
  for (const auto& p : rep.phenotypes) {
    json e;
    e["index"] = p.index;
    e["importance"] = p.importance;
    e["dead"] = p.dead();
    auto ms = [](const std::vector<Member>& v) {
      json a = json::array();
      for (const auto& m : v) a.push_back({{"name", m.name}, {"value", m.value}});
      return a;
    };
    e["diagnoses"] = ms(p.diagnoses);
    e["medications"] = ms(p.medications);
    list.push_back(std::move(e));
  }
  j["phenotypes"] = std::move(list);
  return j;
}

// ---------------------------------------------------------------------------
// Model file (JSON)

inline nlohmann::json model_to_json(const CPModel& m) {
  using nlohmann::json;
  static const std::array<const char*, 3> names{"patient", "diagnosis", "medication"};
  json j;
  j["format"] = "phenotensor-cp-model";
  j["version"] = 1;
  j["normalization"] = "max";
  j["rank"] = m.rank();
  j["lambda"] = std::vector<double>(m.lambda.data(), m.lambda.data() + m.lambda.size());
  for (std::size_t k = 0; k < 3; ++k) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.factors[k].rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(m.factors[k].cols()));
      for (Eigen::Index r = 0; r < m.factors[k].cols(); ++r) row[static_cast<std::size_t>(r)] = m.factors[k](i, r);
      rows.push_back(std::move(row));
    }
    j["factors"][names[k]] = std::move(rows);
    j["labels"][names[k]] = m.labels[k];
  }
  return j;
}

inline CPModel model_from_json(const nlohmann::json& j) {
  static const std::array<const char*, 3> names{"patient", "diagnosis", "medication"};
  try {
    CPModel m;
    auto lambda = j.at("lambda").get<std::vector<double>>();
    auto rank = j.at("rank").get<std::size_t>();
    if (lambda.size() != rank) throw InputError("model file: lambda length != rank");
    m.lambda = Eigen::Map<Vector>(lambda.data(), static_cast<Eigen::Index>(rank));
    for (std::size_t k = 0; k < 3; ++k) {
      auto rows = j.at("factors").at(names[k]).get<std::vector<std::vector<double>>>();
      m.factors[k] = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rank));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rank) throw InputError("model file: factor row length != rank");
        for (std::size_t r = 0; r < rank; ++r)
          m.factors[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = rows[i][r];
      }
      if (j.contains("labels") && j["labels"].contains(names[k]))
        m.labels[k] = j["labels"][names[k]].get<std::vector<std::string>>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model file: ") + e.what());
  }
}

inline void write_model(const CPModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  out << model_to_json(m).dump(1) << '\n';
}

inline CPModel read_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace phenotensor
