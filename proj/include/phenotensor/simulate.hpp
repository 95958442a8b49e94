#pragma once

// Synthetic cohorts with planted phenotypes, for verification without
// access to real EHR data.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohort.hpp"
#include "common.hpp"
#include "cp_model.hpp"
#include "text_io.hpp"

namespace phenotensor {

struct SyntheticSpec {
  std::size_t n_patients = 500;
  std::size_t n_dx = 30;
  std::size_t n_med = 20;
  std::size_t true_rank = 5;
  /// Probability that a structural zero cell becomes a count of 1. With
  /// noise == 0 the counts are exact (memberships on {0.5, 1}, lambda a
  /// multiple of 8, no Poisson draw) so the tensor is exactly low rank.
  double noise = 0.002;
  double count_scale = 3.0;           // typical lambda
  std::size_t dx_per_phenotype = 4;
  std::size_t med_per_phenotype = 3;
  double phenotypes_per_patient = 1.5;  // expected memberships per patient
  /// Co-occurrence units merged into one encounter. 1 keeps every encounter a
  /// single (diagnosis, medication) pair, so equal correspondence reproduces
  /// the sampled counts exactly.
  std::size_t units_per_encounter = 3;
  /// Log-odds per standard deviation of each covariate (CovariateVector order).
  std::vector<double> covariate_effects{0.4, 0.3, -0.3, 0.3, 0.5, -0.3};
  /// Log-odds per unit membership of each planted phenotype; missing entries are 0.
  std::vector<double> label_coefficients{2.0, -1.5, 1.0};
  double label_intercept = -0.8;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_patients == 0 || n_dx == 0 || n_med == 0) throw InputError("synthetic spec: dimensions must be positive");
    if (true_rank == 0) throw InputError("synthetic spec: true_rank must be >= 1");
    if (dx_per_phenotype == 0 || dx_per_phenotype > n_dx || med_per_phenotype == 0 || med_per_phenotype > n_med)
      throw InputError("synthetic spec: phenotype sizes must lie in [1, n_dx] / [1, n_med]");
    if (noise < 0 || noise > 1) throw InputError("synthetic spec: noise must lie in [0, 1]");
    if (!(count_scale > 0)) throw InputError("synthetic spec: count_scale must be > 0");
    if (units_per_encounter == 0) throw InputError("synthetic spec: units_per_encounter must be >= 1");
    if (covariate_effects.size() != CovariateVector::size())
      throw InputError("synthetic spec: covariate_effects needs 6 entries");
  }
};

inline void apply_synthetic_keys(SyntheticSpec& s, const std::unordered_map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    try {
      if (k == "n_patients") s.n_patients = std::stoul(v);
      else if (k == "n_dx") s.n_dx = std::stoul(v);
      else if (k == "n_med") s.n_med = std::stoul(v);
      else if (k == "true_rank") s.true_rank = std::stoul(v);
      else if (k == "noise") s.noise = std::stod(v);
      else if (k == "count_scale") s.count_scale = std::stod(v);
      else if (k == "dx_per_phenotype") s.dx_per_phenotype = std::stoul(v);
      else if (k == "med_per_phenotype") s.med_per_phenotype = std::stoul(v);
      else if (k == "phenotypes_per_patient") s.phenotypes_per_patient = std::stod(v);
      else if (k == "units_per_encounter") s.units_per_encounter = std::stoul(v);
      else if (k == "covariate_effects") s.covariate_effects = parse_double_list(v);
      else if (k == "label_coefficients") s.label_coefficients = parse_double_list(v);
      else if (k == "label_intercept") s.label_intercept = std::stod(v);
      else if (k == "seed") s.seed = std::stoull(v);
      else throw InputError("synthetic spec: unknown key '" + k + "'");
    } catch (const std::logic_error&) {
      throw InputError("synthetic spec: bad value for '" + k + "': " + v);
    }
  }
  s.validate();
}

/// Rows in the raw ingest formats plus the planted truth.
struct SyntheticCohort {
  struct EncounterRow {
    std::string patient_id, encounter_id, date, kind, code;
  };
  std::vector<EncounterRow> encounters;
  std::vector<std::vector<std::string>> demographics;  // columns of the demographics header
  std::vector<std::pair<std::string, double>> income;
  std::vector<std::pair<std::string, std::string>> indications;  // (dx, generic med)
  std::vector<std::pair<std::string, std::string>> mapping;      // (pattern, generic)
  CPModel truth;                  // dims n_patients x n_dx x n_med, labels = ids
  std::vector<int> labels;        // per patient, in truth order
  std::vector<std::array<double, 6>> covariates;
  std::size_t structural_noise_entries = 0;
};

namespace detail {

inline std::string padded(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

inline double bernoulli(Rng& rng, double p) { return uniform_open01(rng) < p ? 1.0 : 0.0; }

inline double normal(Rng& rng) {
  // Box-Muller on uniform_open01 keeps draws independent of <random> internals.
  double u1 = uniform_open01(rng), u2 = uniform_open01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::int64_t poisson(Rng& rng, double mean) {
  if (mean <= 0) return 0;
  // Inversion by sequential search; means here are small.
  double u = uniform_open01(rng), p = std::exp(-mean), cdf = p;
  std::int64_t k = 0;
  while (u > cdf && k < 10000) {
    ++k;
    p *= mean / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

}  // namespace detail

inline SyntheticCohort simulate_cohort(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const bool exact = spec.noise == 0.0;
  const std::size_t P = spec.n_patients, D = spec.n_dx, M = spec.n_med, R = spec.true_rank;
  SyntheticCohort out;
  CPModel& truth = out.truth;
  truth = CPModel::zeros({P, D, M}, R);

  auto membership = [&]() { return exact ? (detail::bernoulli(rng, 0.5) ? 1.0 : 0.5) : 0.2 + 0.8 * uniform_open01(rng); };
  auto pick = [&](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle_in_place(idx, rng);
    idx.resize(k);
    return idx;
  };
  for (std::size_t r = 0; r < R; ++r) {
    auto er = static_cast<Eigen::Index>(r);
    for (auto d : pick(D, spec.dx_per_phenotype)) truth.factors[kDiagnosis](static_cast<Eigen::Index>(d), er) = membership();
    for (auto m : pick(M, spec.med_per_phenotype)) truth.factors[kMedication](static_cast<Eigen::Index>(m), er) = membership();
    double lam = spec.count_scale * (0.5 + uniform_open01(rng));
    truth.lambda[er] = exact ? 8.0 * std::ceil(lam / 8.0) : lam;
  }
  const double q = std::min(1.0, spec.phenotypes_per_patient / static_cast<double>(R));
  for (std::size_t p = 0; p < P; ++p) {
    auto ep = static_cast<Eigen::Index>(p);
    bool any = false;
    for (std::size_t r = 0; r < R; ++r)
      if (detail::bernoulli(rng, q)) {
        truth.factors[kPatient](ep, static_cast<Eigen::Index>(r)) = membership();
        any = true;
      }
    if (!any) truth.factors[kPatient](ep, static_cast<Eigen::Index>(uniform_index(rng, R))) = membership();
  }
  // Max-normalize; lambda keeps the planted scale (exact mode stays integral
  // because every column already attains 1 or is rescaled by 2).
  for (std::size_t r = 0; r < R; ++r) {
    auto er = static_cast<Eigen::Index>(r);
    for (auto& f : truth.factors) {
      double mx = f.col(er).maxCoeff();
      if (mx > 0) {
        f.col(er) /= mx;
        if (!exact) truth.lambda[er] *= mx;
      }
    }
  }
  for (std::size_t p = 0; p < P; ++p) truth.labels[kPatient].push_back(detail::padded("P", p, 5));
  for (std::size_t d = 0; d < D; ++d) truth.labels[kDiagnosis].push_back(detail::padded("D", d, 3));
  for (std::size_t m = 0; m < M; ++m) truth.labels[kMedication].push_back(detail::padded("med", m, 3));

  // Indications: (d, m) pairs sharing a planted phenotype.
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t r = 0; r < R; ++r) {
        auto er = static_cast<Eigen::Index>(r);
        if (truth.factors[kDiagnosis](static_cast<Eigen::Index>(d), er) > 0 &&
            truth.factors[kMedication](static_cast<Eigen::Index>(m), er) > 0) {
          out.indications.emplace_back(truth.labels[kDiagnosis][d], truth.labels[kMedication][m]);
          break;
        }
      }
  for (std::size_t m = 0; m < M; ++m)
    out.mapping.emplace_back(to_upper(truth.labels[kMedication][m]) + " *", truth.labels[kMedication][m]);

  // Covariates and zip-level income.
  const std::size_t n_zip = 40;
  for (std::size_t z = 0; z < n_zip; ++z)
    out.income.emplace_back(detail::padded("6", z, 4), std::round(30000.0 + 90000.0 * uniform_open01(rng)));
  std::vector<std::string> zips(P);
  out.covariates.resize(P);
  std::vector<std::array<std::string, 4>> categorical(P);
  for (std::size_t p = 0; p < P; ++p) {
    auto z = uniform_index(rng, n_zip);
    zips[p] = out.income[z].first;
    auto& c = out.covariates[p];
    auto& cat = categorical[p];
    auto maybe_missing = [&](std::string v) { return detail::bernoulli(rng, 0.03) ? std::string{} : v; };
    cat[0] = maybe_missing(detail::bernoulli(rng, 0.5) ? "M" : "F");
    cat[1] = maybe_missing(detail::bernoulli(rng, 0.2) ? "AFRICAN AMERICAN" : "WHITE");
    cat[2] = maybe_missing(detail::bernoulli(rng, 0.55) ? "MARRIED" : "SINGLE");
    cat[3] = maybe_missing(detail::bernoulli(rng, 0.4) ? "MEDICARE" : "PRIVATE");
    c[0] = cat[0] == "M";
    c[1] = cat[1] == "AFRICAN AMERICAN";
    c[2] = cat[2] == "MARRIED";
    c[3] = cat[3] == "MEDICARE";
    c[4] = std::clamp(std::round(65.0 + 10.0 * detail::normal(rng)), 20.0, 95.0);
    c[5] = out.income[z].second;
  }

  // Labels from a logistic model on true memberships plus standardized covariates.
  std::array<double, 6> mean{}, sd{};
  for (std::size_t c = 0; c < 6; ++c) {
    double s = 0, s2 = 0;
    for (const auto& v : out.covariates) s += v[c], s2 += v[c] * v[c];
    mean[c] = s / static_cast<double>(P);
    sd[c] = std::sqrt(std::max(s2 / static_cast<double>(P) - mean[c] * mean[c], 1e-12));
  }
  out.labels.resize(P);
  std::size_t positives = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double eta = spec.label_intercept;
    for (std::size_t r = 0; r < std::min(R, spec.label_coefficients.size()); ++r)
      eta += spec.label_coefficients[r] * truth.factors[kPatient](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(r));
    for (std::size_t c = 0; c < 6; ++c) eta += spec.covariate_effects[c] * (out.covariates[p][c] - mean[c]) / sd[c];
    out.labels[p] = detail::bernoulli(rng, sigmoid(eta)) > 0 ? 1 : 0;
    positives += static_cast<std::size_t>(out.labels[p]);
  }
  if (positives == 0 || positives == P) throw InputError("synthetic spec: labels have zero variance");

  // Counts and encounters.
  const Date epoch = *parse_date("2005-01-01");
  std::size_t encounter_counter = 0;
  for (std::size_t p = 0; p < P; ++p) {
    auto ep = static_cast<Eigen::Index>(p);
    std::vector<std::pair<std::size_t, std::size_t>> units;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t m = 0; m < M; ++m) {
        double mean_count = 0;
        for (std::size_t r = 0; r < R; ++r) {
          auto er = static_cast<Eigen::Index>(r);
          mean_count += truth.lambda[er] * truth.factors[kPatient](ep, er) *
                        truth.factors[kDiagnosis](static_cast<Eigen::Index>(d), er) *
                        truth.factors[kMedication](static_cast<Eigen::Index>(m), er);
        }
        std::int64_t count = exact ? static_cast<std::int64_t>(std::llround(mean_count)) : detail::poisson(rng, mean_count);
        if (mean_count == 0 && spec.noise > 0 && detail::bernoulli(rng, spec.noise)) {
          count = 1;
          ++out.structural_noise_entries;
        }
        for (std::int64_t c = 0; c < count; ++c) units.emplace_back(d, m);
      }
    shuffle_in_place(units, rng);

    const Date dx_date = add_days(epoch, static_cast<std::int32_t>(uniform_index(rng, 3650)));
    for (std::size_t start = 0; start < units.size(); start += spec.units_per_encounter) {
      auto eid = detail::padded("E", encounter_counter++, 8);
      auto date = format_date(add_days(dx_date, static_cast<std::int32_t>(uniform_index(rng, kDaysPerYear + 1))));
      std::set<std::size_t> dxs, meds;
      for (std::size_t u = start; u < std::min(units.size(), start + spec.units_per_encounter); ++u) {
        dxs.insert(units[u].first);
        meds.insert(units[u].second);
      }
      for (auto d : dxs) out.encounters.push_back({truth.labels[kPatient][p], eid, date, "DX", truth.labels[kDiagnosis][d]});
      for (auto m : meds)
        out.encounters.push_back(
            {truth.labels[kPatient][p], eid, date, "MED", to_upper(truth.labels[kMedication][m]) + " 10MG TAB"});
    }

    std::string death;
    if (out.labels[p] == 1)
      death = format_date(add_days(dx_date, 1 + static_cast<std::int32_t>(uniform_index(rng, 5 * kDaysPerYear))));
    else if (detail::bernoulli(rng, 0.3) > 0)
      death = format_date(add_days(dx_date, 5 * kDaysPerYear + 1 + static_cast<std::int32_t>(uniform_index(rng, 1000))));
    char age[16];
    std::snprintf(age, sizeof age, "%.0f", out.covariates[p][4]);
    out.demographics.push_back({truth.labels[kPatient][p], format_date(dx_date), death, age, categorical[p][0],
                                categorical[p][1], categorical[p][2], categorical[p][3], zips[p]});
  }
  return out;
}

struct SyntheticPaths {
  std::string encounters, demographics, income, indications, mapping, truth;
};

inline SyntheticPaths synthetic_paths(const std::filesystem::path& dir) {
  return {(dir / "encounters.csv").string(), (dir / "demographics.csv").string(), (dir / "income.csv").string(),
          (dir / "indications.csv").string(), (dir / "medication_mapping.tsv").string(), (dir / "truth.json").string()};
}

inline SyntheticPaths write_synthetic(const SyntheticCohort& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto paths = synthetic_paths(dir);
  {
    std::ofstream f(paths.encounters);
    f << "patient_id,encounter_id,date,kind,code\n";
    for (const auto& e : c.encounters)
      f << e.patient_id << ',' << e.encounter_id << ',' << e.date << ',' << e.kind << ',' << e.code << '\n';
  }
  {
    std::ofstream f(paths.demographics);
    f << "patient_id,diagnosis_date,death_date,age,sex,race,marital_status,insurance,zip\n";
    for (const auto& row : c.demographics) {
      for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
      f << '\n';
    }
  }
  {
    std::ofstream f(paths.income);
    f << "zip,median_income\n";
    for (const auto& [zip, v] : c.income) f << zip << ',' << static_cast<long long>(v) << '\n';
  }
  {
    std::ofstream f(paths.indications);
    f << "diagnosis_code,medication\n";
    for (const auto& [d, m] : c.indications) f << d << ',' << m << '\n';
  }
  {
    std::ofstream f(paths.mapping);
    for (const auto& [pat, g] : c.mapping) f << pat << '\t' << g << '\n';
  }
  {
    auto j = model_to_json(c.truth);
    j["outcome_labels"] = c.labels;
    std::ofstream f(paths.truth);
    f << j.dump(1) << '\n';
  }
  return paths;
}

}  // namespace phenotensor
