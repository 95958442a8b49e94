#pragma once

// End-to-end experiment grid: cohort -> tensor -> (supervised) factorization
// -> repeated cross-validated stepwise logistic models.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohort.hpp"
#include "common.hpp"
#include "cp_model.hpp"
#include "evaluation.hpp"
#include "solver.hpp"
#include "tensor.hpp"

namespace phenotensor {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentConfig {
  // Inputs
  std::string encounters, demographics, income;
  std::string mapping;            // optional
  std::string exclusions;         // optional
  std::string allowed_codes;      // optional
  std::string forced_medications; // optional
  std::string indications;        // required for indication filtering
  std::string extra_indications;  // optional, merged into indications

  Correspondence correspondence = Correspondence::kEqual;
  bool use_covariates = true;
  std::vector<double> omega_grid{0.0, 0.01, 0.1, 1.0, 10.0};
  SolverConfig solver;
  CvConfig cv;
  int inner_folds = 3;  // folds of the nested omega search
  double truncation_percentile = 0.99;
  double dx_min_frac = 0.01;
  double med_min_frac = 0.005;
  int horizon_years = 5;
  int window_years = 1;
  double display_threshold = 0.1;
  std::string output_dir = "phenotensor_out";
  std::uint64_t seed = 0;

  void validate() const {
    if (omega_grid.empty()) throw InputError("experiment: omega grid is empty");
    for (double w : omega_grid)
      if (!(w >= 0)) throw InputError("experiment: omega grid values must be >= 0");
    if (encounters.empty() || demographics.empty() || income.empty())
      throw InputError("experiment: encounters, demographics and income paths are required");
    if (correspondence == Correspondence::kIndicationFiltered && indications.empty())
      throw InputError("experiment: indication filtering needs an indications file");
    if (inner_folds < 2) throw InputError("experiment: inner_folds must be >= 2");
    solver.validate();
  }

  std::vector<double> positive_omegas() const {
    std::vector<double> out;
    for (double w : omega_grid)
      if (w > 0) out.push_back(w);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline bool parse_bool(const std::string& v) {
  auto u = to_upper(v);
  if (u == "1" || u == "TRUE" || u == "YES" || u == "ON") return true;
  if (u == "0" || u == "FALSE" || u == "NO" || u == "OFF") return false;
  throw InputError("expected a boolean, got '" + v + "'");
}

/// Applies `key = value` settings. Solver keys are shared with the solver config file.
inline void apply_experiment_keys(ExperimentConfig& c, const std::unordered_map<std::string, std::string>& kv) {
  std::unordered_map<std::string, std::string> solver_keys;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "encounters") c.encounters = v;
      else if (k == "demographics") c.demographics = v;
      else if (k == "income") c.income = v;
      else if (k == "mapping") c.mapping = v;
      else if (k == "exclusions") c.exclusions = v;
      else if (k == "allowed_codes") c.allowed_codes = v;
      else if (k == "forced_medications") c.forced_medications = v;
      else if (k == "indications") c.indications = v;
      else if (k == "extra_indications") c.extra_indications = v;
      else if (k == "correspondence") c.correspondence = parse_correspondence(v);
      else if (k == "use_covariates") c.use_covariates = parse_bool(v);
      else if (k == "omega_grid") c.omega_grid = parse_double_list(v);
      else if (k == "folds") c.cv.folds = std::stoi(v);
      else if (k == "repeats") c.cv.repeats = std::stoi(v);
      else if (k == "n_boot") c.cv.n_boot = std::stoul(v);
      else if (k == "ci_level") c.cv.level = std::stod(v);
      else if (k == "entry") c.cv.stepwise.entry = std::stod(v);
      else if (k == "exit") c.cv.stepwise.exit = std::stod(v);
      else if (k == "inner_folds") c.inner_folds = std::stoi(v);
      else if (k == "truncation_percentile") c.truncation_percentile = std::stod(v);
      else if (k == "dx_min_frac") c.dx_min_frac = std::stod(v);
      else if (k == "med_min_frac") c.med_min_frac = std::stod(v);
      else if (k == "horizon_years") c.horizon_years = std::stoi(v);
      else if (k == "window_years") c.window_years = std::stoi(v);
      else if (k == "display_threshold") c.display_threshold = std::stod(v);
      else if (k == "output_dir") c.output_dir = v;
      else if (k == "master_seed") c.seed = std::stoull(v);
      else solver_keys[k] = v;
    } catch (const std::logic_error&) {
      throw InputError("experiment config: bad value for '" + k + "': " + v);
    }
  }
  apply_solver_keys(c.solver, solver_keys);
}

// ---------------------------------------------------------------------------

/// Analysis-ready cohort: tensor plus labels and covariates aligned to its patients.
struct ExperimentData {
  SparseTensor3 tensor;
  std::vector<int> labels;
  Matrix covariates;  // n_patients x 6
  TensorStats stats;
  CohortTable table;
};

/// Applies the cohort pipeline: window + labels, medication normalization,
/// prevalence filter, counting, truncation, empty-patient pruning.
inline CohortTable prepare_cohort(const ExperimentConfig& cfg) {
  auto table = load_tables(cfg.encounters, cfg.demographics, cfg.income);
  table = assign_outcomes(std::move(table), cfg.horizon_years, cfg.window_years);
  if (!cfg.mapping.empty()) table = normalize_medication_names(std::move(table), cfg.mapping);
  PrevalenceFilter f;
  f.dx_min_frac = cfg.dx_min_frac;
  f.med_min_frac = cfg.med_min_frac;
  if (!cfg.exclusions.empty()) f.excluded_codes = read_list_file(cfg.exclusions);
  if (!cfg.allowed_codes.empty())
    for (auto& c : read_list_file(cfg.allowed_codes)) f.allowed_codes.insert(c);
  if (!cfg.forced_medications.empty())
    for (auto& c : read_list_file(cfg.forced_medications)) f.forced_medications.insert(c);
  return filter_by_prevalence(std::move(table), f);
}

inline IndicationMap load_indications(const ExperimentConfig& cfg) {
  IndicationMap map;
  if (!cfg.indications.empty()) map.read(cfg.indications);
  if (!cfg.extra_indications.empty()) map.read(cfg.extra_indications);
  return map;
}

inline ExperimentData build_data(const CohortTable& cohort, Correspondence mode, const IndicationMap* indications,
                                 double truncation_percentile) {
  auto t = count_cooccurrences(cohort, mode, indications);
  if (!t.empty()) t = truncate_counts(std::move(t), truncation_percentile);
  auto pruned = drop_empty_patients(std::move(t), cohort);
  ExperimentData d;
  d.tensor = std::move(pruned.tensor);
  d.table = std::move(pruned.table);
  d.stats = tensor_stats(d.tensor, d.table);
  const auto n = d.tensor.dims[kPatient];
  d.covariates = Matrix(static_cast<Eigen::Index>(n), 6);
  for (std::size_t p = 0; p < n; ++p) {
    const auto& id = d.tensor.labels[kPatient][p];
    auto lab = d.table.labels.find(id);
    if (lab == d.table.labels.end()) throw InputError("patient '" + id + "' has no outcome label");
    d.labels.push_back(lab->second);
    auto v = d.table.covariates.at(id).values();
    for (std::size_t c = 0; c < 6; ++c) d.covariates(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = v[c];
  }
  return d;
}

// ---------------------------------------------------------------------------

enum class FeatureSet { kCovariatesOnly, kPhenotypesOnly, kPhenotypesAndCovariates };

inline std::string to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::kCovariatesOnly: return "covariates";
    case FeatureSet::kPhenotypesOnly: return "phenotypes";
    case FeatureSet::kPhenotypesAndCovariates: return "phenotypes+covariates";
  }
  return "?";
}

struct Condition {
  FeatureSet features = FeatureSet::kPhenotypesOnly;
  bool supervised = false;

  std::string name(Correspondence c) const {
    return to_string(c) + "_" + to_string(features) + (features == FeatureSet::kCovariatesOnly ? "" : (supervised ? "_supervised" : "_unsupervised"));
  }
  bool uses_covariates() const { return features != FeatureSet::kPhenotypesOnly; }
  bool uses_phenotypes() const { return features != FeatureSet::kCovariatesOnly; }
};

inline std::vector<Condition> experiment_conditions(const ExperimentConfig& cfg) {
  std::vector<Condition> out;
  const bool any_supervised = !cfg.positive_omegas().empty();
  const bool any_unsupervised = std::count(cfg.omega_grid.begin(), cfg.omega_grid.end(), 0.0) > 0;
  if (cfg.use_covariates) out.push_back({FeatureSet::kCovariatesOnly, false});
  for (auto fs : {FeatureSet::kPhenotypesOnly, FeatureSet::kPhenotypesAndCovariates}) {
    if (fs == FeatureSet::kPhenotypesAndCovariates && !cfg.use_covariates) continue;
    if (any_unsupervised) out.push_back({fs, false});
    if (any_supervised) out.push_back({fs, true});
  }
  return out;
}

inline Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Design for one split from patient memberships and/or covariates.
inline FoldDesign make_design(const Matrix* memberships, const Matrix* covariates, const FoldSplit& s) {
  FoldDesign d;
  Eigen::Index cols = (memberships ? memberships->cols() : 0) + (covariates ? covariates->cols() : 0);
  Eigen::Index n = (memberships ? memberships->rows() : covariates->rows());
  Matrix all(n, cols);
  Eigen::Index c0 = 0;
  if (memberships) {
    all.leftCols(memberships->cols()) = *memberships;
    for (Eigen::Index r = 0; r < memberships->cols(); ++r) d.column_names.push_back("phenotype_" + std::to_string(r + 1));
    c0 = memberships->cols();
  }
  if (covariates) {
    all.middleCols(c0, covariates->cols()) = *covariates;
    for (const auto& nm : CovariateVector::names()) d.column_names.push_back(nm);
  }
  d.train = rows_of(all, s.train);
  d.test = rows_of(all, s.test);
  return d;
}

inline Supervision make_supervision(const ExperimentData& data, const std::vector<std::size_t>& labeled, bool with_covariates) {
  Supervision sup;
  sup.patients = labeled;
  for (auto p : labeled) sup.labels.push_back(data.labels[p]);
  if (with_covariates) sup.covariates = data.covariates;
  return sup;
}

struct OmegaTuning {
  double best_omega = 0;
  std::vector<std::pair<double, double>> mean_auc;  // (omega, mean inner CV AUC)
};

/// Picks the positive omega with the best mean CV AUC over `patients` only
/// (inner folds, one repeat). Ties go to the smaller omega. Labels outside
/// `patients` are never read.
inline OmegaTuning tune_omega(const ExperimentData& data, const std::vector<std::size_t>& patients,
                              const ExperimentConfig& cfg, bool with_covariates, const CPModel* warm_start,
                              std::uint64_t seed) {
  auto grid = cfg.positive_omegas();
  if (cfg.omega_grid.empty()) throw InputError("tune_omega: empty grid");
  if (grid.empty()) throw InputError("tune_omega: grid has no positive omega");
  OmegaTuning out;
  if (grid.size() == 1) {
    out.best_omega = grid[0];
    return out;
  }
  std::vector<int> sub_labels;
  for (auto p : patients) sub_labels.push_back(data.labels[p]);
  auto splits = make_splits(sub_labels, cfg.inner_folds, 1, seed);
  double best = -1;
  for (double omega : grid) {
    SolverConfig sc = cfg.solver;
    sc.omega = omega;
    double sum = 0;
    for (const auto& s : splits) {
      std::vector<std::size_t> train, test;
      for (auto i : s.train) train.push_back(patients[i]);
      for (auto i : s.test) test.push_back(patients[i]);
      auto sup = make_supervision(data, train, with_covariates);
      auto fit = factorize(data.tensor, sc, &sup, warm_start);
      FoldSplit global{0, s.fold, train, test};
      auto design = make_design(&fit.model.factors[kPatient], with_covariates ? &data.covariates : nullptr, global);
      sum += evaluate_split(design, subset(data.labels, train), subset(data.labels, test), cfg.cv.stepwise);
    }
    double mean = sum / static_cast<double>(splits.size());
    out.mean_auc.emplace_back(omega, mean);
    if (mean > best) {
      best = mean;
      out.best_omega = omega;
    }
  }
  return out;
}

struct CellResult {
  Condition condition;
  std::string name;
  CvReport cv;
  std::vector<double> chosen_omegas;  // per fold, supervised cells only
  bool factorized = false;
  std::optional<CPModel> model;       // model used for the phenotype report
  std::optional<FitTrace> trace;
  std::vector<FitTrace> fold_traces;
};

/// Cross-validates one grid cell. `unsupervised` is the label-free model fit
/// on all patients (shared by every fold; also the warm start of supervised fits).
inline CellResult run_condition(const ExperimentData& data, const ExperimentConfig& cfg, const Condition& cond,
                                const FactorizeResult* unsupervised) {
  CellResult cell;
  cell.condition = cond;
  cell.name = cond.name(cfg.correspondence);
  CvConfig cv = cfg.cv;
  cv.seed = substream_seed(cfg.seed, 1);
  const Matrix* cov = cond.uses_covariates() ? &data.covariates : nullptr;

  FeaturesBuilder builder;
  if (!cond.uses_phenotypes()) {
    builder = [&](const FoldSplit& s) { return make_design(nullptr, cov, s); };
  } else if (!cond.supervised) {
    cell.factorized = true;
    builder = [&](const FoldSplit& s) { return make_design(&unsupervised->model.factors[kPatient], cov, s); };
  } else {
    cell.factorized = true;
    builder = [&](const FoldSplit& s) {
      auto fold_seed = substream_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(s.repeat * 1000 + s.fold));
      auto tuning = tune_omega(data, s.train, cfg, cond.uses_covariates(), &unsupervised->model, fold_seed);
      SolverConfig sc = cfg.solver;
      sc.omega = tuning.best_omega;
      auto sup = make_supervision(data, s.train, cond.uses_covariates());
      auto fit = factorize(data.tensor, sc, &sup, &unsupervised->model);
      cell.chosen_omegas.push_back(tuning.best_omega);
      cell.fold_traces.push_back(fit.trace);
      return make_design(&fit.model.factors[kPatient], cov, s);
    };
  }
  cell.cv = repeated_cv(builder, data.labels, cv);

  if (cond.uses_phenotypes()) {
    if (!cond.supervised) {
      cell.model = unsupervised->model;
      cell.trace = unsupervised->trace;
    } else {
      // Final model on all labels at the most frequently chosen omega.
      std::map<double, int> votes;
      for (double w : cell.chosen_omegas) ++votes[w];
      double omega = votes.begin()->first;
      int best = 0;
      for (const auto& [w, n] : votes)
        if (n > best) best = n, omega = w;
      SolverConfig sc = cfg.solver;
      sc.omega = omega;
      std::vector<std::size_t> all(data.labels.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      auto sup = make_supervision(data, all, cond.uses_covariates());
      auto fit = factorize(data.tensor, sc, &sup, &unsupervised->model);
      cell.model = std::move(fit.model);
      cell.trace = std::move(fit.trace);
    }
  }
  return cell;
}

struct ExperimentResult {
  TensorStats stats;
  std::vector<CellResult> cells;
  std::optional<FactorizeResult> unsupervised;
};

inline std::string provenance(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << "phenotensor " << kVersion << "\n";
  o << "master_seed = " << cfg.seed << "\n";
  o << "correspondence = " << to_string(cfg.correspondence) << "\n";
  o << "use_covariates = " << (cfg.use_covariates ? "true" : "false") << "\n";
  o << "omega_grid =";
  for (double w : cfg.omega_grid) o << ' ' << w;
  o << "\nrank = " << cfg.solver.rank << ", max_outer_iters = " << cfg.solver.max_outer_iters
    << ", rel_tol = " << cfg.solver.rel_tol << ", solver seed = " << substream_seed(cfg.seed, 2) << "\n";
  o << "cv = " << cfg.cv.folds << " folds x " << cfg.cv.repeats << " repeats, stratified by outcome; cv seed = "
    << substream_seed(cfg.seed, 1) << "\n";
  o << "stepwise: likelihood-ratio tests, entry " << cfg.cv.stepwise.entry << ", exit " << cfg.cv.stepwise.exit << "\n";
  o << "bootstrap: " << cfg.cv.n_boot << " resamples of fold AUCs, nearest-rank percentile interval, level "
    << cfg.cv.level << "\n";
  o << "omega selection: nested inner CV (" << cfg.inner_folds << " folds) on each outer training fold\n";
  o << "supervision: transductive (all patients factorized, training-fold labels only)\n";
  o << "optimizer: block projected gradient with backtracking, beta refit every outer iteration\n";
  o << "normalization: max-norm columns (memberships in [0,1])\n";
  o << "counts: nearest-rank truncation at percentile " << cfg.truncation_percentile << " of nonzero counts\n";
  o << "prevalence: inclusive thresholds dx " << cfg.dx_min_frac << ", med " << cfg.med_min_frac
    << ", computed after window restriction and name normalization\n";
  o << "window: " << cfg.window_years << " year(s), horizon " << cfg.horizon_years << " years, 365-day years\n";
  o << "missing zip income: imputed with the cohort median\n";
  return o.str();
}

inline void write_cell(const CellResult& cell, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto j = cv_report_json(cell.cv);
    j["condition"] = cell.name;
    if (!cell.chosen_omegas.empty()) j["chosen_omegas"] = cell.chosen_omegas;
    std::ofstream(dir / "cv_report.json") << j.dump(1) << '\n';
  }
  if (cell.model) {
    write_model(*cell.model, (dir / "model.json").string());
    auto rep = export_phenotypes(*cell.model, cfg.display_threshold);
    std::ofstream txt(dir / "phenotypes.txt");
    write_phenotype_text(rep, txt);
    std::ofstream(dir / "phenotypes.json") << phenotype_json(rep).dump(1) << '\n';
  }
  if (cell.trace) write_trace(*cell.trace, (dir / "trace.csv").string());
  if (!cell.fold_traces.empty()) {
    std::filesystem::create_directories(dir / "fold_traces");
    for (std::size_t f = 0; f < cell.fold_traces.size(); ++f)
      write_trace(cell.fold_traces[f], (dir / "fold_traces" / ("fold_" + std::to_string(f) + ".csv")).string());
  }
}

inline std::string summary_table(const ExperimentResult& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(4);
  o << "condition\tmean_auc\tci_lo\tci_hi\n";
  for (const auto& c : r.cells) o << c.name << '\t' << c.cv.mean_auc << '\t' << c.cv.ci.lo << '\t' << c.cv.ci.hi << '\n';
  return o.str();
}

/// Runs every grid cell on an already prepared dataset.
inline ExperimentResult run_experiment(const ExperimentData& data, const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.stats = data.stats;
  auto conditions = experiment_conditions(cfg);
  bool needs_factorization = std::any_of(conditions.begin(), conditions.end(), [](const Condition& c) { return c.uses_phenotypes(); });
  if (needs_factorization) {
    SolverConfig sc = cfg.solver;
    sc.omega = 0;
    sc.seed = substream_seed(cfg.seed, 2);
    res.unsupervised = factorize(data.tensor, sc);
  }
  ExperimentConfig c2 = cfg;
  c2.solver.seed = substream_seed(cfg.seed, 2);
  for (const auto& cond : conditions)
    res.cells.push_back(run_condition(data, c2, cond, res.unsupervised ? &*res.unsupervised : nullptr));
  return res;
}

/// Loads inputs per `cfg`, runs the grid and writes all artifacts to cfg.output_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto cohort = prepare_cohort(cfg);
  IndicationMap ind;
  if (cfg.correspondence == Correspondence::kIndicationFiltered) ind = load_indications(cfg);
  auto data = build_data(cohort, cfg.correspondence, &ind, cfg.truncation_percentile);
  if (data.tensor.empty()) throw InputError("experiment: tensor is empty after filtering");
  auto res = run_experiment(data, cfg);

  std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);
  std::ofstream(out / "provenance.txt") << provenance(cfg);
  std::ofstream(out / "summary.tsv") << summary_table(res);
  nlohmann::json j;
  for (const auto& c : res.cells) {
    write_cell(c, cfg, out / c.name);
    j["cells"][c.name] = {{"mean_auc", c.cv.mean_auc}, {"ci", {c.cv.ci.lo, c.cv.ci.hi}}, {"factorized", c.factorized}};
  }
  std::ofstream(out / "summary.json") << j.dump(1) << '\n';
  write_tensor(data.tensor, (out / "tensor.txt").string());
  return res;
}

// ---------------------------------------------------------------------------
// Table 1 style tensor characteristics

struct CharacteristicsColumn {
  std::string cohort;
  TensorStats all;
  TensorStats indicated;
};

inline std::string report_characteristics_text(const std::vector<CharacteristicsColumn>& cols, std::vector<std::string>* warnings = nullptr) {
  std::ostringstream o;
  o << "characteristic";
  for (const auto& c : cols) o << '\t' << c.cohort << " All" << '\t' << c.cohort << " Ind.";
  o << '\n';
  auto row = [&](const char* name, auto getter) {
    o << name;
    for (const auto& c : cols) o << '\t' << getter(c.all) << '\t' << getter(c.indicated);
    o << '\n';
  };
  row("Patients", [](const TensorStats& s) { return s.n_patients; });
  row("Diagnoses", [](const TensorStats& s) { return s.n_diagnoses; });
  row("Medications", [](const TensorStats& s) { return s.n_medications; });
  row("Dx-med pairs", [](const TensorStats& s) { return s.n_dx_med_pairs; });
  row("Median co-occurrences per pt.", [](const TensorStats& s) { return s.median_cooccurrences_per_patient; });
  row("Total co-occurrences", [](const TensorStats& s) { return s.total_cooccurrences; });
  row("Deaths at 5 years", [](const TensorStats& s) { return s.deaths_at_horizon; });
  row("Mean age", [](const TensorStats& s) { return s.mean_age; });
  for (const auto& c : cols)
    if (c.all.n_patients == 0 && warnings) warnings->push_back("warning: cohort '" + c.cohort + "' is empty");
  return o.str();
}

inline nlohmann::json stats_json(const TensorStats& s) {
  return {{"n_patients", s.n_patients},
          {"n_diagnoses", s.n_diagnoses},
          {"n_medications", s.n_medications},
          {"n_dx_med_pairs", s.n_dx_med_pairs},
          {"median_cooccurrences_per_patient", s.median_cooccurrences_per_patient},
          {"total_cooccurrences", s.total_cooccurrences},
          {"deaths_at_horizon", s.deaths_at_horizon},
          {"mean_age", s.mean_age}};
}

inline TensorStats stats_from_json(const nlohmann::json& j) {
  TensorStats s;
  s.n_patients = j.at("n_patients").get<std::size_t>();
  s.n_diagnoses = j.at("n_diagnoses").get<std::size_t>();
  s.n_medications = j.at("n_medications").get<std::size_t>();
  s.n_dx_med_pairs = j.at("n_dx_med_pairs").get<std::size_t>();
  s.median_cooccurrences_per_patient = j.at("median_cooccurrences_per_patient").get<double>();
  s.total_cooccurrences = j.at("total_cooccurrences").get<std::int64_t>();
  s.deaths_at_horizon = j.at("deaths_at_horizon").get<std::size_t>();
  s.mean_age = j.at("mean_age").get<double>();
  return s;
}

inline nlohmann::json report_characteristics_json(const std::vector<CharacteristicsColumn>& cols) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cols) j.push_back({{"cohort", c.cohort}, {"all", stats_json(c.all)}, {"indicated", stats_json(c.indicated)}});
  return j;
}

}  // namespace phenotensor
