// phenotensor command-line front end.
//
// Exit codes: 0 ok, 1 input error, 2 numerical failure, 3 degenerate evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <phenotensor/phenotensor.hpp>

namespace fs = std::filesystem;
using namespace phenotensor;

namespace {

enum Exit { kOk = 0, kInput = 1, kNumerical = 2, kDegenerate = 3 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path.string());
  out << text;
}

void print_notes(const IngestReport& r) {
  for (const auto& row : r.rejected_rows) std::cerr << "rejected: " << row << '\n';
  for (const auto& n : r.notes) std::cerr << n << '\n';
}

struct CohortOptions {
  std::string encounters, demographics, income, mapping, exclusions, allowed, forced;
  double dx_min_frac = 0.01, med_min_frac = 0.005;
  int horizon = 5, window = 1;
};

void add_cohort_options(CLI::App* app, CohortOptions& o) {
  app->add_option("--encounters", o.encounters, "encounter table (patient_id,encounter_id,date,kind,code)")->required();
  app->add_option("--demographics", o.demographics, "demographics table")->required();
  app->add_option("--income", o.income, "zip,median_income table")->required();
  app->add_option("--mapping", o.mapping, "medication mapping rules (pattern<TAB>generic[,generic])");
  app->add_option("--exclusions", o.exclusions, "excluded code patterns, one per line");
  app->add_option("--allowed-codes", o.allowed, "codes exempt from exclusion, one per line");
  app->add_option("--forced-medications", o.forced, "medications kept regardless of prevalence");
  app->add_option("--dx-min-frac", o.dx_min_frac, "minimum diagnosis prevalence")->capture_default_str();
  app->add_option("--med-min-frac", o.med_min_frac, "minimum medication prevalence")->capture_default_str();
  app->add_option("--horizon-years", o.horizon, "outcome horizon")->capture_default_str();
  app->add_option("--window-years", o.window, "observation window after diagnosis")->capture_default_str();
}

ExperimentConfig to_experiment(const CohortOptions& o) {
  ExperimentConfig c;
  c.encounters = o.encounters;
  c.demographics = o.demographics;
  c.income = o.income;
  c.mapping = o.mapping;
  c.exclusions = o.exclusions;
  c.allowed_codes = o.allowed;
  c.forced_medications = o.forced;
  c.dx_min_frac = o.dx_min_frac;
  c.med_min_frac = o.med_min_frac;
  c.horizon_years = o.horizon;
  c.window_years = o.window;
  return c;
}

/// Labels and covariates of a cohort directory aligned to tensor patients.
ExperimentData align(const SparseTensor3& t, const CohortTable& cohort) {
  ExperimentData d;
  d.tensor = t;
  d.table = cohort;
  const auto n = t.dims[kPatient];
  d.covariates = Matrix(static_cast<Eigen::Index>(n), 6);
  for (std::size_t p = 0; p < n; ++p) {
    const auto& id = t.labels[kPatient][p];
    auto lab = cohort.labels.find(id);
    auto cov = cohort.covariates.find(id);
    if (lab == cohort.labels.end() || cov == cohort.covariates.end())
      throw InputError("tensor patient '" + id + "' is missing from the cohort");
    d.labels.push_back(lab->second);
    auto v = cov->second.values();
    for (std::size_t c = 0; c < 6; ++c) d.covariates(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = v[c];
  }
  d.stats = tensor_stats(t, cohort);
  return d;
}

void write_fit(const FactorizeResult& fit, const fs::path& out, double threshold) {
  fs::create_directories(out);
  write_model(fit.model, (out / "model.json").string());
  write_trace(fit.trace, (out / "trace.csv").string());
  auto rep = export_phenotypes(fit.model, threshold);
  std::ofstream txt(out / "phenotypes.txt");
  write_phenotype_text(rep, txt);
  std::ofstream(out / "phenotypes.json") << phenotype_json(rep).dump(1) << '\n';
  if (fit.beta.size() > 0) {
    nlohmann::json j;
    j["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
    std::ofstream(out / "beta.json") << j.dump(1) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phenotensor: supervised tensor phenotyping of encounter records"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // ingest
  CohortOptions ingest_opts;
  std::string ingest_out;
  auto* ingest = app.add_subcommand("ingest", "load raw tables, assign outcomes, normalize and filter codes");
  add_cohort_options(ingest, ingest_opts);
  ingest->add_option("--out", ingest_out, "cohort directory to write")->required();

  // build-tensor
  std::string bt_cohort, bt_mode = "equal", bt_ind, bt_extra, bt_out, bt_stats;
  double bt_pct = 0.99;
  auto* build = app.add_subcommand("build-tensor", "count diagnosis-medication co-occurrences per patient");
  build->add_option("--cohort", bt_cohort, "cohort directory from ingest")->required();
  build->add_option("--mode", bt_mode, "equal | indication")->capture_default_str();
  build->add_option("--indications", bt_ind, "diagnosis_code,medication pairs");
  build->add_option("--extra-indications", bt_extra, "additional pairs merged into --indications");
  build->add_option("--truncation", bt_pct, "count cap percentile")->capture_default_str();
  build->add_option("--out", bt_out, "tensor file to write")->required();
  build->add_option("--stats", bt_stats, "write tensor characteristics as JSON");

  // factorize
  std::string fz_tensor, fz_config, fz_cohort, fz_out, fz_init;
  SolverConfig fz;
  bool fz_cov = false;
  double fz_threshold = 0.1;
  std::optional<std::size_t> fz_rank;
  std::optional<double> fz_omega;
  std::optional<int> fz_iters;
  std::optional<std::uint64_t> fz_seed;
  auto* factor = app.add_subcommand("factorize", "fit a (supervised) non-negative CP model");
  factor->add_option("--tensor", fz_tensor, "tensor file")->required();
  factor->add_option("--config", fz_config, "solver settings (key = value)");
  factor->add_option("--rank", fz_rank, "number of phenotypes (default 50)");
  factor->add_option("--omega", fz_omega, "weight of the logistic term (default 0)");
  factor->add_option("--max-iters", fz_iters, "outer iteration limit (default 500)");
  factor->add_option("--seed", fz_seed, "initialization seed");
  factor->add_option("--cohort", fz_cohort, "cohort directory providing labels (needed when omega > 0)");
  factor->add_flag("--covariates", fz_cov, "include covariates in the supervised term");
  factor->add_option("--init", fz_init, "warm-start model file");
  factor->add_option("--threshold", fz_threshold, "phenotype display threshold")->capture_default_str();
  factor->add_option("--out", fz_out, "output directory")->required();

  // evaluate
  std::string ev_cohort, ev_tensor, ev_model, ev_features = "phenotypes", ev_out;
  CvConfig ev_cv;
  auto* evaluate = app.add_subcommand("evaluate", "cross-validated AUC of stepwise logistic models");
  evaluate->add_option("--cohort", ev_cohort, "cohort directory")->required();
  evaluate->add_option("--tensor", ev_tensor, "tensor file (fixes the patient set)")->required();
  evaluate->add_option("--model", ev_model, "model file whose patient memberships are the features");
  evaluate->add_option("--features", ev_features, "phenotypes | covariates | both")->capture_default_str();
  evaluate->add_option("--folds", ev_cv.folds)->capture_default_str();
  evaluate->add_option("--repeats", ev_cv.repeats)->capture_default_str();
  evaluate->add_option("--n-boot", ev_cv.n_boot)->capture_default_str();
  evaluate->add_option("--seed", ev_cv.seed)->capture_default_str();
  evaluate->add_option("--out", ev_out, "report JSON");

  // run
  std::string run_config, run_out;
  std::uint64_t run_seed = 0;
  auto* run = app.add_subcommand("run", "full protocol: all feature sets, supervised and unsupervised, repeated CV");
  run->add_option("--config", run_config, "experiment settings (key = value)")->required();
  run->add_option("--seed", run_seed, "master seed")->required();
  run->add_option("--out", run_out, "output directory (overrides output_dir)");

  // simulate
  std::string sim_spec, sim_out;
  std::uint64_t sim_seed = 0;
  std::optional<std::size_t> sim_n;
  auto* simulate = app.add_subcommand("simulate", "write a synthetic cohort with planted phenotypes");
  simulate->add_option("--seed", sim_seed, "generator seed")->required();
  simulate->add_option("--spec", sim_spec, "generator settings (key = value)");
  simulate->add_option("--n-patients", sim_n, "number of patients");
  simulate->add_option("--out", sim_out, "output directory")->required();

  // report
  std::vector<std::string> rp_cohorts;
  std::string rp_ind, rp_model, rp_json;
  double rp_pct = 0.99, rp_threshold = 0.1;
  auto* report = app.add_subcommand("report", "tensor characteristics table or phenotype listing");
  report->add_option("--cohort", rp_cohorts, "NAME=DIR of an ingested cohort (repeatable)");
  report->add_option("--indications", rp_ind, "indication pairs for the filtered columns");
  report->add_option("--truncation", rp_pct)->capture_default_str();
  report->add_option("--model", rp_model, "model file to list as phenotypes");
  report->add_option("--threshold", rp_threshold)->capture_default_str();
  report->add_option("--json", rp_json, "also write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*ingest) {
      auto cfg = to_experiment(ingest_opts);
      auto table = prepare_cohort(cfg);
      print_notes(table.report);
      write_cohort(table, ingest_out);
      std::size_t deaths = 0;
      for (const auto& [id, y] : table.labels) deaths += static_cast<std::size_t>(y);
      std::cout << "patients " << table.demographics.size() << ", encounters " << table.encounters.size()
                << ", deaths within horizon " << deaths << '\n';
    } else if (*build) {
      auto cohort = read_cohort(bt_cohort);
      auto mode = parse_correspondence(bt_mode);
      IndicationMap ind;
      if (mode == Correspondence::kIndicationFiltered) {
        if (bt_ind.empty()) throw InputError("build-tensor: --mode indication needs --indications");
        ind.read(bt_ind);
        if (!bt_extra.empty()) ind.read(bt_extra);
      }
      auto data = build_data(cohort, mode, &ind, bt_pct);
      print_notes(data.table.report);
      write_tensor(data.tensor, bt_out);
      if (!bt_stats.empty()) write_text(bt_stats, stats_json(data.stats).dump(1) + "\n");
      std::cout << "dims " << data.tensor.dims[0] << " x " << data.tensor.dims[1] << " x " << data.tensor.dims[2]
                << ", nonzeros " << data.tensor.nnz() << '\n';
    } else if (*factor) {
      if (!fz_config.empty()) fz = read_solver_config(fz_config);
      if (fz_rank) fz.rank = *fz_rank;
      if (fz_omega) fz.omega = *fz_omega;
      if (fz_iters) fz.max_outer_iters = *fz_iters;
      if (fz_seed) fz.seed = *fz_seed;
      fz.validate();
      auto t = read_tensor(fz_tensor);
      std::optional<CPModel> init;
      if (!fz_init.empty()) init = read_model(fz_init);
      std::optional<Supervision> sup;
      if (fz.omega > 0) {
        if (fz_cohort.empty()) throw InputError("factorize: omega > 0 needs --cohort for labels");
        auto data = align(t, read_cohort(fz_cohort));
        std::vector<std::size_t> all(data.labels.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        sup = make_supervision(data, all, fz_cov);
      }
      FactorizeResult fit;
      try {
        fit = factorize(t, fz, sup ? &*sup : nullptr, init ? &*init : nullptr);
      } catch (const SolverAborted& e) {
        fs::create_directories(fz_out);
        write_trace(e.trace, (fs::path(fz_out) / "trace.csv").string());
        throw;
      }
      write_fit(fit, fz_out, fz_threshold);
      const auto& last = fit.trace.rows.back();
      std::cout << "iterations " << last.iteration << " (" << fit.trace.stop_reason << "), objective "
                << last.objective << ", frobenius " << last.frobenius << '\n';
    } else if (*evaluate) {
      auto t = read_tensor(ev_tensor);
      auto data = align(t, read_cohort(ev_cohort));
      bool use_phen = ev_features == "phenotypes" || ev_features == "both";
      bool use_cov = ev_features == "covariates" || ev_features == "both";
      if (!use_phen && !use_cov) throw InputError("evaluate: --features must be phenotypes, covariates or both");
      std::optional<CPModel> model;
      if (use_phen) {
        if (ev_model.empty()) throw InputError("evaluate: phenotype features need --model");
        model = read_model(ev_model);
        if (model->dims()[kPatient] != t.dims[kPatient]) throw InputError("evaluate: model and tensor patient counts differ");
      }
      const Matrix* mem = model ? &model->factors[kPatient] : nullptr;
      const Matrix* cov = use_cov ? &data.covariates : nullptr;
      auto rep = repeated_cv([&](const FoldSplit& s) { return make_design(mem, cov, s); }, data.labels, ev_cv);
      auto j = cv_report_json(rep);
      if (!ev_out.empty()) write_text(ev_out, j.dump(1) + "\n");
      std::printf("mean AUC %.4f (%.4f, %.4f)\n", rep.mean_auc, rep.ci.lo, rep.ci.hi);
    } else if (*run) {
      ExperimentConfig cfg;
      auto kv = read_key_values(run_config);
      // Relative input paths resolve against the config file's directory.
      auto base = fs::path(run_config).parent_path();
      for (const char* key : {"encounters", "demographics", "income", "mapping", "exclusions", "allowed_codes",
                              "forced_medications", "indications", "extra_indications"}) {
        auto it = kv.find(key);
        if (it != kv.end() && !it->second.empty() && fs::path(it->second).is_relative())
          it->second = (base / it->second).string();
      }
      apply_experiment_keys(cfg, kv);
      cfg.seed = run_seed;
      if (!run_out.empty()) cfg.output_dir = run_out;
      auto res = run_experiment(cfg);
      std::cout << summary_table(res);
    } else if (*simulate) {
      SyntheticSpec spec;
      if (!sim_spec.empty()) apply_synthetic_keys(spec, read_key_values(sim_spec));
      spec.seed = sim_seed;
      if (sim_n) spec.n_patients = *sim_n;
      auto c = simulate_cohort(spec);
      auto paths = write_synthetic(c, sim_out);
      std::size_t deaths = 0;
      for (int y : c.labels) deaths += static_cast<std::size_t>(y);
      std::cout << "wrote " << spec.n_patients << " patients (" << deaths << " deaths) to " << sim_out << '\n';
    } else if (*report) {
      if (rp_cohorts.empty() && rp_model.empty()) throw InputError("report: give --cohort and/or --model");
      nlohmann::json j;
      if (!rp_cohorts.empty()) {
        IndicationMap ind;
        if (!rp_ind.empty()) ind.read(rp_ind);
        std::vector<CharacteristicsColumn> cols;
        for (const auto& spec : rp_cohorts) {
          auto eq = spec.find('=');
          std::string name = eq == std::string::npos ? fs::path(spec).filename().string() : spec.substr(0, eq);
          std::string dir = eq == std::string::npos ? spec : spec.substr(eq + 1);
          auto cohort = read_cohort(dir);
          CharacteristicsColumn col{name, {}, {}};
          col.all = build_data(cohort, Correspondence::kEqual, nullptr, rp_pct).stats;
          if (!rp_ind.empty()) col.indicated = build_data(cohort, Correspondence::kIndicationFiltered, &ind, rp_pct).stats;
          cols.push_back(col);
        }
        std::vector<std::string> warnings;
        std::cout << report_characteristics_text(cols, &warnings);
        for (const auto& w : warnings) std::cerr << w << '\n';
        j["characteristics"] = report_characteristics_json(cols);
      }
      if (!rp_model.empty()) {
        auto rep = export_phenotypes(sort_by_importance(normalize_columns(read_model(rp_model))), rp_threshold);
        write_phenotype_text(rep, std::cout);
        j["phenotypes"] = phenotype_json(rep);
      }
      if (!rp_json.empty()) write_text(rp_json, j.dump(1) + "\n");
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const DegenerateEvaluationError& e) {
    std::cerr << "degenerate evaluation: " << e.what() << '\n';
    return kDegenerate;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  }
  return kOk;
}
