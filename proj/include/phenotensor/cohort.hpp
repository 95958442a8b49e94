#pragma once

// Encounter-level cohort ingestion: loading, medication name normalization,
// prevalence filtering and outcome assignment.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "text_io.hpp"

namespace phenotensor {

inline constexpr int kDaysPerYear = 365;
inline constexpr const char* kMissingLevel = "MISSING";

struct EncounterRecord {
  std::string patient_id;
  std::string encounter_id;
  Date date;
  std::vector<std::string> diagnoses;
  std::vector<std::string> medications;
};

struct PatientDemographics {
  std::string patient_id;
  std::optional<Date> diagnosis_date;
  std::optional<Date> death_date;
  double age_at_diagnosis = 0.0;
  // Categorical fields hold kMissingLevel when the source cell was empty.
  std::string sex = kMissingLevel;
  std::string race = kMissingLevel;
  std::string marital_status = kMissingLevel;
  std::string insurance = kMissingLevel;
  std::string zip_code;
};

struct CovariateVector {
  double is_male = 0;
  double is_african_american = 0;
  double is_married = 0;
  double is_medicaid_medicare = 0;
  double age_at_diagnosis = 0;
  double median_household_income = 0;

  static constexpr std::size_t size() { return 6; }
  static const std::array<std::string, 6>& names() {
    static const std::array<std::string, 6> n{"is_male",           "is_african_american", "is_married",
                                              "is_medicaid_medicare", "age_at_diagnosis",  "median_household_income"};
    return n;
  }
  std::array<double, 6> values() const {
    return {is_male, is_african_american, is_married, is_medicaid_medicare, age_at_diagnosis, median_household_income};
  }
};

/// Diagnostics accumulated while building a cohort.
struct IngestReport {
  std::vector<std::string> rejected_rows;
  std::size_t income_imputed = 0;
  std::size_t encounters_outside_window = 0;
  std::size_t patients_without_diagnosis_date = 0;
  std::vector<std::string> notes;
};

struct CohortTable {
  std::vector<EncounterRecord> encounters;
  std::map<std::string, PatientDemographics> demographics;
  std::map<std::string, CovariateVector> covariates;
  std::map<std::string, int> labels;  // empty until assign_outcomes
  IngestReport report;

  bool labeled() const { return !labels.empty() || demographics.empty(); }
};

namespace detail {

inline std::string categorical(const std::string& raw) { return raw.empty() ? kMissingLevel : to_upper(raw); }

inline bool contains_any(const std::string& upper, std::initializer_list<const char*> needles) {
  for (auto* n : needles)
    if (upper.find(n) != std::string::npos) return true;
  return false;
}

}  // namespace detail

/// Indicator coding of the categorical demographics. Missing levels fall into 0.
inline CovariateVector make_covariates(const PatientDemographics& d, double income) {
  CovariateVector c;
  c.is_male = (d.sex == "M" || d.sex == "MALE") ? 1.0 : 0.0;
  c.is_african_american =
      (d.race == "AFRICAN AMERICAN" || d.race == "BLACK" || d.race == "BLACK OR AFRICAN AMERICAN") ? 1.0 : 0.0;
  c.is_married = d.marital_status == "MARRIED" ? 1.0 : 0.0;
  c.is_medicaid_medicare = detail::contains_any(d.insurance, {"MEDICAID", "MEDICARE"}) ? 1.0 : 0.0;
  c.age_at_diagnosis = d.age_at_diagnosis;
  c.median_household_income = income;
  return c;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Loads the three raw tables. Rows with unparseable mandatory fields are
/// skipped and listed in `report.rejected_rows`; structural problems throw.
inline CohortTable load_tables(const std::string& encounter_path, const std::string& demographics_path,
                               const std::string& income_path) {
  CohortTable table;
  auto& report = table.report;

  auto demo = CsvTable::read(demographics_path, {"patient_id", "diagnosis_date", "death_date", "age", "sex", "race",
                                                 "marital_status", "insurance", "zip"});
  for (const auto& row : demo.rows()) {
    auto where = demographics_path + ":" + std::to_string(row.line);
    PatientDemographics d;
    d.patient_id = demo.get(row, "patient_id");
    if (d.patient_id.empty()) {
      report.rejected_rows.push_back(where + ": empty patient_id");
      continue;
    }
    if (table.demographics.count(d.patient_id))
      throw InputError(where + ": duplicate patient_id '" + d.patient_id + "'");
    auto age = parse_double(demo.get(row, "age"));
    if (!age || *age < 0) {
      report.rejected_rows.push_back(where + ": invalid age");
      continue;
    }
    d.age_at_diagnosis = *age;
    const auto& dx_raw = demo.get(row, "diagnosis_date");
    if (!dx_raw.empty()) {
      d.diagnosis_date = parse_date(dx_raw);
      if (!d.diagnosis_date) {
        report.rejected_rows.push_back(where + ": invalid diagnosis_date");
        continue;
      }
    }
    const auto& death_raw = demo.get(row, "death_date");
    if (!death_raw.empty()) {
      d.death_date = parse_date(death_raw);
      if (!d.death_date || (d.diagnosis_date && *d.death_date < *d.diagnosis_date)) {
        report.rejected_rows.push_back(where + ": invalid death_date");
        continue;
      }
    }
    d.sex = detail::categorical(demo.get(row, "sex"));
    d.race = detail::categorical(demo.get(row, "race"));
    d.marital_status = detail::categorical(demo.get(row, "marital_status"));
    d.insurance = detail::categorical(demo.get(row, "insurance"));
    d.zip_code = demo.get(row, "zip");
    table.demographics.emplace(d.patient_id, std::move(d));
  }

  std::unordered_map<std::string, double> income_by_zip;
  auto income = CsvTable::read(income_path, {"zip", "median_income"});
  for (const auto& row : income.rows()) {
    auto zip = income.get(row, "zip");
    auto value = parse_double(income.get(row, "median_income"));
    if (zip.empty() || !value) {
      report.rejected_rows.push_back(income_path + ":" + std::to_string(row.line) + ": invalid income row");
      continue;
    }
    income_by_zip[zip] = *value;
  }
  std::vector<double> matched;
  for (const auto& [id, d] : table.demographics) {
    auto it = income_by_zip.find(d.zip_code);
    if (it != income_by_zip.end()) matched.push_back(it->second);
  }
  const double fallback = median_of(matched);
  for (const auto& [id, d] : table.demographics) {
    auto it = income_by_zip.find(d.zip_code);
    double value = fallback;
    if (it != income_by_zip.end())
      value = it->second;
    else
      ++report.income_imputed;
    table.covariates.emplace(id, make_covariates(d, value));
  }
  if (report.income_imputed > 0)
    report.notes.push_back(std::to_string(report.income_imputed) +
                           " patients without zip income; imputed cohort median income");

  auto enc = CsvTable::read(encounter_path, {"patient_id", "encounter_id", "date", "kind", "code"});
  std::map<std::string, EncounterRecord> by_id;
  for (const auto& row : enc.rows()) {
    auto where = encounter_path + ":" + std::to_string(row.line);
    const auto& pid = enc.get(row, "patient_id");
    const auto& eid = enc.get(row, "encounter_id");
    auto date = parse_date(enc.get(row, "date"));
    auto kind = to_upper(enc.get(row, "kind"));
    const auto& code = enc.get(row, "code");
    if (pid.empty() || eid.empty() || !date || code.empty() || (kind != "DX" && kind != "MED")) {
      report.rejected_rows.push_back(where + ": unparseable encounter row");
      continue;
    }
    if (!table.demographics.count(pid)) throw InputError(where + ": unknown patient_id '" + pid + "'");
    auto [it, inserted] = by_id.try_emplace(eid);
    auto& rec = it->second;
    if (inserted) {
      rec.patient_id = pid;
      rec.encounter_id = eid;
      rec.date = *date;
    } else if (rec.patient_id != pid || rec.date != *date) {
      throw InputError(where + ": encounter_id '" + eid + "' reused with a different patient or date");
    }
    (kind == "DX" ? rec.diagnoses : rec.medications).push_back(code);
  }
  for (auto& [id, rec] : by_id) table.encounters.push_back(std::move(rec));
  std::sort(table.encounters.begin(), table.encounters.end(), [](const auto& a, const auto& b) {
    return std::tie(a.patient_id, a.date, a.encounter_id) < std::tie(b.patient_id, b.date, b.encounter_id);
  });
  return table;
}

/// Ordered list of literal-plus-wildcard rules mapping raw medication strings
/// to one or more generic names. First match wins.
class MedicationMapping {
 public:
  struct Rule {
    std::string pattern;
    std::vector<std::string> generics;
  };

  static MedicationMapping parse(std::istream& in, const std::string& source = "<mapping>") {
    MedicationMapping m;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty() || trim(line)[0] == '#') continue;
      auto tab = line.find('\t');
      auto where = source + ":" + std::to_string(n);
      if (tab == std::string::npos) throw InputError(where + ": malformed rule, expected pattern<TAB>generic");
      Rule rule{trim(line.substr(0, tab)), {}};
      for (auto& g : split(line.substr(tab + 1), ',')) {
        auto name = trim(g);
        if (name.empty()) throw InputError(where + ": malformed rule, empty generic name");
        rule.generics.push_back(std::move(name));
      }
      if (rule.pattern.empty()) throw InputError(where + ": malformed rule, empty pattern");
      m.rules_.push_back(std::move(rule));
    }
    return m;
  }

  static MedicationMapping read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file: " + path);
    return parse(in, path);
  }

  /// Generic names for `name`; the name itself when no rule matches.
  std::vector<std::string> map(const std::string& name) const {
    for (const auto& r : rules_)
      if (glob_match(r.pattern, name)) return r.generics;
    return {name};
  }

  const std::vector<Rule>& rules() const { return rules_; }

 private:
  std::vector<Rule> rules_;
};

inline void sort_unique(std::vector<std::string>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

inline CohortTable normalize_medication_names(CohortTable table, const MedicationMapping& mapping) {
  for (auto& e : table.encounters) {
    std::vector<std::string> out;
    for (const auto& m : e.medications)
      for (auto& g : mapping.map(m)) out.push_back(std::move(g));
    sort_unique(out);
    e.medications = std::move(out);
  }
  return table;
}

inline CohortTable normalize_medication_names(CohortTable table, const std::string& mapping_path) {
  return normalize_medication_names(std::move(table), MedicationMapping::read(mapping_path));
}

struct PrevalenceFilter {
  double dx_min_frac = 0.01;
  double med_min_frac = 0.005;
  std::set<std::string> forced_medications;
  /// Glob patterns ('*' wildcard) removed regardless of prevalence, applied to
  /// both diagnosis codes and medication names.
  std::vector<std::string> excluded_codes;
  /// Exact codes exempt from `excluded_codes` (e.g. informative V codes).
  std::set<std::string> allowed_codes;
};

/// Fraction of cohort patients with at least one occurrence, per code.
inline std::map<std::string, double> prevalence(const CohortTable& table, bool medications) {
  std::map<std::string, std::set<std::string>> patients;
  for (const auto& e : table.encounters)
    for (const auto& c : medications ? e.medications : e.diagnoses) patients[c].insert(e.patient_id);
  std::map<std::string, double> out;
  const double n = static_cast<double>(table.demographics.size());
  for (const auto& [code, ps] : patients) out[code] = n > 0 ? static_cast<double>(ps.size()) / n : 0.0;
  return out;
}

inline CohortTable filter_by_prevalence(CohortTable table, const PrevalenceFilter& f) {
  if (!(f.dx_min_frac > 0 && f.dx_min_frac <= 1 && f.med_min_frac > 0 && f.med_min_frac <= 1))
    throw InputError("prevalence fractions must lie in (0, 1]");
  auto excluded = [&](const std::string& code) {
    if (f.allowed_codes.count(code)) return false;
    return std::any_of(f.excluded_codes.begin(), f.excluded_codes.end(),
                       [&](const std::string& p) { return glob_match(p, code); });
  };
  const auto dx_prev = prevalence(table, false);
  const auto med_prev = prevalence(table, true);
  // Prevalence is compared as a count against threshold * n so the inclusive
  // boundary is not lost to rounding (1 of 100 patients at 0.01).
  const double n = static_cast<double>(table.demographics.size());
  auto passes = [n](double frac, double threshold) { return frac * n + 1e-9 >= threshold * n; };
  std::set<std::string> keep_dx, keep_med;
  for (const auto& [code, p] : dx_prev)
    if (!excluded(code) && passes(p, f.dx_min_frac)) keep_dx.insert(code);
  for (const auto& [code, p] : med_prev)
    if (!excluded(code) && (passes(p, f.med_min_frac) || f.forced_medications.count(code))) keep_med.insert(code);

  std::size_t removed = 0;
  for (auto& e : table.encounters) {
    auto before = e.diagnoses.size() + e.medications.size();
    std::erase_if(e.diagnoses, [&](const auto& c) { return !keep_dx.count(c); });
    std::erase_if(e.medications, [&](const auto& c) { return !keep_med.count(c); });
    removed += before - e.diagnoses.size() - e.medications.size();
  }
  if (removed > 0) table.report.notes.push_back("prevalence filter removed " + std::to_string(removed) + " entries");
  if (keep_dx.empty() || keep_med.empty())
    table.report.notes.push_back("warning: prevalence filter left no diagnoses or no medications");
  return table;
}

/// Labels every patient (1 = death within `horizon_years`) and keeps only
/// encounters inside [diagnosis_date, diagnosis_date + window_years].
/// Patients with no diagnosis date and no encounters are dropped.
inline CohortTable assign_outcomes(CohortTable table, int horizon_years = 5, int window_years = 1) {
  const int horizon = horizon_years * kDaysPerYear;
  const int window = window_years * kDaysPerYear;
  std::set<std::string> with_encounters;
  for (const auto& e : table.encounters) with_encounters.insert(e.patient_id);

  for (auto it = table.demographics.begin(); it != table.demographics.end();) {
    const auto& d = it->second;
    if (!d.diagnosis_date) {
      if (with_encounters.count(d.patient_id))
        throw InputError("patient '" + d.patient_id + "' has encounters but no diagnosis_date");
      ++table.report.patients_without_diagnosis_date;
      table.covariates.erase(d.patient_id);
      it = table.demographics.erase(it);
      continue;
    }
    table.labels[d.patient_id] = (d.death_date && d.death_date->days - d.diagnosis_date->days <= horizon) ? 1 : 0;
    ++it;
  }

  auto before = table.encounters.size();
  std::erase_if(table.encounters, [&](const EncounterRecord& e) {
    auto start = *table.demographics.at(e.patient_id).diagnosis_date;
    return e.date < start || e.date > add_days(start, window);
  });
  table.report.encounters_outside_window += before - table.encounters.size();
  return table;
}

// ---------------------------------------------------------------------------
// Cohort directory: the normalized, labeled form written by `ingest`.

inline void write_cohort(const CohortTable& table, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream enc(dir / "encounters.csv");
  enc << "patient_id,encounter_id,date,kind,code\n";
  for (const auto& e : table.encounters) {
    for (const auto& d : e.diagnoses)
      enc << e.patient_id << ',' << e.encounter_id << ',' << format_date(e.date) << ",DX," << d << '\n';
    for (const auto& m : e.medications)
      enc << e.patient_id << ',' << e.encounter_id << ',' << format_date(e.date) << ",MED," << m << '\n';
  }
  std::ofstream pat(dir / "patients.csv");
  pat << "patient_id,diagnosis_date,death_date,age,sex,race,marital_status,insurance,zip,label";
  for (const auto& n : CovariateVector::names()) pat << ',' << n;
  pat << '\n';
  pat.precision(17);
  for (const auto& [id, d] : table.demographics) {
    auto missing = [](const std::string& s) { return s == kMissingLevel ? std::string{} : s; };
    pat << id << ',' << (d.diagnosis_date ? format_date(*d.diagnosis_date) : "") << ','
        << (d.death_date ? format_date(*d.death_date) : "") << ',' << d.age_at_diagnosis << ',' << missing(d.sex)
        << ',' << missing(d.race) << ',' << missing(d.marital_status) << ',' << missing(d.insurance) << ','
        << d.zip_code << ',';
    auto lab = table.labels.find(id);
    if (lab != table.labels.end()) pat << lab->second;
    for (double v : table.covariates.at(id).values()) pat << ',' << v;
    pat << '\n';
  }
}

inline CohortTable read_cohort(const std::filesystem::path& dir) {
  CohortTable table;
  auto pats_path = (dir / "patients.csv").string();
  std::vector<std::string> required{"patient_id", "diagnosis_date", "death_date", "age", "sex", "race",
                                    "marital_status", "insurance", "zip", "label"};
  for (const auto& n : CovariateVector::names()) required.push_back(n);
  auto pats = CsvTable::read(pats_path, required);
  for (const auto& row : pats.rows()) {
    auto where = pats_path + ":" + std::to_string(row.line);
    PatientDemographics d;
    d.patient_id = pats.get(row, "patient_id");
    if (d.patient_id.empty() || table.demographics.count(d.patient_id))
      throw InputError(where + ": missing or duplicate patient_id");
    d.diagnosis_date = parse_date(pats.get(row, "diagnosis_date"));
    if (!pats.get(row, "death_date").empty()) d.death_date = parse_date(pats.get(row, "death_date"));
    d.age_at_diagnosis = parse_double(pats.get(row, "age")).value_or(0.0);
    d.sex = detail::categorical(pats.get(row, "sex"));
    d.race = detail::categorical(pats.get(row, "race"));
    d.marital_status = detail::categorical(pats.get(row, "marital_status"));
    d.insurance = detail::categorical(pats.get(row, "insurance"));
    d.zip_code = pats.get(row, "zip");
    std::array<double, 6> cov{};
    for (std::size_t c = 0; c < 6; ++c) {
      auto v = parse_double(pats.get(row, CovariateVector::names()[c]));
      if (!v) throw InputError(where + ": invalid covariate " + CovariateVector::names()[c]);
      cov[c] = *v;
    }
    table.covariates[d.patient_id] = CovariateVector{cov[0], cov[1], cov[2], cov[3], cov[4], cov[5]};
    const auto& lab = pats.get(row, "label");
    if (!lab.empty()) {
      if (lab != "0" && lab != "1") throw InputError(where + ": label must be 0 or 1");
      table.labels[d.patient_id] = lab == "1" ? 1 : 0;
    }
    table.demographics.emplace(d.patient_id, std::move(d));
  }
  // Encounters reuse the raw loader's grouping logic on an in-memory cohort.
  auto enc_path = (dir / "encounters.csv").string();
  auto enc = CsvTable::read(enc_path, {"patient_id", "encounter_id", "date", "kind", "code"});
  std::map<std::string, EncounterRecord> by_id;
  for (const auto& row : enc.rows()) {
    auto where = enc_path + ":" + std::to_string(row.line);
    const auto& pid = enc.get(row, "patient_id");
    auto date = parse_date(enc.get(row, "date"));
    auto kind = to_upper(enc.get(row, "kind"));
    if (!table.demographics.count(pid)) throw InputError(where + ": unknown patient_id '" + pid + "'");
    if (!date || (kind != "DX" && kind != "MED")) throw InputError(where + ": unparseable encounter row");
    auto& rec = by_id[enc.get(row, "encounter_id")];
    rec.patient_id = pid;
    rec.encounter_id = enc.get(row, "encounter_id");
    rec.date = *date;
    (kind == "DX" ? rec.diagnoses : rec.medications).push_back(enc.get(row, "code"));
  }
  for (auto& [id, rec] : by_id) table.encounters.push_back(std::move(rec));
  std::sort(table.encounters.begin(), table.encounters.end(), [](const auto& a, const auto& b) {
    return std::tie(a.patient_id, a.date, a.encounter_id) < std::tie(b.patient_id, b.date, b.encounter_id);
  });
  return table;
}

}  // namespace phenotensor
