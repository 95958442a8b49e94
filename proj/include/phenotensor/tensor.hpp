#pragma once

// Patient x diagnosis x medication co-occurrence tensors in coordinate format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cohort.hpp"
#include "common.hpp"

namespace phenotensor {

enum Mode : std::size_t { kPatient = 0, kDiagnosis = 1, kMedication = 2 };

struct Coord {
  std::uint32_t i = 0, j = 0, k = 0;
  friend auto operator<=>(const Coord&, const Coord&) = default;
  std::uint32_t operator[](std::size_t mode) const { return mode == 0 ? i : (mode == 1 ? j : k); }
};

/// 3-way count tensor. Entries are kept sorted by coordinate, counts > 0.
struct SparseTensor3 {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<std::vector<std::string>, 3> labels;
  std::vector<Coord> coords;
  std::vector<std::int64_t> counts;

  std::size_t nnz() const { return coords.size(); }
  bool empty() const { return coords.empty(); }

  double squared_norm() const {
    double s = 0;
    for (auto c : counts) s += static_cast<double>(c) * static_cast<double>(c);
    return s;
  }

  /// Throws if an invariant is broken (counts, bounds, ordering, label sizes).
  void validate() const {
    if (coords.size() != counts.size()) throw InputError("tensor: coordinate/count size mismatch");
    for (std::size_t m = 0; m < 3; ++m)
      if (labels[m].size() != dims[m]) throw InputError("tensor: label table size does not match dimension");
    for (std::size_t e = 0; e < nnz(); ++e) {
      if (counts[e] <= 0) throw InputError("tensor: non-positive count");
      for (std::size_t m = 0; m < 3; ++m)
        if (coords[e][m] >= dims[m]) throw InputError("tensor: coordinate out of range");
      if (e > 0 && !(coords[e - 1] < coords[e])) throw InputError("tensor: coordinates unsorted or duplicated");
    }
  }

  friend bool operator==(const SparseTensor3&, const SparseTensor3&) = default;
};

/// Permitted (diagnosis code, generic medication) pairs.
class IndicationMap {
 public:
  void add(std::string dx, std::string med) { pairs_.emplace(std::move(dx), std::move(med)); }
  bool contains(const std::string& dx, const std::string& med) const { return pairs_.count({dx, med}) > 0; }
  std::size_t size() const { return pairs_.size(); }
  const std::set<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

  /// Reads `diagnosis_code,medication` rows, merging into this map.
  void read(const std::string& path) {
    auto t = CsvTable::read(path, {"diagnosis_code", "medication"});
    for (const auto& row : t.rows()) {
      const auto& dx = t.get(row, "diagnosis_code");
      const auto& med = t.get(row, "medication");
      if (dx.empty() || med.empty())
        throw InputError(path + ":" + std::to_string(row.line) + ": empty diagnosis_code or medication");
      add(dx, med);
    }
  }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

enum class Correspondence { kEqual, kIndicationFiltered };

inline std::string to_string(Correspondence c) {
  return c == Correspondence::kEqual ? "equal" : "indication";
}

inline Correspondence parse_correspondence(const std::string& s) {
  if (s == "equal" || s == "all") return Correspondence::kEqual;
  if (s == "indication" || s == "indicated" || s == "ind") return Correspondence::kIndicationFiltered;
  throw InputError("unknown correspondence mode '" + s + "' (expected equal|indication)");
}

/// Builds the co-occurrence tensor. Entry (p,d,m) counts the encounters of p
/// holding both d and m. Patients cover the whole cohort (sorted ids);
/// diagnosis and medication tables hold the codes with at least one counted
/// co-occurrence, sorted lexicographically.
inline SparseTensor3 count_cooccurrences(const CohortTable& table, Correspondence mode,
                                         const IndicationMap* indications = nullptr) {
  if (mode == Correspondence::kIndicationFiltered && indications == nullptr)
    throw InputError("indication-filtered counting requires an indication map");

  std::map<std::string, std::uint32_t> patient_index;
  for (const auto& [id, d] : table.demographics) patient_index.emplace(id, 0);

  std::map<std::tuple<std::string, std::string, std::string>, std::int64_t> raw;
  for (const auto& e : table.encounters) {
    auto dx = e.diagnoses;
    auto meds = e.medications;
    sort_unique(dx);
    sort_unique(meds);
    for (const auto& d : dx)
      for (const auto& m : meds) {
        if (mode == Correspondence::kIndicationFiltered && !indications->contains(d, m)) continue;
        ++raw[{e.patient_id, d, m}];
      }
  }
  std::map<std::string, std::uint32_t> dx_index, med_index;
  for (const auto& [key, n] : raw) {
    dx_index.emplace(std::get<1>(key), 0);
    med_index.emplace(std::get<2>(key), 0);
  }
  SparseTensor3 t;
  auto assign = [](std::map<std::string, std::uint32_t>& idx, std::vector<std::string>& labels) {
    std::uint32_t next = 0;
    for (auto& [name, i] : idx) {
      i = next++;
      labels.push_back(name);
    }
  };
  assign(patient_index, t.labels[kPatient]);
  assign(dx_index, t.labels[kDiagnosis]);
  assign(med_index, t.labels[kMedication]);
  for (std::size_t m = 0; m < 3; ++m) t.dims[m] = t.labels[m].size();
  // The raw map is ordered by (patient id, dx, med) and every index table is
  // lexicographic, so entries come out in coordinate order.
  for (const auto& [key, n] : raw) {
    t.coords.push_back({patient_index.at(std::get<0>(key)), dx_index.at(std::get<1>(key)),
                        med_index.at(std::get<2>(key))});
    t.counts.push_back(n);
  }
  return t;
}

/// Nearest-rank percentile of a nonempty multiset: the value at 1-based
/// position ceil(q * n) of the ascending sort.
inline std::int64_t nearest_rank(std::vector<std::int64_t> values, double q) {
  if (values.empty()) throw InputError("nearest_rank: empty input");
  std::sort(values.begin(), values.end());
  auto n = values.size();
  // Small slack keeps q*n that is mathematically integral from rounding up.
  auto pos = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  pos = std::clamp<std::size_t>(pos, 1, n);
  return values[pos - 1];
}

/// Caps every count at the nearest-rank percentile of the nonzero counts.
inline SparseTensor3 truncate_counts(SparseTensor3 t, double percentile = 0.99) {
  if (t.empty()) throw InputError("truncate_counts: empty tensor");
  if (!(percentile > 0 && percentile <= 1)) throw InputError("truncate_counts: percentile must lie in (0, 1]");
  const auto cap = nearest_rank(t.counts, percentile);
  for (auto& c : t.counts) c = std::min(c, cap);
  return t;
}

struct PrunedCohort {
  SparseTensor3 tensor;
  CohortTable table;
  std::size_t removed = 0;
};

/// Removes patients without any nonzero entry from both tensor and cohort.
inline PrunedCohort drop_empty_patients(SparseTensor3 t, CohortTable table) {
  std::vector<bool> present(t.dims[kPatient], false);
  for (const auto& c : t.coords) present[c.i] = true;
  std::vector<std::uint32_t> remap(t.dims[kPatient], 0);
  std::vector<std::string> kept;
  std::set<std::string> dropped;
  for (std::size_t p = 0; p < t.dims[kPatient]; ++p) {
    if (present[p]) {
      remap[p] = static_cast<std::uint32_t>(kept.size());
      kept.push_back(t.labels[kPatient][p]);
    } else {
      dropped.insert(t.labels[kPatient][p]);
    }
  }
  for (auto& c : t.coords) c.i = remap[c.i];
  t.labels[kPatient] = std::move(kept);
  t.dims[kPatient] = t.labels[kPatient].size();

  for (const auto& id : dropped) {
    table.demographics.erase(id);
    table.covariates.erase(id);
    table.labels.erase(id);
  }
  std::erase_if(table.encounters, [&](const EncounterRecord& e) { return dropped.count(e.patient_id) > 0; });
  if (!dropped.empty())
    table.report.notes.push_back("dropped " + std::to_string(dropped.size()) + " patients with no co-occurrences");
  if (t.dims[kPatient] == 0) table.report.notes.push_back("warning: every patient was empty; tensor is empty");
  return {std::move(t), std::move(table), dropped.size()};
}

struct TensorStats {
  std::size_t n_patients = 0;
  std::size_t n_diagnoses = 0;
  std::size_t n_medications = 0;
  std::size_t n_dx_med_pairs = 0;
  double median_cooccurrences_per_patient = 0;
  std::int64_t total_cooccurrences = 0;
  std::size_t deaths_at_horizon = 0;
  double mean_age = 0;
  friend bool operator==(const TensorStats&, const TensorStats&) = default;
};

/// Cohort characteristics. Patients with no entries contribute a zero
/// per-patient sum to the median.
inline TensorStats tensor_stats(const SparseTensor3& t, const CohortTable& table) {
  TensorStats s;
  s.n_patients = t.dims[kPatient];
  s.n_diagnoses = t.dims[kDiagnosis];
  s.n_medications = t.dims[kMedication];
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<double> per_patient(t.dims[kPatient], 0.0);
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    pairs.insert({t.coords[e].j, t.coords[e].k});
    s.total_cooccurrences += t.counts[e];
    per_patient[t.coords[e].i] += static_cast<double>(t.counts[e]);
  }
  s.n_dx_med_pairs = pairs.size();
  s.median_cooccurrences_per_patient = median_of(per_patient);
  double age_sum = 0;
  std::size_t with_demo = 0;
  for (const auto& id : t.labels[kPatient]) {
    if (auto it = table.labels.find(id); it != table.labels.end()) s.deaths_at_horizon += it->second;
    if (auto it = table.demographics.find(id); it != table.demographics.end()) {
      age_sum += it->second.age_at_diagnosis;
      ++with_demo;
    }
  }
  s.mean_age = with_demo ? age_sum / static_cast<double>(with_demo) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Text format:
//   phenotensor-sptensor 1
//   dims <P> <D> <M>
//   <P lines of patient labels> <D lines of diagnosis labels> <M lines of medication labels>
//   nnz <N>
//   <N lines "i j k count">

inline void write_tensor(const SparseTensor3& t, std::ostream& out) {
  out << "phenotensor-sptensor 1\n";
  out << "dims " << t.dims[0] << ' ' << t.dims[1] << ' ' << t.dims[2] << '\n';
  for (const auto& table : t.labels)
    for (const auto& l : table) out << l << '\n';
  out << "nnz " << t.nnz() << '\n';
  for (std::size_t e = 0; e < t.nnz(); ++e)
    out << t.coords[e].i << ' ' << t.coords[e].j << ' ' << t.coords[e].k << ' ' << t.counts[e] << '\n';
}

inline void write_tensor(const SparseTensor3& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  write_tensor(t, out);
}

inline SparseTensor3 read_tensor(std::istream& in) {
  SparseTensor3 t;
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "phenotensor-sptensor" || version != 1)
    throw InputError("tensor file: bad magic line");
  if (!(in >> word >> t.dims[0] >> t.dims[1] >> t.dims[2]) || word != "dims")
    throw InputError("tensor file: bad dims line");
  std::string line;
  std::getline(in, line);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t i = 0; i < t.dims[m]; ++i) {
      if (!std::getline(in, line)) throw InputError("tensor file: truncated label table");
      t.labels[m].push_back(line);
    }
  std::size_t nnz = 0;
  if (!(in >> word >> nnz) || word != "nnz") throw InputError("tensor file: bad nnz line");
  t.coords.resize(nnz);
  t.counts.resize(nnz);
  for (std::size_t e = 0; e < nnz; ++e)
    if (!(in >> t.coords[e].i >> t.coords[e].j >> t.coords[e].k >> t.counts[e]))
      throw InputError("tensor file: truncated entry list");
  t.validate();
  return t;
}

inline SparseTensor3 read_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  return read_tensor(in);
}

}  // namespace phenotensor
