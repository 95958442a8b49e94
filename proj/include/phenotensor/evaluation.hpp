#pragma once

// AUC, stratified repeated cross-validation and bootstrap intervals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "glm.hpp"

namespace phenotensor {

/// Mann-Whitney AUC by midranks: (concordant + 0.5 tied) / (n_pos * n_neg).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InputError("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1..j share the midrank (i + 1 + j) / 2.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DegenerateEvaluationError("auc: labels contain a single class");
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double auc(const Vector& scores, const std::vector<int>& labels) {
  return auc(std::vector<double>(scores.data(), scores.data() + scores.size()), labels);
}

/// Nearest-rank quantile of a nonempty sample.
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  auto n = values.size();
  auto pos = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  return values[std::clamp<std::size_t>(pos, 1, n) - 1];
}

struct Interval {
  double lo = 0;
  double hi = 0;
};

/// Percentile interval of the bootstrap distribution of the mean. Replicate b
/// draws from its own generator seeded with substream_seed(seed, b), indices
/// by uniform_index.
inline Interval bootstrap_ci(const std::vector<double>& values, std::size_t n_boot = 1000, double level = 0.95,
                             std::uint64_t seed = 0) {
  if (values.empty()) throw InputError("bootstrap_ci: empty input");
  if (n_boot == 0 || !(level > 0 && level < 1)) throw InputError("bootstrap_ci: invalid n_boot or level");
  std::vector<double> means(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng rng(substream_seed(seed, b));
    // Offsets from values[0] keep the mean of identical values exact.
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[uniform_index(rng, values.size())] - values[0];
    means[b] = values[0] + s / static_cast<double>(values.size());
  }
  const double alpha = 0.5 * (1.0 - level);
  return {nearest_rank_quantile(means, alpha), nearest_rank_quantile(means, 1.0 - alpha)};
}

/// Stratified fold ids in [0, k): positives then negatives, each shuffled,
/// dealt round-robin so fold sizes and per-fold positives differ by <= 1.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int k, Rng& rng) {
  if (k < 2) throw InputError("cross-validation needs k >= 2");
  if (labels.size() < static_cast<std::size_t>(k)) throw InputError("cross-validation needs n >= k");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  shuffle_in_place(pos, rng);
  shuffle_in_place(neg, rng);
  std::vector<int> fold(labels.size());
  std::size_t slot = 0;
  for (auto i : pos) fold[i] = static_cast<int>(slot++ % static_cast<std::size_t>(k));
  for (auto i : neg) fold[i] = static_cast<int>(slot++ % static_cast<std::size_t>(k));
  return fold;
}

struct CvConfig {
  int folds = 10;
  int repeats = 5;
  std::uint64_t seed = 0;
  std::size_t n_boot = 1000;
  double level = 0.95;
  StepwiseOptions stepwise;
};

struct FoldSplit {
  int repeat = 0;
  int fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Design matrices for one split; columns are the candidate terms.
struct FoldDesign {
  Matrix train;
  Matrix test;
  std::vector<std::string> column_names;
};

using FeaturesBuilder = std::function<FoldDesign(const FoldSplit&)>;

struct CvReport {
  std::vector<double> fold_aucs;  // repeat-major, k * reps values
  double mean_auc = 0;
  Interval ci;
  std::vector<std::vector<int>> fold_assignments;  // [repeat][patient]
  std::vector<std::vector<std::string>> selected_terms;  // per fold, same order as fold_aucs
};

inline std::vector<int> subset(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline Vector to_vector(const std::vector<int>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

/// Splits for `repeats` stratified k-fold partitions; repeat r uses substream r.
inline std::vector<FoldSplit> make_splits(const std::vector<int>& labels, int k, int repeats, std::uint64_t seed,
                                          std::vector<std::vector<int>>* assignments = nullptr) {
  std::vector<FoldSplit> splits;
  for (int r = 0; r < repeats; ++r) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(r)));
    auto fold = stratified_folds(labels, k, rng);
    for (int f = 0; f < k; ++f) {
      FoldSplit s{r, f, {}, {}};
      for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? s.test : s.train).push_back(i);
      splits.push_back(std::move(s));
    }
    if (assignments) assignments->push_back(std::move(fold));
  }
  return splits;
}

/// AUC of a stepwise-selected logistic model trained on one split.
inline double evaluate_split(const FoldDesign& design, const std::vector<int>& train_y, const std::vector<int>& test_y,
                             const StepwiseOptions& opt, std::vector<std::string>* selected = nullptr) {
  auto sw = stepwise_select(design.train, to_vector(train_y), opt);
  if (selected)
    for (auto c : sw.selected) selected->push_back(design.column_names.at(c));
  return auc(sw.linear_predictor(design.test), test_y);
}

/// Repeated stratified k-fold cross-validation of stepwise logistic models
/// over features produced per split by `builder`.
inline CvReport repeated_cv(const FeaturesBuilder& builder, const std::vector<int>& labels, const CvConfig& cfg) {
  CvReport rep;
  auto splits = make_splits(labels, cfg.folds, cfg.repeats, cfg.seed, &rep.fold_assignments);
  for (const auto& s : splits) {
    auto test_y = subset(labels, s.test);
    auto train_y = subset(labels, s.train);
    auto has_both = [](const std::vector<int>& y) {
      return std::find(y.begin(), y.end(), 0) != y.end() && std::find(y.begin(), y.end(), 1) != y.end();
    };
    if (!has_both(test_y) || !has_both(train_y))
      throw DegenerateEvaluationError("repeat " + std::to_string(s.repeat) + " fold " + std::to_string(s.fold) +
                                      " holds a single outcome class");
    auto design = builder(s);
    std::vector<std::string> selected;
    rep.fold_aucs.push_back(evaluate_split(design, train_y, test_y, cfg.stepwise, &selected));
    rep.selected_terms.push_back(std::move(selected));
  }
  rep.mean_auc = std::accumulate(rep.fold_aucs.begin(), rep.fold_aucs.end(), 0.0) /
                 static_cast<double>(rep.fold_aucs.size());
  rep.ci = bootstrap_ci(rep.fold_aucs, cfg.n_boot, cfg.level, substream_seed(cfg.seed, 0xB007));
  return rep;
}

inline nlohmann::json cv_report_json(const CvReport& r) {
  nlohmann::json j;
  j["fold_aucs"] = r.fold_aucs;
  j["mean_auc"] = r.mean_auc;
  j["ci"] = {r.ci.lo, r.ci.hi};
  j["selected_terms"] = r.selected_terms;
  j["fold_assignments"] = r.fold_assignments;
  return j;
}

}  // namespace phenotensor
