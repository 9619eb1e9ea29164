#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "relprune/lrp.hpp"
#include "relprune/model.hpp"
#include "relprune/rate.hpp"

namespace relprune {

// Per-class hit counts. A class is "present" when it occurs in the
// evaluated set.
struct ClassAccuracy {
  std::vector<std::size_t> correct;
  std::vector<std::size_t> total;

  explicit ClassAccuracy(std::size_t num_classes = 0)
      : correct(num_classes, 0), total(num_classes, 0) {}

  std::size_t num_classes() const { return total.size(); }
  bool present(std::size_t c) const { return total[c] > 0; }
  double accuracy(std::size_t c) const {
    return static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  }

  std::size_t present_count() const {
    std::size_t n = 0;
    for (auto t : total) n += t > 0 ? 1 : 0;
    return n;
  }

  double overall() const {
    std::size_t c = 0, t = 0;
    for (std::size_t i = 0; i < total.size(); ++i) {
      c += correct[i];
      t += total[i];
    }
    return t == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(t);
  }

  double min_class_accuracy() const {
    double m = 1.0;
    bool any = false;
    for (std::size_t i = 0; i < total.size(); ++i) {
      if (!present(i)) continue;
      any = true;
      const double a = accuracy(i);
      if (a < m) m = a;
    }
    if (!any) throw std::invalid_argument("min_class_accuracy: no class present");
    return m;
  }
};

// Argmax-vs-label tally; argmax ties resolve to the lowest class id.
inline ClassAccuracy per_class_accuracy(const ModelGraph& model,
                                        const std::vector<LabeledImage>& set) {
  if (set.empty()) throw std::invalid_argument("per_class_accuracy: empty set");
  ClassAccuracy acc(model.num_classes);
  for (const LabeledImage& s : set) {
    if (s.label >= model.num_classes)
      throw std::invalid_argument("per_class_accuracy: label " + std::to_string(s.label) +
                                  " outside the model's " + std::to_string(model.num_classes) +
                                  " classes");
    const Tensor out = logits(model, s.image);
    std::size_t pred = 0;
    for (std::size_t c = 1; c < out.size(); ++c)
      if (out.data[c] > out.data[pred]) pred = c;
    acc.total[s.label] += 1;
    if (pred == s.label) acc.correct[s.label] += 1;
  }
  return acc;
}

// Harmonic mean of per-class accuracies; any zero class sends it to 0 (the
// continuous limit of |C| / sum(1/A_c)).
inline double harmonic_mean(const ClassAccuracy& acc) {
  std::size_t n = 0;
  double denom = 0.0;
  bool zero = false;
  for (std::size_t c = 0; c < acc.num_classes(); ++c) {
    if (!acc.present(c)) continue;
    ++n;
    const double a = acc.accuracy(c);
    if (a == 0.0)
      zero = true;
    else
      denom += 1.0 / a;
  }
  if (n == 0) throw std::invalid_argument("harmonic_mean: no class present");
  if (zero) return 0.0;
  return static_cast<double>(n) / denom;
}

// One measurement row along a pruning trajectory.
struct CurveRecord {
  Fraction rate;
  ClassAccuracy per_class;
  double harmonic_mean = 0.0;
  double overall_accuracy = 0.0;
  double wall_time_seconds = 0.0;
  std::string strategy;
  std::uint64_t seed = 0;
};

// Mean over recorded rates of the lowest per-class accuracy. All records
// must cover the same class set.
inline double auc_lowest_class(const std::vector<CurveRecord>& records) {
  if (records.empty()) throw std::invalid_argument("auc_lowest_class: empty trajectory");
  std::vector<bool> ref_present;
  for (std::size_t c = 0; c < records.front().per_class.num_classes(); ++c)
    ref_present.push_back(records.front().per_class.present(c));
  double sum = 0.0;
  for (const CurveRecord& r : records) {
    if (r.per_class.num_classes() != ref_present.size())
      throw std::invalid_argument("auc_lowest_class: records disagree on the class set");
    for (std::size_t c = 0; c < ref_present.size(); ++c)
      if (r.per_class.present(c) != ref_present[c])
        throw std::invalid_argument("auc_lowest_class: records disagree on the class set");
    sum += r.per_class.min_class_accuracy();
  }
  return sum / static_cast<double>(records.size());
}

// Nearest recorded row for each grid rate (ties go to the lower rate);
// used to compare strategies whose accepted rates differ.
inline std::vector<std::size_t> resample_nearest(const std::vector<CurveRecord>& records,
                                                 const std::vector<Fraction>& grid) {
  if (records.empty()) throw std::invalid_argument("resample_nearest: empty trajectory");
  std::vector<std::size_t> idx;
  idx.reserve(grid.size());
  for (const Fraction& g : grid) {
    std::size_t best = 0;
    double best_d = 2.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const double d = std::abs(records[i].rate.to_double() - g.to_double());
      if (d < best_d ||
          (d == best_d && records[i].rate.to_double() < records[best].rate.to_double())) {
        best_d = d;
        best = i;
      }
    }
    idx.push_back(best);
  }
  return idx;
}

// The paper-style grid 0.05, 0.10, ..., up to and including p_max.
inline std::vector<Fraction> rate_grid(const Fraction& step, const Fraction& p_max) {
  std::vector<Fraction> grid;
  Fraction r = step;
  while (r <= p_max) {
    grid.push_back(r);
    r = r + step;
  }
  return grid;
}

}  // namespace relprune
