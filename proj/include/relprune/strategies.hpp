#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relprune/lrp.hpp"
#include "relprune/metrics.hpp"
#include "relprune/model.hpp"
#include "relprune/pruning.hpp"
#include "relprune/rate.hpp"

namespace relprune {

struct SdDpxConfig {
  Fraction step{1, 20};    // N: initial pruning-rate increment
  Fraction p_max{19, 20};  // stop once the cumulative rate reaches this
  std::size_t t_max = 10;  // skip budget of the order-change phase
  bool enable_rate_change = true;
  bool enable_order_change = true;
  LrpConfig lrp;

  void validate(std::size_t f_num) const {
    if (!(Fraction::zero() < step && step <= p_max && p_max <= Fraction::one()))
      throw std::invalid_argument("SdDpxConfig: need 0 < N <= P_max <= 1");
    if (enable_order_change && (t_max == 0 || t_max >= f_num))
      throw std::invalid_argument("SdDpxConfig: need 0 < T_max < F_num");
    lrp.validate();
  }
};

// Mutable loop state of the SD-DPX search.
struct PruneState {
  Fraction cumulative_rate;  // P
  Fraction step;             // N'
  double score = 0.0;        // A, harmonic mean on the reference set
  std::size_t skips = 0;     // T
};

struct TrajectoryPoint {
  Fraction rate;
  ModelGraph model;
  CurveRecord record;
};

enum class CandidatePhase : std::uint8_t { Step, RateHalved, OrderSkip };

// Every gate evaluation, accepted or not; kept for ablation analysis.
struct CandidateLog {
  Fraction rate;
  double score = 0.0;
  CandidatePhase phase = CandidatePhase::Step;
  std::size_t skip_t = 0;
  bool accepted = false;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  std::vector<CandidateLog> candidates;

  std::vector<CurveRecord> records() const {
    std::vector<CurveRecord> out;
    out.reserve(points.size());
    for (const TrajectoryPoint& p : points) out.push_back(p.record);
    return out;
  }

  const ModelGraph& final_model(const ModelGraph& initial) const {
    return points.empty() ? initial : points.back().model;
  }
};

struct CandidateEntry {
  double score = 0.0;
  std::size_t skip_t = 0;
  ModelGraph model;
};

struct BestChoice {
  ModelGraph model;
  double score = 0.0;
  std::size_t skip_t = 0;
};

// Highest-scoring registered candidate; ties go to the earliest (lowest T).
inline BestChoice best_model_choice(const std::vector<CandidateEntry>& d) {
  if (d.empty()) throw std::invalid_argument("best_model_choice: empty candidate registry");
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i].score > d[best].score) best = i;
  return {d[best].model, d[best].score, d[best].skip_t};
}

using RelevanceFn = std::function<RelevanceMap(const ModelGraph&)>;
using GateFn = std::function<double(const ModelGraph&)>;
using RecordFn = std::function<CurveRecord(const ModelGraph&, const Fraction& rate)>;

namespace detail {

inline void validate_schedule(const Fraction& step, const Fraction& p_max) {
  if (!(Fraction::zero() < step && step <= p_max && p_max <= Fraction::one()))
    throw std::invalid_argument("pruning schedule: need 0 < N <= P_max <= 1");
}

}  // namespace detail

// PX: relevance is computed once on the unpruned model and the ranking is
// never revisited; filters fall in ascending-relevance order at each rate.
inline Trajectory run_px_core(const ModelGraph& model, const Fraction& step, const Fraction& p_max,
                              const RelevanceFn& relevance, const RecordFn& record) {
  detail::validate_schedule(step, p_max);
  Trajectory traj;
  const RelevanceMap scores = relevance(model);
  ModelGraph current = model;
  Fraction p = Fraction::zero();
  while (p < p_max) {
    p = p + step;
    current = filter_pruner(current, scores, p).model;
    traj.candidates.push_back({p, 0.0, CandidatePhase::Step, 0, true});
    traj.points.push_back({p, current, record(current, p)});
  }
  return traj;
}

// DPX: same schedule, but relevance is recomputed on the pruned model
// before every step.
inline Trajectory run_dpx_core(const ModelGraph& model, const Fraction& step,
                               const Fraction& p_max, const RelevanceFn& relevance,
                               const RecordFn& record) {
  detail::validate_schedule(step, p_max);
  Trajectory traj;
  ModelGraph current = model;
  Fraction p = Fraction::zero();
  while (p < p_max) {
    const RelevanceMap scores = relevance(current);
    p = p + step;
    current = filter_pruner(current, scores, p).model;
    traj.candidates.push_back({p, 0.0, CandidatePhase::Step, 0, true});
    traj.points.push_back({p, current, record(current, p)});
  }
  return traj;
}

// SD-DPX. Each step tentatively prunes to P' = P + N' and keeps the result
// only if the gate score does not drop. On a drop, the step is retried with
// N' halved while the increment still maps to more than one filter; after
// that, the order-change phase re-prunes with the T lowest-relevance
// filters boosted out of contention, T = 1..T_max, accepting the first
// candidate that holds the score. If the whole skip budget fails, the
// best-scoring registered candidate is adopted even though its score
// dropped. With both features disabled a failing step is simply accepted,
// which is exactly DPX.
//
// Deliberate deviation from a literal pseudocode reading: the skip loop
// starts at T = 1. Boosting zero filters would re-evaluate the identical
// failed pruning, so that candidate is registered directly instead of
// being recomputed.
inline Trajectory run_sd_dpx_core(const ModelGraph& model, const SdDpxConfig& cfg,
                                  const RelevanceFn& relevance, const GateFn& gate,
                                  const RecordFn& record) {
  cfg.validate(model.f_num());
  const auto f_num = static_cast<std::int64_t>(model.f_num());

  Trajectory traj;
  ModelGraph current = model;
  PruneState st;
  st.cumulative_rate = Fraction::zero();
  st.step = cfg.step;
  st.score = gate(current);

  while (st.cumulative_rate < cfg.p_max) {
    const RelevanceMap scores = relevance(current);
    Fraction p_prime = st.cumulative_rate + st.step;
    PruneResult pruned = filter_pruner(current, scores, p_prime);
    double a_prime = gate(pruned.model);
    traj.candidates.push_back({p_prime, a_prime, CandidatePhase::Step, 0, a_prime >= st.score});

    if (a_prime < st.score) {
      // Change of pruning rate: halve the increment and retry while more
      // than one filter is at stake.
      while (cfg.enable_rate_change && a_prime < st.score &&
             count_to_prune(st.step, static_cast<std::size_t>(f_num)) > 1) {
        st.step = st.step.halved();
        p_prime = st.cumulative_rate + st.step;
        pruned = filter_pruner(current, scores, p_prime);
        a_prime = gate(pruned.model);
        traj.candidates.push_back(
            {p_prime, a_prime, CandidatePhase::RateHalved, 0, a_prime >= st.score});
      }

      if (a_prime < st.score && cfg.enable_order_change) {
        // Change of pruning order. The registry starts with the failed
        // unboosted candidate (the T = 0 entry of the skip loop).
        std::vector<CandidateEntry> registry;
        registry.push_back({a_prime, 0, pruned.model});
        bool held = false;
        std::size_t alive = current.alive_count();
        const std::size_t t_cap = cfg.t_max < alive ? cfg.t_max : alive - 1;
        for (st.skips = 1; st.skips <= t_cap; ++st.skips) {
          const RelevanceMap boosted = boost_low_relevance(scores, st.skips, current.alive);
          PruneResult cand = filter_pruner(current, boosted, p_prime);
          const double a_cand = gate(cand.model);
          const bool ok = a_cand >= st.score;
          traj.candidates.push_back({p_prime, a_cand, CandidatePhase::OrderSkip, st.skips, ok});
          registry.push_back({a_cand, st.skips, cand.model});
          if (ok) {
            pruned = std::move(cand);
            a_prime = a_cand;
            held = true;
            break;
          }
        }
        if (!held) {
          BestChoice best = best_model_choice(registry);
          pruned.model = std::move(best.model);
          a_prime = best.score;
        }
        st.skips = 0;
      }
      // Neither feature enabled (or the order change already resolved it):
      // the candidate as it stands is accepted.
    }

    current = std::move(pruned.model);
    st.score = a_prime;
    st.cumulative_rate = p_prime;  // N' deliberately keeps its halved value
    traj.points.push_back({st.cumulative_rate, current, record(current, st.cumulative_rate)});
  }
  return traj;
}

// --- reference-set wiring ----------------------------------------------------

namespace detail {

inline RecordFn make_recorder(const std::vector<LabeledImage>& eval_set, std::string strategy,
                              std::uint64_t seed,
                              std::chrono::steady_clock::time_point start) {
  return [&eval_set, strategy = std::move(strategy), seed, start](
             const ModelGraph& m, const Fraction& rate) {
    CurveRecord rec;
    rec.rate = rate;
    rec.per_class = per_class_accuracy(m, eval_set);
    rec.harmonic_mean = harmonic_mean(rec.per_class);
    rec.overall_accuracy = rec.per_class.overall();
    rec.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.strategy = strategy;
    rec.seed = seed;
    return rec;
  };
}

}  // namespace detail

// The reference set drives relevance and (for SD-DPX) the accuracy gate;
// the records are measured on eval_set so held-out curves can be plotted.
inline Trajectory run_px(const ModelGraph& model, const std::vector<LabeledImage>& refs,
                         const std::vector<LabeledImage>& eval_set, const SdDpxConfig& cfg,
                         std::uint64_t seed_label = 0) {
  const auto start = std::chrono::steady_clock::now();
  return run_px_core(
      model, cfg.step, cfg.p_max,
      [&](const ModelGraph& m) { return relevance_aggregate(m, refs, cfg.lrp); },
      detail::make_recorder(eval_set, "px", seed_label, start));
}

inline Trajectory run_dpx(const ModelGraph& model, const std::vector<LabeledImage>& refs,
                          const std::vector<LabeledImage>& eval_set, const SdDpxConfig& cfg,
                          std::uint64_t seed_label = 0) {
  const auto start = std::chrono::steady_clock::now();
  return run_dpx_core(
      model, cfg.step, cfg.p_max,
      [&](const ModelGraph& m) { return relevance_aggregate(m, refs, cfg.lrp); },
      detail::make_recorder(eval_set, "dpx", seed_label, start));
}

inline Trajectory run_sd_dpx(const ModelGraph& model, const std::vector<LabeledImage>& refs,
                             const std::vector<LabeledImage>& eval_set, const SdDpxConfig& cfg,
                             std::uint64_t seed_label = 0) {
  const auto start = std::chrono::steady_clock::now();
  return run_sd_dpx_core(
      model, cfg,
      [&](const ModelGraph& m) { return relevance_aggregate(m, refs, cfg.lrp); },
      [&](const ModelGraph& m) { return harmonic_mean(per_class_accuracy(m, refs)); },
      detail::make_recorder(eval_set, "sd-dpx", seed_label, start));
}

}  // namespace relprune
