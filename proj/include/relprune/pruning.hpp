#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "relprune/lrp.hpp"
#include "relprune/model.hpp"
#include "relprune/rate.hpp"

namespace relprune {

// Ranking value that places a filter above every real relevance score,
// excluding it from the bottom of the ranking while keeping the map finite.
inline constexpr double kRelevanceSentinel = std::numeric_limits<double>::max();

// Number of filters a rate maps to: INT(rate * F_num), truncating.
inline std::size_t count_to_prune(const Fraction& rate_increment, std::size_t f_num) {
  if (rate_increment < Fraction::zero() || Fraction::one() < rate_increment)
    throw std::invalid_argument("count_to_prune: rate must lie in [0, 1]");
  return static_cast<std::size_t>(rate_increment.floor_times(static_cast<std::int64_t>(f_num)));
}

struct PruneMaskDelta {
  std::vector<std::size_t> newly_pruned;  // global filter ids, ascending
  Fraction resulting_rate;                // (total pruned) / F_num
};

struct PruneResult {
  ModelGraph model;  // fresh snapshot; the input model is untouched
  PruneMaskDelta delta;
};

// Masks the alive filters with the lowest relevance until the cumulative
// pruned count reaches INT(target_rate * F_num). Ties break on (layer,
// channel) ascending — which is global-id order. A filter that is the last
// one alive in its layer is skipped and the next-lowest is taken instead.
inline PruneResult filter_pruner(const ModelGraph& model, const RelevanceMap& relevance,
                                 const Fraction& target_rate) {
  const std::size_t f_num = model.f_num();
  if (relevance.size() != f_num)
    throw std::invalid_argument("filter_pruner: relevance length " +
                                std::to_string(relevance.size()) + " != F_num " +
                                std::to_string(f_num));
  const std::size_t target = count_to_prune(target_rate, f_num);
  const std::size_t already = f_num - model.alive_count();
  if (target < already)
    throw std::invalid_argument("filter_pruner: target rate below current pruned fraction");

  PruneResult res{model, {}};
  std::size_t need = target - already;
  if (need == 0) {
    res.delta.resulting_rate = Fraction(static_cast<std::int64_t>(already),
                                        static_cast<std::int64_t>(f_num));
    return res;
  }

  std::vector<std::size_t> order;
  order.reserve(model.alive_count());
  for (std::size_t gid = 0; gid < f_num; ++gid)
    if (model.is_alive(gid)) order.push_back(gid);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return relevance.scores[a] < relevance.scores[b];
  });

  for (std::size_t gid : order) {
    if (need == 0) break;
    const std::size_t layer = res.model.filter_ref(gid).layer_id;
    if (res.model.layer_alive_count(layer) == 1) continue;  // last-filter guard
    res.model.alive[gid] = 0;
    res.delta.newly_pruned.push_back(gid);
    --need;
  }
  if (need > 0)
    throw std::invalid_argument(
        "filter_pruner: cannot reach rate " + target_rate.to_string() + " — " +
        std::to_string(need) +
        " filter(s) short, every remaining candidate is the last alive filter of its layer");

  std::sort(res.delta.newly_pruned.begin(), res.delta.newly_pruned.end());
  res.delta.resulting_rate =
      Fraction(static_cast<std::int64_t>(target), static_cast<std::int64_t>(f_num));
  return res;
}

// Copy of the relevance map with the T lowest-scoring alive entries raised
// to the sentinel, taking them out of contention for pruning.
inline RelevanceMap boost_low_relevance(const RelevanceMap& relevance, std::size_t t,
                                        const std::vector<std::uint8_t>& alive) {
  if (alive.size() != relevance.size())
    throw std::invalid_argument("boost_low_relevance: alive vector length mismatch");
  std::vector<std::size_t> order;
  for (std::size_t gid = 0; gid < alive.size(); ++gid)
    if (alive[gid]) order.push_back(gid);
  if (t >= order.size())
    throw std::invalid_argument("boost_low_relevance: T (" + std::to_string(t) +
                                ") must be below the alive filter count (" +
                                std::to_string(order.size()) + ")");
  RelevanceMap out = relevance;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return relevance.scores[a] < relevance.scores[b];
  });
  for (std::size_t i = 0; i < t; ++i) out.scores[order[i]] = kRelevanceSentinel;
  return out;
}

// Physically removes masked filters: drops conv output channels and the
// matching input slices of downstream consumers. Forward outputs are
// unchanged (masked channels were exact zeros).
inline ModelGraph compact(const ModelGraph& model) {
  const auto shapes = infer_shapes(model.layers, model.input_shape);

  std::vector<LayerSpec> layers;
  layers.reserve(model.layers.size());
  // Alive pattern of the channel axis currently flowing through the net;
  // empty means "dense features, nothing pruned upstream".
  std::vector<std::uint8_t> chan;

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    switch (l.kind) {
      case LayerKind::Conv2D: {
        const std::size_t base = model.gid_base_by_layer[li];
        std::vector<std::uint8_t> keep_out(l.out_channels);
        for (std::size_t c = 0; c < l.out_channels; ++c) keep_out[c] = model.alive[base + c];
        std::vector<std::uint8_t> keep_in =
            chan.empty() ? std::vector<std::uint8_t>(l.in_channels, 1) : chan;

        std::size_t new_in = 0, new_out = 0;
        for (auto k : keep_in) new_in += k ? 1 : 0;
        for (auto k : keep_out) new_out += k ? 1 : 0;

        LayerSpec nl = LayerSpec::conv2d(new_in, new_out, l.kernel_h, l.kernel_w, l.stride_h,
                                         l.stride_w, l.pad_h, l.pad_w);
        std::size_t no = 0;
        for (std::size_t o = 0; o < l.out_channels; ++o) {
          if (!keep_out[o]) continue;
          std::size_t ni = 0;
          for (std::size_t c = 0; c < l.in_channels; ++c) {
            if (!keep_in[c]) continue;
            for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < l.kernel_w; ++kx)
                nl.weight.data[((no * new_in + ni) * l.kernel_h + ky) * l.kernel_w + kx] =
                    l.weight.data[((o * l.in_channels + c) * l.kernel_h + ky) * l.kernel_w + kx];
            ++ni;
          }
          nl.bias.data[no] = l.bias.data[o];
          ++no;
        }
        layers.push_back(std::move(nl));
        chan = keep_out;
        break;
      }
      case LayerKind::BatchNorm2D: {
        std::size_t kept = 0;
        for (auto k : chan) kept += k ? 1 : 0;
        LayerSpec nl = LayerSpec::batchnorm2d(kept, l.bn_eps);
        std::size_t nc = 0;
        for (std::size_t c = 0; c < l.bn_channels; ++c) {
          if (!chan[c]) continue;
          nl.gamma.data[nc] = l.gamma.data[c];
          nl.beta.data[nc] = l.beta.data[c];
          nl.running_mean.data[nc] = l.running_mean.data[c];
          nl.running_var.data[nc] = l.running_var.data[c];
          ++nc;
        }
        layers.push_back(std::move(nl));
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::MaxPool2D:
        layers.push_back(l);
        break;
      case LayerKind::GlobalAvgPool:
        layers.push_back(l);
        break;  // chan pattern survives: one feature per channel
      case LayerKind::Flatten: {
        layers.push_back(l);
        if (!chan.empty()) {
          // Expand the per-channel pattern to per-feature (H*W block each).
          const auto& in_shape = li == 0 ? model.input_shape : shapes[li - 1];
          const std::size_t spatial = in_shape[1] * in_shape[2];
          std::vector<std::uint8_t> feat;
          feat.reserve(chan.size() * spatial);
          for (auto k : chan)
            for (std::size_t s = 0; s < spatial; ++s) feat.push_back(k);
          chan = std::move(feat);
        }
        break;
      }
      case LayerKind::Dense: {
        std::vector<std::uint8_t> keep_in =
            chan.empty() ? std::vector<std::uint8_t>(l.in_features, 1) : chan;
        std::size_t new_in = 0;
        for (auto k : keep_in) new_in += k ? 1 : 0;
        LayerSpec nl = LayerSpec::dense(new_in, l.out_features);
        for (std::size_t j = 0; j < l.out_features; ++j) {
          std::size_t ni = 0;
          for (std::size_t i = 0; i < l.in_features; ++i) {
            if (!keep_in[i]) continue;
            nl.weight.data[j * new_in + ni] = l.weight.data[j * l.in_features + i];
            ++ni;
          }
          nl.bias.data[j] = l.bias.data[j];
        }
        layers.push_back(std::move(nl));
        chan.clear();
        break;
      }
    }
  }

  ModelGraph out;
  out.input_shape = model.input_shape;
  out.layers = std::move(layers);
  out.finalize();
  return out;
}

}  // namespace relprune
