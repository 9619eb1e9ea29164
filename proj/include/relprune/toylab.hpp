#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "relprune/error.hpp"
#include "relprune/lrp.hpp"
#include "relprune/model.hpp"
#include "relprune/rng.hpp"
#include "relprune/tensor.hpp"

namespace relprune {

using Dataset = std::vector<LabeledImage>;

// Synthetic image classes built from fixed geometric templates plus pixel
// noise. The templates differ in both shape and contrast, so a trained
// net's filters specialize per class and relevance totals are asymmetric
// across classes — the regime the pruning strategies are meant to handle.
struct SyntheticSpec {
  std::size_t height = 12, width = 12;
  std::size_t channels = 1;
  std::size_t num_classes = 2;  // 2..5
  std::size_t samples_per_class = 120;
  std::size_t ref_per_class = 30;
  std::size_t eval_per_class = 30;
  double noise_std = 0.35;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2 || num_classes > 5)
      throw std::invalid_argument("SyntheticSpec: num_classes must be 2..5");
    if (height < 6 || width < 6)
      throw std::invalid_argument("SyntheticSpec: image must be at least 6x6");
    if (channels == 0) throw std::invalid_argument("SyntheticSpec: channels must be positive");
    if (noise_std < 0.0) throw std::invalid_argument("SyntheticSpec: negative noise_std");
    if (samples_per_class <= ref_per_class + eval_per_class)
      throw std::invalid_argument(
          "SyntheticSpec: samples_per_class too small to fill the reference and eval splits");
    if (ref_per_class == 0 || eval_per_class == 0)
      throw std::invalid_argument("SyntheticSpec: reference and eval splits must be non-empty");
  }
};

// Class template on one channel. Intensities differ per class on purpose.
inline Tensor class_template(const SyntheticSpec& spec, std::size_t cls) {
  Tensor img({spec.channels, spec.height, spec.width});
  const std::size_t h = spec.height, w = spec.width;
  auto put = [&](std::size_t y, std::size_t x, double v) {
    for (std::size_t c = 0; c < spec.channels; ++c) img.at3(c, y, x) = v;
  };
  switch (cls) {
    case 0:  // horizontal bar, full contrast
      for (std::size_t y = h / 2 - 1; y <= h / 2; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) put(y, x, 1.0);
      break;
    case 1:  // vertical bar, dim
      for (std::size_t x = w / 2 - 1; x <= w / 2; ++x)
        for (std::size_t y = 1; y + 1 < h; ++y) put(y, x, 0.6);
      break;
    case 2:  // main diagonal band
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double d = static_cast<double>(y) / (h - 1) - static_cast<double>(x) / (w - 1);
          if (std::abs(d) < 0.13) put(y, x, 0.8);
        }
      break;
    case 3:  // anti-diagonal band
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double d =
              static_cast<double>(y) / (h - 1) + static_cast<double>(x) / (w - 1) - 1.0;
          if (std::abs(d) < 0.13) put(y, x, 0.7);
        }
      break;
    case 4:  // centered square outline
      for (std::size_t y = 2; y + 2 < h; ++y)
        for (std::size_t x = 2; x + 2 < w; ++x)
          if (y == 2 || y + 3 == h || x == 2 || x + 3 == w) put(y, x, 0.9);
      break;
    default:
      throw std::invalid_argument("class_template: class id out of range");
  }
  return img;
}

struct SplitDataset {
  Dataset train, ref, eval;
};

// Deterministic per seed. Per class the first ref_per_class samples go to
// the reference split, the next eval_per_class to eval, the remainder to
// train, so the splits are disjoint by construction.
inline SplitDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SplitDataset out;
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    const Tensor tmpl = class_template(spec, cls);
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      Tensor img = tmpl;
      if (spec.noise_std > 0.0)
        for (double& v : img.data) v += spec.noise_std * rng.normal();
      LabeledImage li{std::move(img), cls};
      if (s < spec.ref_per_class)
        out.ref.push_back(std::move(li));
      else if (s < spec.ref_per_class + spec.eval_per_class)
        out.eval.push_back(std::move(li));
      else
        out.train.push_back(std::move(li));
    }
  }
  return out;
}

// First n images of each class, preserving order. Used by the
// reference-count sweep.
inline Dataset subset_per_class(const Dataset& set, std::size_t n, std::size_t num_classes) {
  std::vector<std::size_t> taken(num_classes, 0);
  Dataset out;
  for (const LabeledImage& li : set) {
    if (li.label < num_classes && taken[li.label] < n) {
      out.push_back(li);
      ++taken[li.label];
    }
  }
  return out;
}

// Reference toy architecture: 24 conv filters in two stages and a linear
// head over globally pooled channels.
inline ModelGraph default_toy_model(std::size_t in_channels, std::size_t num_classes,
                                    std::size_t height = 12, std::size_t width = 12) {
  std::vector<LayerSpec> layers;
  layers.push_back(LayerSpec::conv2d(in_channels, 8, 3, 3, 1, 1, 1, 1));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::maxpool2d(2, 2));
  layers.push_back(LayerSpec::conv2d(8, 16, 3, 3, 1, 1, 1, 1));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::global_avg_pool());
  layers.push_back(LayerSpec::dense(16, num_classes));
  return make_model({in_channels, height, width}, std::move(layers));
}

// He-normal weights, zero biases; batchnorm layers keep their identity
// initialization. Deterministic in layer order, weights before biases.
inline void init_params(ModelGraph& model, std::uint64_t seed) {
  Rng rng(seed);
  for (LayerSpec& l : model.layers) {
    if (l.kind == LayerKind::Conv2D) {
      const double fan_in = static_cast<double>(l.in_channels * l.kernel_h * l.kernel_w);
      const double s = std::sqrt(2.0 / fan_in);
      for (double& v : l.weight.data) v = s * rng.normal();
      for (double& v : l.bias.data) v = 0.0;
    } else if (l.kind == LayerKind::Dense) {
      const double s = std::sqrt(2.0 / static_cast<double>(l.in_features));
      for (double& v : l.weight.data) v = s * rng.normal();
      for (double& v : l.bias.data) v = 0.0;
    }
  }
}

struct TrainConfig {
  std::size_t epochs = 60;
  double lr = 0.05;
  std::uint64_t seed = 0;  // shuffling order only; init is the caller's
};

struct TrainResult {
  ModelGraph model;
  double final_train_accuracy = 0.0;
  double final_mean_loss = 0.0;
};

namespace detail {

inline double softmax_cross_entropy(const Tensor& logit, std::size_t label, Tensor& dlogits) {
  double mx = logit.data[0];
  for (double v : logit.data) mx = v > mx ? v : mx;
  double z = 0.0;
  for (double v : logit.data) z += std::exp(v - mx);
  const double logz = std::log(z) + mx;
  dlogits = Tensor(logit.shape);
  for (std::size_t c = 0; c < logit.size(); ++c)
    dlogits.data[c] = std::exp(logit.data[c] - logz);
  dlogits.data[label] -= 1.0;
  return logz - logit.data[label];
}

inline void sgd_step(ModelGraph& m, const std::vector<LayerGrads>& grads, double lr) {
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    LayerSpec& l = m.layers[li];
    const LayerGrads& g = grads[li];
    auto upd = [lr](Tensor& p, const Tensor& gp) {
      for (std::size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * gp.data[i];
    };
    if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::Dense) {
      upd(l.weight, g.weight);
      upd(l.bias, g.bias);
    } else if (l.kind == LayerKind::BatchNorm2D) {
      upd(l.gamma, g.gamma);
      upd(l.beta, g.beta);
    }
  }
}

}  // namespace detail

// Plain per-sample SGD with softmax cross-entropy, single-threaded, epoch
// order shuffled by a seeded generator. Throws NumericError on divergence.
inline TrainResult train(ModelGraph model, const Dataset& train_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double mean_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const LabeledImage& s = train_set[idx];
      const std::vector<Tensor> acts = forward(model, s.image);
      Tensor dlogits;
      const double loss = detail::softmax_cross_entropy(acts.back(), s.label, dlogits);
      if (!std::isfinite(loss) || loss > 1e12)
        throw NumericError("train: loss diverged (epoch " + std::to_string(epoch) + ", loss " +
                           std::to_string(loss) + ")");
      loss_sum += loss;
      if (cfg.lr != 0.0)
        detail::sgd_step(model, backward(model, s.image, acts, dlogits), cfg.lr);
    }
    mean_loss = loss_sum / static_cast<double>(train_set.size());
  }

  std::size_t hits = 0;
  for (const LabeledImage& s : train_set) {
    const Tensor out = logits(model, s.image);
    std::size_t pred = 0;
    for (std::size_t c = 1; c < out.size(); ++c)
      if (out.data[c] > out.data[pred]) pred = c;
    hits += pred == s.label ? 1 : 0;
  }
  TrainResult res;
  res.model = std::move(model);
  res.final_train_accuracy = static_cast<double>(hits) / static_cast<double>(train_set.size());
  res.final_mean_loss = mean_loss;
  return res;
}

// Generate + init + train with the default architecture.
inline TrainResult train_default_toy(const SyntheticSpec& spec, const TrainConfig& tcfg,
                                     const SplitDataset& data) {
  ModelGraph model = default_toy_model(spec.channels, spec.num_classes, spec.height, spec.width);
  init_params(model, spec.seed);
  return train(std::move(model), data.train, tcfg);
}

}  // namespace relprune
