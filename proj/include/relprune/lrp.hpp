#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "relprune/error.hpp"
#include "relprune/model.hpp"
#include "relprune/tensor.hpp"

namespace relprune {

// Per-filter relevance scores indexed by global filter id.
struct RelevanceMap {
  std::vector<double> scores;

  RelevanceMap() = default;
  explicit RelevanceMap(std::size_t f_num) : scores(f_num, 0.0) {}

  std::size_t size() const { return scores.size(); }

  RelevanceMap& operator+=(const RelevanceMap& o) {
    if (scores.size() != o.scores.size())
      throw std::invalid_argument("RelevanceMap +=: length mismatch");
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] += o.scores[i];
    return *this;
  }
};

enum class SeedMode : std::uint8_t {
  TrueClassLogit,      // seed the labelled class's logit
  PredictedClassLogit  // seed the argmax logit
};

enum class ScoreMode : std::uint8_t {
  SignedSum,  // sum raw relevance over a filter's spatial positions
  AbsSum      // sensitivity-analysis variant: sum of absolute values
};

struct LrpConfig {
  double epsilon = 1e-6;
  SeedMode seed_mode = SeedMode::TrueClassLogit;
  ScoreMode score_mode = ScoreMode::SignedSum;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("LrpConfig: epsilon must be positive");
  }
};

struct RelevanceResult {
  RelevanceMap filter_scores;
  Tensor input_relevance;  // relevance propagated all the way to the input image
  double seed_value = 0.0;
  std::size_t seed_class = 0;
};

namespace detail {

inline double stabilized(double z, double eps) {
  // sign-preserving stabilizer; sign(0) counts as positive
  return z + (z >= 0.0 ? eps : -eps);
}

}  // namespace detail

// LRP-epsilon relevance of every filter for one image. The seed class's
// logit is placed at the output layer and redistributed backward:
//   R_i = sum_j a_i w_ij / (z_j + eps * sign(z_j)) * R_j,   z_j = sum_i a_i w_ij.
// ReLU passes relevance through, max pooling routes it to the maximum,
// global average pooling spreads it uniformly. Batchnorm layers are folded
// into their conv before propagation so each step is a single linear map.
inline RelevanceResult relevance_single_detailed(const ModelGraph& model, const Tensor& image,
                                                 std::size_t label, const LrpConfig& cfg) {
  cfg.validate();
  const ModelGraph folded = fold_model(model);
  if (label >= folded.num_classes)
    throw std::invalid_argument("relevance_single: label out of range");

  const std::vector<Tensor> acts = forward(folded, image);  // rejects non-finite
  const Tensor& out_logits = acts.back();

  RelevanceResult res;
  res.filter_scores = RelevanceMap(folded.f_num());

  std::size_t seed_class = label;
  if (cfg.seed_mode == SeedMode::PredictedClassLogit) {
    seed_class = 0;
    for (std::size_t c = 1; c < out_logits.size(); ++c)
      if (out_logits.data[c] > out_logits.data[seed_class]) seed_class = c;
  }
  res.seed_class = seed_class;
  res.seed_value = out_logits.data[seed_class];

  Tensor rel(out_logits.shape);
  rel.data[seed_class] = res.seed_value;

  const double eps = cfg.epsilon;
  for (std::size_t li = folded.layers.size(); li-- > 0;) {
    const LayerSpec& l = folded.layers[li];
    const Tensor& in = li == 0 ? image : acts[li - 1];
    Tensor rin;
    switch (l.kind) {
      case LayerKind::Conv2D: {
        // Record the per-filter score at this layer's output before
        // pushing the relevance further down.
        const std::size_t base = folded.gid_base_by_layer[li];
        const std::size_t spatial = rel.shape[1] * rel.shape[2];
        for (std::size_t c = 0; c < l.out_channels; ++c) {
          double s = 0.0;
          const double* p = rel.data.data() + c * spatial;
          if (cfg.score_mode == ScoreMode::SignedSum)
            for (std::size_t i = 0; i < spatial; ++i) s += p[i];
          else
            for (std::size_t i = 0; i < spatial; ++i) s += p[i] >= 0.0 ? p[i] : -p[i];
          res.filter_scores.scores[base + c] = s;
        }

        const Tensor z = conv2d_preact(in, l, false);
        rin = Tensor(in.shape);
        const std::size_t h = in.shape[1], w = in.shape[2];
        const std::size_t oh = rel.shape[1], ow = rel.shape[2];
        for (std::size_t o = 0; o < l.out_channels; ++o)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double rj = rel.at3(o, oy, ox);
              if (rj == 0.0) continue;
              const double scale = rj / detail::stabilized(z.at3(o, oy, ox), eps);
              for (std::size_t c = 0; c < l.in_channels; ++c)
                for (std::size_t ky = 0; ky < l.kernel_h; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride_h + ky) -
                                            static_cast<std::ptrdiff_t>(l.pad_h);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride_w + kx) -
                                              static_cast<std::ptrdiff_t>(l.pad_w);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t ii =
                        (c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                    const std::size_t wi =
                        ((o * l.in_channels + c) * l.kernel_h + ky) * l.kernel_w + kx;
                    rin.data[ii] += in.data[ii] * l.weight.data[wi] * scale;
                  }
                }
            }
        break;
      }
      case LayerKind::Dense: {
        rin = Tensor(in.shape);
        for (std::size_t j = 0; j < l.out_features; ++j) {
          const double rj = rel.data[j];
          if (rj == 0.0) continue;
          const double* wrow = l.weight.data.data() + j * l.in_features;
          double z = 0.0;
          for (std::size_t i = 0; i < l.in_features; ++i) z += in.data[i] * wrow[i];
          const double scale = rj / detail::stabilized(z, eps);
          for (std::size_t i = 0; i < l.in_features; ++i)
            rin.data[i] += in.data[i] * wrow[i] * scale;
        }
        break;
      }
      case LayerKind::ReLU: {
        rin = Tensor(in.shape, rel.data);
        break;
      }
      case LayerKind::MaxPool2D: {
        rin = Tensor(in.shape);
        const std::size_t oh = rel.shape[1], ow = rel.shape[2];
        for (std::size_t ch = 0; ch < in.shape[0]; ++ch)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              std::size_t by = oy * l.pool_h, bx = ox * l.pool_w;
              double best = in.at3(ch, by, bx);
              for (std::size_t ky = 0; ky < l.pool_h; ++ky)
                for (std::size_t kx = 0; kx < l.pool_w; ++kx) {
                  const double v = in.at3(ch, oy * l.pool_h + ky, ox * l.pool_w + kx);
                  if (v > best) {
                    best = v;
                    by = oy * l.pool_h + ky;
                    bx = ox * l.pool_w + kx;
                  }
                }
              rin.at3(ch, by, bx) += rel.at3(ch, oy, ox);
            }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        rin = Tensor(in.shape);
        const std::size_t spatial = in.shape[1] * in.shape[2];
        const double inv = 1.0 / static_cast<double>(spatial);
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          const double v = rel.data[c] * inv;
          double* p = rin.data.data() + c * spatial;
          for (std::size_t i = 0; i < spatial; ++i) p[i] = v;
        }
        break;
      }
      case LayerKind::Flatten: {
        rin = Tensor(in.shape, rel.data);
        break;
      }
      case LayerKind::BatchNorm2D:
        // fold_model removed these
        throw std::logic_error("relevance_single: unexpected batchnorm layer");
    }
    rel = std::move(rin);
  }
  res.input_relevance = std::move(rel);
  return res;
}

inline RelevanceMap relevance_single(const ModelGraph& model, const Tensor& image,
                                     std::size_t label, const LrpConfig& cfg) {
  return relevance_single_detailed(model, image, label, cfg).filter_scores;
}

struct LabeledImage {
  Tensor image;
  std::size_t label = 0;
};

namespace detail {

template <typename GetSingle>
RelevanceMap tree_reduce(GetSingle&& single, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return single(lo);
  const std::size_t mid = lo + (hi - lo) / 2;
  RelevanceMap left = tree_reduce(single, lo, mid);
  left += tree_reduce(single, mid, hi);
  return left;
}

}  // namespace detail

// Sum of per-image relevance over a reference set. The reduction is a
// fixed binary tree over image indices (split at the midpoint), so partial
// sums computed per half combine to the exact same bits as a full pass —
// images can be processed in any order and reduced afterwards.
inline RelevanceMap relevance_aggregate(const ModelGraph& model,
                                        const std::vector<LabeledImage>& refs,
                                        const LrpConfig& cfg) {
  if (refs.empty()) throw std::invalid_argument("relevance_aggregate: empty reference set");
  return detail::tree_reduce(
      [&](std::size_t i) { return relevance_single(model, refs[i].image, refs[i].label, cfg); },
      0, refs.size());
}

}  // namespace relprune
