#pragma once

// Shared helpers for the test suites: independent oracles (naive direct
// convolution, finite differences) and randomized toy-net generators.
// These deliberately avoid the library's im2col/backward code paths.

#include <cstddef>
#include <vector>

#include "relprune/model.hpp"
#include "relprune/rng.hpp"
#include "relprune/tensor.hpp"

namespace testsupport {

using relprune::LayerKind;
using relprune::LayerSpec;
using relprune::ModelGraph;
using relprune::Rng;
using relprune::Tensor;

inline void fill_uniform(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

// Direct sliding-window convolution, one output pixel at a time. Kept as
// plain and literal as possible; this is the oracle the optimized path is
// checked against.
inline Tensor naive_conv2d(const Tensor& in, const LayerSpec& l) {
  const std::size_t ic = l.in_channels, oc = l.out_channels;
  const std::size_t h = in.shape[1], w = in.shape[2];
  const std::size_t oh = (h + 2 * l.pad_h - l.kernel_h) / l.stride_h + 1;
  const std::size_t ow = (w + 2 * l.pad_w - l.kernel_w) / l.stride_w + 1;
  Tensor out({oc, oh, ow});
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ic; ++c)
          for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
              const long iy = static_cast<long>(oy * l.stride_h + ky) - static_cast<long>(l.pad_h);
              const long ix = static_cast<long>(ox * l.stride_w + kx) - static_cast<long>(l.pad_w);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                continue;
              acc += in.at3(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                     l.weight.data[((o * ic + c) * l.kernel_h + ky) * l.kernel_w + kx];
            }
        out.at3(o, oy, ox) = acc + l.bias.data[o];
      }
  return out;
}

// Small random sequential net: 2-3 conv stages, optional batchnorm and
// pooling, dense head. Always ends in a flat logit vector.
inline ModelGraph random_toy_net(Rng& rng, std::size_t in_c = 1, std::size_t hw = 8,
                                 std::size_t classes = 2, bool with_bn = false) {
  const std::size_t c1 = 2 + rng.below(3);  // 2..4
  const std::size_t c2 = 2 + rng.below(3);
  std::vector<LayerSpec> layers;
  LayerSpec conv1 = LayerSpec::conv2d(in_c, c1, 3, 3, 1, 1, 1, 1);
  fill_uniform(conv1.weight, rng, -0.8, 0.8);
  fill_uniform(conv1.bias, rng, -0.2, 0.2);
  layers.push_back(conv1);
  if (with_bn) {
    LayerSpec bn = LayerSpec::batchnorm2d(c1);
    fill_uniform(bn.gamma, rng, 0.5, 1.5);
    fill_uniform(bn.beta, rng, -0.3, 0.3);
    fill_uniform(bn.running_mean, rng, -0.3, 0.3);
    fill_uniform(bn.running_var, rng, 0.5, 1.5);
    layers.push_back(bn);
  }
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::maxpool2d(2, 2));
  LayerSpec conv2 = LayerSpec::conv2d(c1, c2, 3, 3, 1, 1, 1, 1);
  fill_uniform(conv2.weight, rng, -0.8, 0.8);
  fill_uniform(conv2.bias, rng, -0.2, 0.2);
  layers.push_back(conv2);
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::global_avg_pool());
  LayerSpec head = LayerSpec::dense(c2, classes);
  fill_uniform(head.weight, rng, -0.8, 0.8);
  fill_uniform(head.bias, rng, -0.2, 0.2);
  layers.push_back(head);
  return relprune::make_model({in_c, hw, hw}, std::move(layers));
}

// Deeper variant: 2-3 conv stages (+ optional batchnorm), one pooling
// stage, global average pooling and a dense head.
inline ModelGraph random_seq_net(Rng& rng, std::size_t num_convs, bool with_bn,
                                 std::size_t in_c = 1, std::size_t hw = 8,
                                 std::size_t classes = 2) {
  std::vector<LayerSpec> layers;
  std::size_t ch = in_c;
  for (std::size_t k = 0; k < num_convs; ++k) {
    const std::size_t out = 2 + rng.below(3);
    LayerSpec conv = LayerSpec::conv2d(ch, out, 3, 3, 1, 1, 1, 1);
    fill_uniform(conv.weight, rng, -0.8, 0.8);
    fill_uniform(conv.bias, rng, -0.2, 0.2);
    layers.push_back(conv);
    if (with_bn) {
      LayerSpec bn = LayerSpec::batchnorm2d(out);
      fill_uniform(bn.gamma, rng, 0.5, 1.5);
      fill_uniform(bn.beta, rng, -0.3, 0.3);
      fill_uniform(bn.running_mean, rng, -0.3, 0.3);
      fill_uniform(bn.running_var, rng, 0.5, 1.5);
      layers.push_back(bn);
    }
    layers.push_back(LayerSpec::relu());
    if (k == 0) layers.push_back(LayerSpec::maxpool2d(2, 2));
    ch = out;
  }
  layers.push_back(LayerSpec::global_avg_pool());
  LayerSpec head = LayerSpec::dense(ch, classes);
  fill_uniform(head.weight, rng, -0.8, 0.8);
  fill_uniform(head.bias, rng, -0.2, 0.2);
  layers.push_back(head);
  return relprune::make_model({in_c, hw, hw}, std::move(layers));
}

// Net whose weighted sums are all positive and bounded away from zero:
// weights in [0.2, 0.8] and positive inputs keep every LRP denominator
// safe, which is the precondition of the conservation property.
inline ModelGraph random_positive_net(Rng& rng, std::size_t num_convs, std::size_t in_c = 1,
                                      std::size_t hw = 8, std::size_t classes = 2) {
  std::vector<LayerSpec> layers;
  std::size_t ch = in_c;
  for (std::size_t k = 0; k < num_convs; ++k) {
    const std::size_t out = 2 + rng.below(3);
    LayerSpec conv = LayerSpec::conv2d(ch, out, 3, 3, 1, 1, 1, 1);
    fill_uniform(conv.weight, rng, 0.2, 0.8);
    fill_uniform(conv.bias, rng, 0.0, 0.1);
    layers.push_back(conv);
    layers.push_back(LayerSpec::relu());
    if (k == 0) layers.push_back(LayerSpec::maxpool2d(2, 2));
    ch = out;
  }
  layers.push_back(LayerSpec::global_avg_pool());
  LayerSpec head = LayerSpec::dense(ch, classes);
  fill_uniform(head.weight, rng, 0.2, 0.8);
  fill_uniform(head.bias, rng, 0.0, 0.1);
  layers.push_back(head);
  return relprune::make_model({in_c, hw, hw}, std::move(layers));
}

inline Tensor random_input(const ModelGraph& m, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(m.input_shape);
  fill_uniform(t, rng, lo, hi);
  return t;
}

// Smallest |pre-bias weighted sum| over every conv/dense neuron of a
// batchnorm-free model. The LRP-epsilon conservation bound degrades as
// these denominators approach zero, so tests resample below a margin.
inline double min_abs_preact(const ModelGraph& m, const Tensor& in) {
  const auto acts = relprune::forward(m, in);
  double best = 1e300;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const LayerSpec& l = m.layers[li];
    const Tensor& input = li == 0 ? in : acts[li - 1];
    if (l.kind == LayerKind::Conv2D) {
      const Tensor z = relprune::conv2d_preact(input, l, false);
      for (double v : z.data) {
        const double a = v < 0 ? -v : v;
        best = a < best ? a : best;
      }
    } else if (l.kind == LayerKind::Dense) {
      for (std::size_t j = 0; j < l.out_features; ++j) {
        double z = 0.0;
        for (std::size_t i = 0; i < l.in_features; ++i)
          z += l.weight.data[j * l.in_features + i] * input.data[i];
        const double a = z < 0 ? -z : z;
        best = a < best ? a : best;
      }
    }
  }
  return best;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] > b.data[i] ? a.data[i] - b.data[i] : b.data[i] - a.data[i];
    m = d > m ? d : m;
  }
  return m;
}

}  // namespace testsupport
