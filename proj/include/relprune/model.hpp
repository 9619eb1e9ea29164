#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relprune/error.hpp"
#include "relprune/tensor.hpp"

namespace relprune {

enum class LayerKind : std::uint8_t {
  Conv2D,
  BatchNorm2D,
  ReLU,
  MaxPool2D,
  GlobalAvgPool,
  Flatten,
  Dense,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::BatchNorm2D: return "batchnorm2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

// One layer of a sequential CNN. Only the fields for the layer's kind are
// meaningful; factories below fill them in.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;

  // Conv2D
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  // Conv2D / Dense parameters. Conv weight is [out, in, kh, kw]; dense
  // weight is [out, in].
  Tensor weight;
  Tensor bias;

  // BatchNorm2D (inference statistics).
  std::size_t bn_channels = 0;
  Tensor gamma, beta, running_mean, running_var;
  double bn_eps = 1e-5;

  // MaxPool2D window; stride equals the window (non-overlapping pooling).
  std::size_t pool_h = 0, pool_w = 0;

  // Dense
  std::size_t in_features = 0, out_features = 0;

  static LayerSpec conv2d(std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw,
                          std::size_t sh = 1, std::size_t sw = 1, std::size_t ph = 0,
                          std::size_t pw = 0) {
    LayerSpec l;
    l.kind = LayerKind::Conv2D;
    l.in_channels = in_c;
    l.out_channels = out_c;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.stride_h = sh;
    l.stride_w = sw;
    l.pad_h = ph;
    l.pad_w = pw;
    l.weight = Tensor({out_c, in_c, kh, kw});
    l.bias = Tensor({out_c});
    return l;
  }

  static LayerSpec batchnorm2d(std::size_t channels, double eps = 1e-5) {
    LayerSpec l;
    l.kind = LayerKind::BatchNorm2D;
    l.bn_channels = channels;
    l.bn_eps = eps;
    l.gamma = Tensor({channels});
    for (double& v : l.gamma.data) v = 1.0;
    l.beta = Tensor({channels});
    l.running_mean = Tensor({channels});
    l.running_var = Tensor({channels});
    for (double& v : l.running_var.data) v = 1.0;
    return l;
  }

  static LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::ReLU;
    return l;
  }

  static LayerSpec maxpool2d(std::size_t ph, std::size_t pw) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool2D;
    l.pool_h = ph;
    l.pool_w = pw;
    return l;
  }

  static LayerSpec global_avg_pool() {
    LayerSpec l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
  }

  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
  }

  static LayerSpec dense(std::size_t in_f, std::size_t out_f) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in_features = in_f;
    l.out_features = out_f;
    l.weight = Tensor({out_f, in_f});
    l.bias = Tensor({out_f});
    return l;
  }

  bool has_params() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Dense ||
           kind == LayerKind::BatchNorm2D;
  }
};

// Output shape of each layer for a given input shape; throws
// std::invalid_argument naming the offending layer on any inconsistency.
inline std::vector<std::vector<std::size_t>> infer_shapes(
    const std::vector<LayerSpec>& layers, const std::vector<std::size_t>& input_shape) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(layers.size());
  std::vector<std::size_t> cur = input_shape;
  auto fail = [](std::size_t idx, const std::string& msg) {
    throw std::invalid_argument("layer " + std::to_string(idx) + ": " + msg);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv2D: {
        if (cur.size() != 3) fail(i, "conv2d expects a CxHxW input, got " + shape_string(cur));
        if (cur[0] != l.in_channels)
          fail(i, "conv2d expects " + std::to_string(l.in_channels) + " input channels, got " +
                      std::to_string(cur[0]));
        const std::size_t h = cur[1] + 2 * l.pad_h;
        const std::size_t w = cur[2] + 2 * l.pad_w;
        if (h < l.kernel_h || w < l.kernel_w) fail(i, "kernel larger than padded input");
        cur = {l.out_channels, (h - l.kernel_h) / l.stride_h + 1,
               (w - l.kernel_w) / l.stride_w + 1};
        break;
      }
      case LayerKind::BatchNorm2D: {
        if (cur.size() != 3 || cur[0] != l.bn_channels)
          fail(i, "batchnorm2d channel mismatch at input " + shape_string(cur));
        if (i == 0 || layers[i - 1].kind != LayerKind::Conv2D)
          fail(i, "batchnorm2d must immediately follow conv2d");
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::MaxPool2D: {
        if (cur.size() != 3) fail(i, "maxpool2d expects a CxHxW input");
        if (cur[1] < l.pool_h || cur[2] < l.pool_w) fail(i, "pool window larger than input");
        cur = {cur[0], (cur[1] - l.pool_h) / l.pool_h + 1, (cur[2] - l.pool_w) / l.pool_w + 1};
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (cur.size() != 3) fail(i, "global average pool expects a CxHxW input");
        cur = {cur[0]};
        break;
      }
      case LayerKind::Flatten: {
        std::size_t n = 1;
        for (std::size_t d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::Dense: {
        if (cur.size() != 1) fail(i, "dense expects a flat input, got " + shape_string(cur));
        if (cur[0] != l.in_features)
          fail(i, "dense expects " + std::to_string(l.in_features) + " features, got " +
                      std::to_string(cur[0]));
        cur = {l.out_features};
        break;
      }
    }
    out.push_back(cur);
  }
  return out;
}

struct FilterRef {
  std::size_t layer_id = 0;
  std::size_t channel = 0;
};

// Sequential CNN plus per-filter alive flags. Filters are the output
// channels of Conv2D layers; global filter ids run over conv layers in
// order, channels ascending within a layer.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> input_shape;
  std::vector<std::uint8_t> alive;  // one flag per global filter id

  // Derived index tables, rebuilt by finalize().
  std::vector<std::size_t> conv_layer_ids;
  std::vector<std::size_t> gid_base_by_layer;  // indexed by layer id; only conv entries valid
  std::vector<FilterRef> filter_refs;
  std::size_t num_classes = 0;

  std::size_t f_num() const { return filter_refs.size(); }

  std::size_t global_id(std::size_t layer_id, std::size_t channel) const {
    return gid_base_by_layer[layer_id] + channel;
  }
  const FilterRef& filter_ref(std::size_t gid) const { return filter_refs[gid]; }

  bool is_alive(std::size_t gid) const { return alive[gid] != 0; }

  std::size_t alive_count() const {
    std::size_t n = 0;
    for (auto a : alive) n += a ? 1 : 0;
    return n;
  }

  std::size_t layer_alive_count(std::size_t layer_id) const {
    const std::size_t base = gid_base_by_layer[layer_id];
    const std::size_t c = layers[layer_id].out_channels;
    std::size_t n = 0;
    for (std::size_t k = 0; k < c; ++k) n += alive[base + k] ? 1 : 0;
    return n;
  }

  // Masking never empties a layer: the network would degenerate to a
  // constant function.
  void set_filter_alive(std::size_t gid, bool value) {
    if (gid >= alive.size()) throw std::invalid_argument("set_filter_alive: bad filter id");
    if (!value && alive[gid] && layer_alive_count(filter_refs[gid].layer_id) == 1)
      throw std::invalid_argument("set_filter_alive: cannot mask the last alive filter of layer " +
                                  std::to_string(filter_refs[gid].layer_id));
    alive[gid] = value ? 1 : 0;
  }

  void finalize() {
    conv_layer_ids.clear();
    gid_base_by_layer.assign(layers.size(), 0);
    filter_refs.clear();
    const auto shapes = infer_shapes(layers, input_shape);
    if (shapes.empty() || shapes.back().size() != 1)
      throw std::invalid_argument("model must end in a flat logit vector");
    num_classes = shapes.back()[0];
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].kind != LayerKind::Conv2D) continue;
      conv_layer_ids.push_back(i);
      gid_base_by_layer[i] = filter_refs.size();
      for (std::size_t c = 0; c < layers[i].out_channels; ++c) filter_refs.push_back({i, c});
    }
    if (alive.size() != filter_refs.size()) alive.assign(filter_refs.size(), 1);
  }
};

inline ModelGraph make_model(std::vector<std::size_t> input_shape, std::vector<LayerSpec> layers) {
  ModelGraph m;
  m.input_shape = std::move(input_shape);
  m.layers = std::move(layers);
  m.finalize();
  return m;
}

// --- convolution helpers ---------------------------------------------------

// Unrolls conv input patches into a [in_c*kh*kw, oh*ow] matrix so the
// convolution itself is a plain matrix product.
inline std::vector<double> im2col(const Tensor& in, const LayerSpec& l, std::size_t oh,
                                  std::size_t ow) {
  const std::size_t ic = l.in_channels, kh = l.kernel_h, kw = l.kernel_w;
  const std::size_t h = in.shape[1], w = in.shape[2];
  std::vector<double> cols(ic * kh * kw * oh * ow, 0.0);
  const std::size_t patch = oh * ow;
  for (std::size_t c = 0; c < ic; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::size_t row = (c * kh + ky) * kw + kx;
        double* dst = cols.data() + row * patch;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * l.stride_h + ky) - static_cast<std::ptrdiff_t>(l.pad_h);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * l.stride_w + kx) - static_cast<std::ptrdiff_t>(l.pad_w);
            double v = 0.0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                ix < static_cast<std::ptrdiff_t>(w))
              v = in.data[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            dst[oy * ow + ox] = v;
          }
        }
      }
    }
  }
  return cols;
}

// Pre-activations of a conv layer, optionally without the bias (the LRP
// denominator wants the pure weighted sum).
inline Tensor conv2d_preact(const Tensor& in, const LayerSpec& l, bool with_bias) {
  const std::size_t h = in.shape[1] + 2 * l.pad_h, w = in.shape[2] + 2 * l.pad_w;
  const std::size_t oh = (h - l.kernel_h) / l.stride_h + 1;
  const std::size_t ow = (w - l.kernel_w) / l.stride_w + 1;
  const std::size_t k = l.in_channels * l.kernel_h * l.kernel_w;
  const std::size_t patch = oh * ow;
  const std::vector<double> cols = im2col(in, l, oh, ow);
  Tensor out({l.out_channels, oh, ow});
  for (std::size_t o = 0; o < l.out_channels; ++o) {
    const double* wrow = l.weight.data.data() + o * k;
    double* orow = out.data.data() + o * patch;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double wv = wrow[kk];
      if (wv == 0.0) continue;
      const double* crow = cols.data() + kk * patch;
      for (std::size_t p = 0; p < patch; ++p) orow[p] += wv * crow[p];
    }
    if (with_bias) {
      const double b = l.bias.data[o];
      for (std::size_t p = 0; p < patch; ++p) orow[p] += b;
    }
  }
  return out;
}

// --- forward ---------------------------------------------------------------

// Runs the model on one input and returns every layer's output (the last
// entry is the logit vector). Masked filters yield all-zero channels both
// at the conv output and after a following batchnorm.
inline std::vector<Tensor> forward(const ModelGraph& m, const Tensor& input) {
  if (input.shape != m.input_shape)
    throw std::invalid_argument("layer 0: input shape " + shape_string(input.shape) +
                                " does not match model input " + shape_string(m.input_shape));
  std::vector<Tensor> acts;
  acts.reserve(m.layers.size());
  const Tensor* cur = &input;
  // Mask of the conv layer whose channel structure the current activation
  // still carries (reapplied after batchnorm).
  std::size_t mask_layer = static_cast<std::size_t>(-1);

  auto zero_masked = [&](Tensor& t, std::size_t conv_layer) {
    const std::size_t base = m.gid_base_by_layer[conv_layer];
    const std::size_t spatial = t.size() / t.shape[0];
    for (std::size_t c = 0; c < t.shape[0]; ++c) {
      if (m.alive[base + c]) continue;
      double* p = t.data.data() + c * spatial;
      for (std::size_t i = 0; i < spatial; ++i) p[i] = 0.0;
    }
  };

  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const LayerSpec& l = m.layers[li];
    Tensor out;
    switch (l.kind) {
      case LayerKind::Conv2D: {
        out = conv2d_preact(*cur, l, true);
        zero_masked(out, li);
        mask_layer = li;
        break;
      }
      case LayerKind::BatchNorm2D: {
        out = *cur;
        const std::size_t spatial = out.shape[1] * out.shape[2];
        for (std::size_t c = 0; c < l.bn_channels; ++c) {
          const double inv = 1.0 / std::sqrt(l.running_var.data[c] + l.bn_eps);
          const double g = l.gamma.data[c] * inv;
          const double b = l.beta.data[c] - l.running_mean.data[c] * g;
          double* p = out.data.data() + c * spatial;
          for (std::size_t i = 0; i < spatial; ++i) p[i] = g * p[i] + b;
        }
        if (mask_layer != static_cast<std::size_t>(-1)) zero_masked(out, mask_layer);
        break;
      }
      case LayerKind::ReLU: {
        out = *cur;
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::MaxPool2D: {
        const std::size_t c = cur->shape[0];
        const std::size_t oh = (cur->shape[1] - l.pool_h) / l.pool_h + 1;
        const std::size_t ow = (cur->shape[2] - l.pool_w) / l.pool_w + 1;
        out = Tensor({c, oh, ow});
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              double best = cur->at3(ch, oy * l.pool_h, ox * l.pool_w);
              for (std::size_t ky = 0; ky < l.pool_h; ++ky)
                for (std::size_t kx = 0; kx < l.pool_w; ++kx) {
                  const double v = cur->at3(ch, oy * l.pool_h + ky, ox * l.pool_w + kx);
                  if (v > best) best = v;
                }
              out.at3(ch, oy, ox) = best;
            }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const std::size_t c = cur->shape[0];
        const std::size_t spatial = cur->shape[1] * cur->shape[2];
        out = Tensor({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          const double* p = cur->data.data() + ch * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += p[i];
          out.data[ch] = s / static_cast<double>(spatial);
        }
        break;
      }
      case LayerKind::Flatten: {
        out = Tensor({cur->size()}, cur->data);
        break;
      }
      case LayerKind::Dense: {
        out = Tensor({l.out_features});
        for (std::size_t j = 0; j < l.out_features; ++j) {
          double s = l.bias.data[j];
          const double* wrow = l.weight.data.data() + j * l.in_features;
          for (std::size_t i = 0; i < l.in_features; ++i) s += wrow[i] * cur->data[i];
          out.data[j] = s;
        }
        break;
      }
    }
    if (!out.all_finite())
      throw NumericError("layer " + std::to_string(li) + " (" + layer_kind_name(l.kind) +
                         ") produced non-finite values");
    acts.push_back(std::move(out));
    cur = &acts.back();
  }
  return acts;
}

inline Tensor logits(const ModelGraph& m, const Tensor& input) {
  return forward(m, input).back();
}

// --- backward --------------------------------------------------------------

struct LayerGrads {
  Tensor weight, bias, gamma, beta;
};

// Parameter gradients for one input given d(loss)/d(logits). Gradients of
// masked filters are zero; batchnorm uses its running statistics, so its
// gradient is that of a fixed per-channel affine map.
inline std::vector<LayerGrads> backward(const ModelGraph& m, const Tensor& input,
                                        const std::vector<Tensor>& acts, const Tensor& loss_grad) {
  if (acts.size() != m.layers.size())
    throw std::invalid_argument("backward: activation list does not match model");
  if (loss_grad.shape != acts.back().shape)
    throw std::invalid_argument("backward: loss gradient shape mismatch");

  std::vector<LayerGrads> grads(m.layers.size());
  Tensor g = loss_grad;

  auto zero_masked = [&](Tensor& t, std::size_t conv_layer) {
    const std::size_t base = m.gid_base_by_layer[conv_layer];
    const std::size_t spatial = t.size() / t.shape[0];
    for (std::size_t c = 0; c < t.shape[0]; ++c) {
      if (m.alive[base + c]) continue;
      double* p = t.data.data() + c * spatial;
      for (std::size_t i = 0; i < spatial; ++i) p[i] = 0.0;
    }
  };

  // Conv layer whose mask governs the channels flowing into layer li.
  auto governing_conv = [&](std::size_t li) -> std::size_t {
    for (std::size_t k = li + 1; k-- > 0;) {
      const LayerKind kind = m.layers[k].kind;
      if (kind == LayerKind::Conv2D) return k;
      if (kind == LayerKind::Dense || kind == LayerKind::Flatten ||
          kind == LayerKind::GlobalAvgPool)
        break;
    }
    return static_cast<std::size_t>(-1);
  };

  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const LayerSpec& l = m.layers[li];
    const Tensor& in = li == 0 ? input : acts[li - 1];
    Tensor gin;
    switch (l.kind) {
      case LayerKind::Dense: {
        grads[li].weight = Tensor(l.weight.shape);
        grads[li].bias = Tensor(l.bias.shape);
        gin = Tensor(in.shape);
        for (std::size_t j = 0; j < l.out_features; ++j) {
          const double gj = g.data[j];
          grads[li].bias.data[j] = gj;
          const double* wrow = l.weight.data.data() + j * l.in_features;
          double* gwrow = grads[li].weight.data.data() + j * l.in_features;
          for (std::size_t i = 0; i < l.in_features; ++i) {
            gwrow[i] = gj * in.data[i];
            gin.data[i] += gj * wrow[i];
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        gin = Tensor(in.shape, g.data);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        gin = Tensor(in.shape);
        const std::size_t spatial = in.shape[1] * in.shape[2];
        const double inv = 1.0 / static_cast<double>(spatial);
        for (std::size_t c = 0; c < in.shape[0]; ++c) {
          const double v = g.data[c] * inv;
          double* p = gin.data.data() + c * spatial;
          for (std::size_t i = 0; i < spatial; ++i) p[i] = v;
        }
        break;
      }
      case LayerKind::MaxPool2D: {
        gin = Tensor(in.shape);
        const std::size_t c = in.shape[0];
        const std::size_t oh = g.shape[1], ow = g.shape[2];
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              // First maximum in row-major scan; matches the LRP routing.
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
              gin.at3(ch, by, bx) += g.at3(ch, oy, ox);
            }
        break;
      }
      case LayerKind::ReLU: {
        gin = Tensor(in.shape);
        for (std::size_t i = 0; i < in.size(); ++i)
          gin.data[i] = in.data[i] > 0.0 ? g.data[i] : 0.0;
        break;
      }
      case LayerKind::BatchNorm2D: {
        const std::size_t gov = governing_conv(li);
        if (gov != static_cast<std::size_t>(-1)) zero_masked(g, gov);
        grads[li].gamma = Tensor(l.gamma.shape);
        grads[li].beta = Tensor(l.beta.shape);
        gin = Tensor(in.shape);
        const std::size_t spatial = in.shape[1] * in.shape[2];
        for (std::size_t c = 0; c < l.bn_channels; ++c) {
          const double inv = 1.0 / std::sqrt(l.running_var.data[c] + l.bn_eps);
          const double mu = l.running_mean.data[c];
          const double gm = l.gamma.data[c];
          double dgamma = 0.0, dbeta = 0.0;
          const double* gp = g.data.data() + c * spatial;
          const double* xp = in.data.data() + c * spatial;
          double* gi = gin.data.data() + c * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            dgamma += gp[i] * (xp[i] - mu) * inv;
            dbeta += gp[i];
            gi[i] = gp[i] * gm * inv;
          }
          grads[li].gamma.data[c] = dgamma;
          grads[li].beta.data[c] = dbeta;
        }
        break;
      }
      case LayerKind::Conv2D: {
        zero_masked(g, li);
        grads[li].weight = Tensor(l.weight.shape);
        grads[li].bias = Tensor(l.bias.shape);
        gin = Tensor(in.shape);
        const std::size_t oh = g.shape[1], ow = g.shape[2];
        const std::size_t h = in.shape[1], w = in.shape[2];
        for (std::size_t o = 0; o < l.out_channels; ++o) {
          double db = 0.0;
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double go = g.at3(o, oy, ox);
              if (go == 0.0) continue;
              db += go;
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
                    const std::size_t wi = ((o * l.in_channels + c) * l.kernel_h + ky) * l.kernel_w + kx;
                    grads[li].weight.data[wi] += go * in.data[ii];
                    gin.data[ii] += go * l.weight.data[wi];
                  }
                }
            }
          grads[li].bias.data[o] = db;
        }
        break;
      }
    }
    g = std::move(gin);
  }
  return grads;
}

inline std::vector<LayerGrads> backward(const ModelGraph& m, const Tensor& input,
                                        const Tensor& loss_grad) {
  return backward(m, input, forward(m, input), loss_grad);
}

// --- batchnorm folding -----------------------------------------------------

// Merges an inference-mode batchnorm into the preceding conv:
// w' = w * gamma / sqrt(var + eps), b' = (b - mean) * gamma / sqrt(var + eps) + beta.
inline LayerSpec fold_batchnorm(const LayerSpec& conv, const LayerSpec& bn) {
  if (conv.kind != LayerKind::Conv2D || bn.kind != LayerKind::BatchNorm2D)
    throw std::invalid_argument("fold_batchnorm: expects (conv2d, batchnorm2d)");
  if (conv.out_channels != bn.bn_channels)
    throw std::invalid_argument("fold_batchnorm: channel mismatch (" +
                                std::to_string(conv.out_channels) + " vs " +
                                std::to_string(bn.bn_channels) + ")");
  LayerSpec out = conv;
  const std::size_t per_filter = conv.in_channels * conv.kernel_h * conv.kernel_w;
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    const double s = bn.gamma.data[o] / std::sqrt(bn.running_var.data[o] + bn.bn_eps);
    double* wp = out.weight.data.data() + o * per_filter;
    for (std::size_t k = 0; k < per_filter; ++k) wp[k] *= s;
    out.bias.data[o] = (conv.bias.data[o] - bn.running_mean.data[o]) * s + bn.beta.data[o];
  }
  return out;
}

// Folds every batchnorm into its preceding conv. Filter ids are preserved:
// the conv layers keep their order and channel counts, so the alive vector
// carries over unchanged.
inline ModelGraph fold_model(const ModelGraph& m) {
  std::vector<LayerSpec> layers;
  layers.reserve(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.layers[i].kind == LayerKind::BatchNorm2D) {
      if (layers.empty() || layers.back().kind != LayerKind::Conv2D)
        throw std::invalid_argument("fold_model: batchnorm2d without preceding conv2d");
      layers.back() = fold_batchnorm(layers.back(), m.layers[i]);
      continue;
    }
    layers.push_back(m.layers[i]);
  }
  ModelGraph out;
  out.input_shape = m.input_shape;
  out.layers = std::move(layers);
  out.alive = m.alive;
  out.finalize();
  return out;
}

}  // namespace relprune
