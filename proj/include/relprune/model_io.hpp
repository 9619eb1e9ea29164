#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "relprune/error.hpp"
#include "relprune/model.hpp"
#include "relprune/toylab.hpp"

namespace relprune {

// On-disk container: a UTF-8 text manifest next to a raw little-endian
// float64 blob (magic "RPRN1"), plus an int64 label file for datasets.
// Offsets and lengths in the manifest are in float64 elements.

namespace io_detail {

inline constexpr char kMagic[5] = {'R', 'P', 'R', 'N', '1'};
inline constexpr std::uint32_t kEndianSentinel = 0x1A2B3C4D;
inline constexpr int kFormatVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64_blob(const std::string& path, const std::vector<double>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 5);
  put_u32(os, kEndianSentinel);
  put_u64(os, values.size());
  for (double v : values) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<double> read_f64_blob(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != std::string(kMagic, 5))
    throw IoError("bad magic in blob file: " + path);
  if (get_u32(is) != kEndianSentinel)
    throw IoError("endianness sentinel mismatch in blob file: " + path);
  const std::uint64_t n = get_u64(is);
  std::vector<double> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    out[i] = std::bit_cast<double>(get_u64(is));
    if (!is) throw IoError("truncated blob: " + path + " declares " + std::to_string(n) +
                           " values but ends at " + std::to_string(i));
  }
  return out;
}

inline void write_i64_file(const std::string& path, const std::vector<std::int64_t>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 5);
  put_u32(os, kEndianSentinel);
  put_u64(os, values.size());
  for (std::int64_t v : values) put_u64(os, static_cast<std::uint64_t>(v));
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<std::int64_t> read_i64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != std::string(kMagic, 5))
    throw IoError("bad magic in label file: " + path);
  if (get_u32(is) != kEndianSentinel)
    throw IoError("endianness sentinel mismatch in label file: " + path);
  const std::uint64_t n = get_u64(is);
  std::vector<std::int64_t> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    out[i] = static_cast<std::int64_t>(get_u64(is));
    if (!is) throw IoError("truncated label file: " + path);
  }
  return out;
}

struct BlobBuilder {
  std::vector<double> values;
  // Returns "offset length" and appends.
  std::string put(const Tensor& t) {
    const std::size_t off = values.size();
    values.insert(values.end(), t.data.begin(), t.data.end());
    return std::to_string(off) + " " + std::to_string(t.size());
  }
};

struct BlobReader {
  const std::vector<double>* values = nullptr;
  std::string path;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  Tensor take(std::istream& tokens, std::vector<std::size_t> shape, const std::string& what) {
    std::size_t off = 0, len = 0;
    if (!(tokens >> off >> len)) throw IoError("manifest: missing offset/length for " + what);
    const std::size_t expect = Tensor::checked_numel(shape);
    if (len != expect)
      throw IoError("manifest: " + what + " declares length " + std::to_string(len) +
                    " but its shape needs " + std::to_string(expect));
    if (off + len > values->size())
      throw IoError("truncated blob: " + what + " at offset " + std::to_string(off) +
                    " length " + std::to_string(len) + " exceeds blob of " +
                    std::to_string(values->size()) + " values (" + path + ")");
    ranges.emplace_back(off, len);
    Tensor t(std::move(shape),
             std::vector<double>(values->begin() + static_cast<std::ptrdiff_t>(off),
                                 values->begin() + static_cast<std::ptrdiff_t>(off + len)));
    return t;
  }

  void check_no_overlap() const {
    auto sorted = ranges;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i].first < sorted[i - 1].first + sorted[i - 1].second)
        throw IoError("manifest: overlapping blob ranges");
  }
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace io_detail

// --- model -------------------------------------------------------------------

inline void save_model(const ModelGraph& model, const std::string& prefix) {
  io_detail::BlobBuilder blob;
  std::ostringstream mf;
  mf << "relprune-model " << io_detail::kFormatVersion << "\n";
  mf << "input_shape";
  for (std::size_t d : model.input_shape) mf << " " << d;
  mf << "\n";
  mf << "classes " << model.num_classes << "\n";
  mf << "f_num " << model.f_num() << "\n";
  mf << "layers " << model.layers.size() << "\n";
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    mf << "layer " << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv2D: {
        mf << " in " << l.in_channels << " out " << l.out_channels << " kernel " << l.kernel_h
           << " " << l.kernel_w << " stride " << l.stride_h << " " << l.stride_w << " pad "
           << l.pad_h << " " << l.pad_w;
        mf << " weight " << blob.put(l.weight) << " bias " << blob.put(l.bias);
        mf << " mask ";
        const std::size_t base = model.gid_base_by_layer[li];
        for (std::size_t c = 0; c < l.out_channels; ++c) mf << (model.alive[base + c] ? '1' : '0');
        break;
      }
      case LayerKind::BatchNorm2D:
        mf << " channels " << l.bn_channels << " eps " << io_detail::fmt_double(l.bn_eps);
        mf << " gamma " << blob.put(l.gamma) << " beta " << blob.put(l.beta) << " mean "
           << blob.put(l.running_mean) << " var " << blob.put(l.running_var);
        break;
      case LayerKind::MaxPool2D:
        mf << " pool " << l.pool_h << " " << l.pool_w;
        break;
      case LayerKind::Dense:
        mf << " in " << l.in_features << " out " << l.out_features;
        mf << " weight " << blob.put(l.weight) << " bias " << blob.put(l.bias);
        break;
      case LayerKind::ReLU:
      case LayerKind::GlobalAvgPool:
      case LayerKind::Flatten:
        break;
    }
    mf << "\n";
  }
  mf << "end\n";

  io_detail::write_f64_blob(prefix + ".blob", blob.values);
  std::ofstream os(prefix + ".manifest", std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + prefix + ".manifest");
  os << mf.str();
  if (!os) throw IoError("write failed: " + prefix + ".manifest");
}

inline ModelGraph load_model(const std::string& prefix) {
  std::ifstream is(prefix + ".manifest", std::ios::binary);
  if (!is) throw IoError("cannot open: " + prefix + ".manifest");
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (!is || tag != "relprune-model")
    throw IoError("not a model manifest: " + prefix + ".manifest");
  if (version != io_detail::kFormatVersion)
    throw IoError("model manifest version mismatch: found " + std::to_string(version) +
                  ", expected " + std::to_string(io_detail::kFormatVersion));

  const std::vector<double> values = io_detail::read_f64_blob(prefix + ".blob");
  io_detail::BlobReader blob{&values, prefix + ".blob", {}};

  ModelGraph m;
  std::size_t declared_fnum = 0, declared_layers = 0, declared_classes = 0;
  std::vector<std::string> mask_strings;  // per conv layer, in order
  std::string key;
  while (is >> key) {
    if (key == "input_shape") {
      std::string rest;
      std::getline(is, rest);
      std::istringstream ss(rest);
      std::size_t d;
      while (ss >> d) m.input_shape.push_back(d);
    } else if (key == "classes") {
      is >> declared_classes;
    } else if (key == "f_num") {
      is >> declared_fnum;
    } else if (key == "layers") {
      is >> declared_layers;
    } else if (key == "layer") {
      std::string line;
      std::getline(is, line);
      std::istringstream ss(line);
      std::string kind;
      ss >> kind;
      auto expect = [&](const char* word) {
        std::string w;
        if (!(ss >> w) || w != word)
          throw IoError("manifest: malformed " + kind + " layer (expected '" + word + "')");
      };
      if (kind == "conv2d") {
        std::size_t ic, oc, kh, kw, sh, sw, ph, pw;
        expect("in");
        ss >> ic;
        expect("out");
        ss >> oc;
        expect("kernel");
        ss >> kh >> kw;
        expect("stride");
        ss >> sh >> sw;
        expect("pad");
        ss >> ph >> pw;
        LayerSpec l = LayerSpec::conv2d(ic, oc, kh, kw, sh, sw, ph, pw);
        expect("weight");
        l.weight = blob.take(ss, {oc, ic, kh, kw}, "conv weight");
        expect("bias");
        l.bias = blob.take(ss, {oc}, "conv bias");
        expect("mask");
        std::string mask;
        ss >> mask;
        if (mask.size() != oc)
          throw IoError("manifest: conv mask length " + std::to_string(mask.size()) +
                        " != out channels " + std::to_string(oc));
        mask_strings.push_back(mask);
        m.layers.push_back(std::move(l));
      } else if (kind == "batchnorm2d") {
        std::size_t ch;
        double eps;
        expect("channels");
        ss >> ch;
        expect("eps");
        ss >> eps;
        LayerSpec l = LayerSpec::batchnorm2d(ch, eps);
        expect("gamma");
        l.gamma = blob.take(ss, {ch}, "bn gamma");
        expect("beta");
        l.beta = blob.take(ss, {ch}, "bn beta");
        expect("mean");
        l.running_mean = blob.take(ss, {ch}, "bn mean");
        expect("var");
        l.running_var = blob.take(ss, {ch}, "bn var");
        m.layers.push_back(std::move(l));
      } else if (kind == "maxpool2d") {
        std::size_t ph, pw;
        expect("pool");
        ss >> ph >> pw;
        m.layers.push_back(LayerSpec::maxpool2d(ph, pw));
      } else if (kind == "dense") {
        std::size_t inf, outf;
        expect("in");
        ss >> inf;
        expect("out");
        ss >> outf;
        LayerSpec l = LayerSpec::dense(inf, outf);
        expect("weight");
        l.weight = blob.take(ss, {outf, inf}, "dense weight");
        expect("bias");
        l.bias = blob.take(ss, {outf}, "dense bias");
        m.layers.push_back(std::move(l));
      } else if (kind == "relu") {
        m.layers.push_back(LayerSpec::relu());
      } else if (kind == "gap") {
        m.layers.push_back(LayerSpec::global_avg_pool());
      } else if (kind == "flatten") {
        m.layers.push_back(LayerSpec::flatten());
      } else {
        throw IoError("manifest: unknown layer kind '" + kind + "'");
      }
    } else if (key == "end") {
      break;
    } else {
      throw IoError("manifest: unknown key '" + key + "'");
    }
  }
  blob.check_no_overlap();
  if (m.layers.size() != declared_layers)
    throw IoError("manifest: declares " + std::to_string(declared_layers) + " layers, found " +
                  std::to_string(m.layers.size()));

  m.finalize();
  if (m.f_num() != declared_fnum)
    throw IoError("manifest: f_num " + std::to_string(declared_fnum) +
                  " does not match the conv channel total " + std::to_string(m.f_num()));
  if (m.num_classes != declared_classes)
    throw IoError("manifest: class count mismatch");
  std::size_t mi = 0;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (m.layers[li].kind != LayerKind::Conv2D) continue;
    const std::string& mask = mask_strings[mi++];
    const std::size_t base = m.gid_base_by_layer[li];
    for (std::size_t c = 0; c < mask.size(); ++c) m.alive[base + c] = mask[c] == '1' ? 1 : 0;
  }
  return m;
}

// --- dataset -----------------------------------------------------------------

inline void save_dataset(const Dataset& set, const std::string& prefix) {
  if (set.empty()) throw std::invalid_argument("save_dataset: empty dataset");
  const std::vector<std::size_t>& shape = set.front().image.shape;
  std::vector<double> values;
  values.reserve(set.size() * set.front().image.size());
  std::vector<std::int64_t> labels;
  labels.reserve(set.size());
  std::size_t max_label = 0;
  for (const LabeledImage& li : set) {
    if (li.image.shape != shape)
      throw std::invalid_argument("save_dataset: images disagree on shape");
    values.insert(values.end(), li.image.data.begin(), li.image.data.end());
    labels.push_back(static_cast<std::int64_t>(li.label));
    max_label = li.label > max_label ? li.label : max_label;
  }
  std::ostringstream mf;
  mf << "relprune-dataset " << io_detail::kFormatVersion << "\n";
  mf << "count " << set.size() << "\n";
  mf << "image_shape";
  for (std::size_t d : shape) mf << " " << d;
  mf << "\n";
  mf << "classes " << max_label + 1 << "\n";
  mf << "end\n";

  io_detail::write_f64_blob(prefix + ".blob", values);
  io_detail::write_i64_file(prefix + ".labels", labels);
  std::ofstream os(prefix + ".manifest", std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + prefix + ".manifest");
  os << mf.str();
  if (!os) throw IoError("write failed: " + prefix + ".manifest");
}

inline Dataset load_dataset(const std::string& prefix) {
  std::ifstream is(prefix + ".manifest", std::ios::binary);
  if (!is) throw IoError("cannot open: " + prefix + ".manifest");
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (!is || tag != "relprune-dataset")
    throw IoError("not a dataset manifest: " + prefix + ".manifest");
  if (version != io_detail::kFormatVersion)
    throw IoError("dataset manifest version mismatch: found " + std::to_string(version) +
                  ", expected " + std::to_string(io_detail::kFormatVersion));

  std::size_t count = 0;
  std::vector<std::size_t> shape;
  std::string key;
  while (is >> key) {
    if (key == "count") {
      is >> count;
    } else if (key == "image_shape") {
      std::string rest;
      std::getline(is, rest);
      std::istringstream ss(rest);
      std::size_t d;
      while (ss >> d) shape.push_back(d);
    } else if (key == "classes") {
      std::size_t ignored;
      is >> ignored;
    } else if (key == "end") {
      break;
    } else {
      throw IoError("manifest: unknown key '" + key + "'");
    }
  }
  if (count == 0) throw IoError("dataset is empty: " + prefix);
  if (shape.empty()) throw IoError("dataset manifest missing image_shape: " + prefix);

  const std::vector<double> values = io_detail::read_f64_blob(prefix + ".blob");
  const std::vector<std::int64_t> labels = io_detail::read_i64_file(prefix + ".labels");
  const std::size_t numel = Tensor::checked_numel(shape);
  if (values.size() != count * numel)
    throw IoError("dataset blob holds " + std::to_string(values.size()) + " values, expected " +
                  std::to_string(count * numel));
  if (labels.size() != count)
    throw IoError("dataset label count " + std::to_string(labels.size()) +
                  " does not match image count " + std::to_string(count));

  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img(shape, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i * numel),
                                          values.begin() +
                                              static_cast<std::ptrdiff_t>((i + 1) * numel)));
    if (labels[i] < 0) throw IoError("dataset contains a negative label");
    out.push_back({std::move(img), static_cast<std::size_t>(labels[i])});
  }
  return out;
}

}  // namespace relprune
