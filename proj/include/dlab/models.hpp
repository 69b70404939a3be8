#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlab/error.hpp"
#include "dlab/ops.hpp"
#include "dlab/optim.hpp"
#include "dlab/random.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

enum class BlockStyle { modified, plain };

inline const char* to_string(BlockStyle s) { return s == BlockStyle::modified ? "modified" : "plain"; }

inline BlockStyle parse_block_style(const std::string& s) {
  if (s == "modified") return BlockStyle::modified;
  if (s == "plain") return BlockStyle::plain;
  throw ConfigError("unknown block style '" + s + "' (expected modified|plain)");
}

/// U-Net generator layout. Blocks are numbered 1..depth (contraction),
/// depth+1 (bottleneck), depth+2..2*depth+1 (expansion).
struct GeneratorConfig {
  Index window_length = 256;
  Index in_channels = 6;
  Index num_classes = 12;
  Index depth = 4;
  Index base_filters = 32;
  Index kernel_size = 3;
  BlockStyle block_style = BlockStyle::modified;
  double dropout_rate = 0.2;
  std::optional<int> dropout_block = 2;

  Index block_count() const { return 2 * depth + 1; }

  void validate() const {
    if (depth < 1) throw ConfigError("generator: depth must be >= 1");
    if (window_length < 1 || window_length % (Index{1} << depth) != 0) {
      throw ConfigError("generator: window length " + std::to_string(window_length) +
                        " is not divisible by 2^" + std::to_string(depth));
    }
    if (in_channels < 1 || num_classes < 2) {
      throw ConfigError("generator: need >= 1 input channel and >= 2 classes");
    }
    if (base_filters < 1 || kernel_size < 1) {
      throw ConfigError("generator: base_filters and kernel_size must be >= 1");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ConfigError("generator: dropout rate must be in [0, 1)");
    }
    if (dropout_block && (*dropout_block < 1 || *dropout_block > block_count())) {
      throw ConfigError("generator: dropout block " + std::to_string(*dropout_block) +
                        " outside 1.." + std::to_string(block_count()));
    }
  }
};

struct DiscriminatorConfig {
  Index window_length = 256;
  Index in_channels = 6;
  Index num_classes = 12;
  std::vector<Index> filters = {32, 64, 128};
  Index kernel_size = 3;
  Index pool_size = 2;

  Index patch_count() const {
    Index p = window_length;
    for (std::size_t i = 0; i < filters.size(); ++i) p /= pool_size;
    return p;
  }

  void validate() const {
    if (filters.empty()) throw ConfigError("discriminator: at least one block required");
    if (pool_size < 1 || kernel_size < 1) {
      throw ConfigError("discriminator: kernel and pool sizes must be >= 1");
    }
    Index t = window_length;
    for (std::size_t i = 0; i < filters.size(); ++i) {
      if (t % pool_size != 0) {
        throw ConfigError("discriminator: window length " + std::to_string(window_length) +
                          " not divisible by pool^blocks");
      }
      t /= pool_size;
    }
    if (in_channels < 1 || num_classes < 2) {
      throw ConfigError("discriminator: need >= 1 input channel and >= 2 classes");
    }
  }
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  /// Train mode: whether batch-norm running statistics absorb this batch.
  bool update_stats = true;
  /// Required for train-mode dropout.
  Rng* rng = nullptr;
};

/// One row of the structural dump.
struct LayerInfo {
  std::string name;
  std::string type;
  Shape output;  // (T, C) per sample
  Index parameters = 0;
};

inline std::string format_layers(const std::vector<LayerInfo>& layers) {
  std::ostringstream os;
  Index total = 0;
  for (const auto& l : layers) {
    os << l.name << '\t' << l.type << '\t' << shape_string(l.output) << '\t' << l.parameters << '\n';
    total += l.parameters;
  }
  os << "total\t\t\t" << total << '\n';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct Conv {
  Tensor<Scalar> weight, bias;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return conv_time(x, weight, bias, Padding::same);
  }
};

template <typename Scalar>
struct Norm {
  Tensor<Scalar> gamma, beta, running_mean, running_var;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, const ForwardOptions& o) const {
    BatchNormOptions<Scalar> bn;
    bn.update_running = o.update_stats;
    return batch_norm(x, gamma, beta, o.mode, running_mean, running_var, bn);
  }
};

template <typename Scalar>
struct Act {
  Tensor<Scalar> slope;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return prelu(x, slope); }
};

/// Registers layers into a ParamSet while recording the structural dump.
template <typename Scalar>
class Builder {
 public:
  Builder(ParamSet<Scalar>& params, std::vector<LayerInfo>& layers, std::uint64_t seed)
      : params_(params), layers_(layers), rng_(seed) {}

  Conv<Scalar> conv(const std::string& name, Index k, Index cin, Index cout, Index t) {
    const double limit = std::sqrt(6.0 / static_cast<double>(k * cin));
    Array<Scalar> w(k * cin * cout);
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(uniform(rng_, -limit, limit));
    Conv<Scalar> c{params_.add_parameter(name + ".weight", {k, cin, cout}, std::move(w)),
                   params_.add_parameter(name + ".bias", {cout}, Array<Scalar>::Zero(cout))};
    layers_.push_back({name, "conv" + std::to_string(k), {t, cout}, k * cin * cout + cout});
    return c;
  }

  Norm<Scalar> norm(const std::string& name, Index c, Index t) {
    Norm<Scalar> n{params_.add_parameter(name + ".gamma", {c}, Array<Scalar>::Ones(c)),
                   params_.add_parameter(name + ".beta", {c}, Array<Scalar>::Zero(c)),
                   params_.add_buffer(name + ".running_mean", {c}, Array<Scalar>::Zero(c)),
                   params_.add_buffer(name + ".running_var", {c}, Array<Scalar>::Ones(c))};
    layers_.push_back({name, "batch_norm", {t, c}, 2 * c});
    return n;
  }

  Act<Scalar> act(const std::string& name, Index c, Index t) {
    Act<Scalar> a{params_.add_parameter(name + ".slope", {c}, Array<Scalar>::Constant(c, Scalar(0.25)))};
    layers_.push_back({name, "prelu", {t, c}, c});
    return a;
  }

  void note(const std::string& name, const std::string& type, Index t, Index c) {
    layers_.push_back({name, type, {t, c}, 0});
  }

 private:
  ParamSet<Scalar>& params_;
  std::vector<LayerInfo>& layers_;
  Rng rng_;
};

}  // namespace detail

/// Modified U-Net over [B, T, C] windows producing per-frame class
/// probabilities [B, T, K].
///
/// Modified contraction block: (conv k -> BN -> PReLU) x2, concatenate the
/// block input with that output, 1x1 conv back to the block's filter count,
/// optional spatial dropout, then max-pool 2. Expansion blocks upsample x2,
/// concatenate the matching contraction output and run the same block body.
/// Plain blocks drop the batch norm and the intra-block skip + 1x1 conv.
template <typename Scalar>
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::Builder<Scalar> b(params_, layers_, seed);
    Index t = cfg_.window_length;
    Index cin = cfg_.in_channels;
    int number = 1;
    for (Index level = 0; level < cfg_.depth; ++level, ++number) {
      const Index f = cfg_.base_filters << level;
      blocks_.push_back(make_block(b, number, cin, f, t));
      b.note("block" + std::to_string(number) + ".pool", "max_pool2", t / 2, f);
      cin = f;
      t /= 2;
    }
    const Index fb = cfg_.base_filters << cfg_.depth;
    blocks_.push_back(make_block(b, number++, cin, fb, t));
    cin = fb;
    for (Index level = cfg_.depth - 1; level >= 0; --level, ++number) {
      const Index f = cfg_.base_filters << level;
      t *= 2;
      b.note("block" + std::to_string(number) + ".upsample", "upsample2", t, cin);
      b.note("block" + std::to_string(number) + ".concat", "concat_skip", t, cin + f);
      blocks_.push_back(make_block(b, number, cin + f, f, t));
      cin = f;
    }
    head_ = b.conv("head", 1, cin, cfg_.num_classes, t);
    b.note("head.softmax", "softmax", t, cfg_.num_classes);
  }

  // Parameters are shared handles; a copy would alias them.
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  /// x: [B, window_length, in_channels] -> probabilities [B, window_length, num_classes].
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const ForwardOptions& opts) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.window_length || x.dim(2) != cfg_.in_channels) {
      throw ShapeError("generator: expected input (B," + std::to_string(cfg_.window_length) + "," +
                       std::to_string(cfg_.in_channels) + "), got " + shape_string(x.shape()));
    }
    std::vector<Tensor<Scalar>> skips;
    Tensor<Scalar> h = x;
    std::size_t i = 0;
    for (Index level = 0; level < cfg_.depth; ++level, ++i) {
      h = run_block(blocks_[i], h, opts);
      skips.push_back(h);
      h = max_pool_time(h, 2);
    }
    h = run_block(blocks_[i++], h, opts);
    for (Index level = cfg_.depth - 1; level >= 0; --level, ++i) {
      h = concat_channels(upsample_time(h, 2), skips[static_cast<std::size_t>(level)]);
      h = run_block(blocks_[i], h, opts);
    }
    return softmax_over_classes(head_(h));
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::string structure() const { return format_layers(layers_); }

 private:
  struct Block {
    detail::Conv<Scalar> conv1, conv2;
    std::optional<detail::Norm<Scalar>> norm1, norm2;
    detail::Act<Scalar> act1, act2;
    std::optional<detail::Conv<Scalar>> fuse;
    bool dropout = false;
  };

  Block make_block(detail::Builder<Scalar>& b, int number, Index cin, Index f, Index t) {
    const std::string p = "block" + std::to_string(number);
    const bool modified = cfg_.block_style == BlockStyle::modified;
    Block blk;
    blk.conv1 = b.conv(p + ".conv1", cfg_.kernel_size, cin, f, t);
    if (modified) blk.norm1 = b.norm(p + ".bn1", f, t);
    blk.act1 = b.act(p + ".prelu1", f, t);
    blk.conv2 = b.conv(p + ".conv2", cfg_.kernel_size, f, f, t);
    if (modified) blk.norm2 = b.norm(p + ".bn2", f, t);
    blk.act2 = b.act(p + ".prelu2", f, t);
    if (modified) {
      b.note(p + ".skip", "concat_input", t, cin + f);
      blk.fuse = b.conv(p + ".fuse", 1, cin + f, f, t);
    }
    blk.dropout = cfg_.dropout_block && *cfg_.dropout_block == number && cfg_.dropout_rate > 0.0;
    if (blk.dropout) b.note(p + ".dropout", "spatial_dropout", t, f);
    return blk;
  }

  Tensor<Scalar> run_block(const Block& blk, const Tensor<Scalar>& in,
                           const ForwardOptions& opts) const {
    Tensor<Scalar> h = blk.conv1(in);
    if (blk.norm1) h = (*blk.norm1)(h, opts);
    h = blk.act1(h);
    h = blk.conv2(h);
    if (blk.norm2) h = (*blk.norm2)(h, opts);
    h = blk.act2(h);
    if (blk.fuse) h = (*blk.fuse)(concat_channels(in, h));
    if (blk.dropout) h = spatial_dropout(h, cfg_.dropout_rate, opts.mode, opts.rng);
    return h;
  }

  GeneratorConfig cfg_;
  ParamSet<Scalar> params_;
  std::vector<LayerInfo> layers_;
  std::vector<Block> blocks_;
  detail::Conv<Scalar> head_;
};

/// Patch discriminator scoring (motion window, label map) pairs.
///
/// The motion input is projected to K channels by a 1x1 conv, concatenated
/// with the K-channel label map, passed through contraction blocks
/// (conv -> BN -> PReLU -> pool) and a 1x1 conv + sigmoid head. Output:
/// [B, P] probabilities with P = T / pool^blocks.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::Builder<Scalar> b(params_, layers_, seed);
    Index t = cfg_.window_length;
    const Index k = cfg_.num_classes;
    project_ = b.conv("project", 1, cfg_.in_channels, k, t);
    b.note("concat_labels", "concat", t, 2 * k);
    Index cin = 2 * k;
    for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      const Index f = cfg_.filters[i];
      Block blk{b.conv(p + ".conv", cfg_.kernel_size, cin, f, t), b.norm(p + ".bn", f, t),
                b.act(p + ".prelu", f, t)};
      t /= cfg_.pool_size;
      b.note(p + ".pool", "max_pool" + std::to_string(cfg_.pool_size), t, f);
      blocks_.push_back(blk);
      cin = f;
    }
    head_ = b.conv("head", 1, cin, 1, t);
    b.note("head.sigmoid", "sigmoid", t, 1);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& labels,
                         const ForwardOptions& opts) const {
    if (x.rank() != 3 || labels.rank() != 3 || x.dim(0) != labels.dim(0) ||
        x.dim(1) != labels.dim(1)) {
      throw ShapeError("discriminator: motion " + shape_string(x.shape()) + " and label map " +
                       shape_string(labels.shape()) + " do not pair up");
    }
    if (x.dim(1) != cfg_.window_length || x.dim(2) != cfg_.in_channels ||
        labels.dim(2) != cfg_.num_classes) {
      throw ShapeError("discriminator: inputs do not match configuration");
    }
    Tensor<Scalar> h = concat_channels(project_(x), labels);
    for (const auto& blk : blocks_) {
      h = max_pool_time(blk.act(blk.norm(blk.conv(h), opts)), cfg_.pool_size);
    }
    h = sigmoid(head_(h));
    return reshape(h, {h.dim(0), h.dim(1)});
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::string structure() const { return format_layers(layers_); }

 private:
  struct Block {
    detail::Conv<Scalar> conv;
    detail::Norm<Scalar> norm;
    detail::Act<Scalar> act;
  };

  DiscriminatorConfig cfg_;
  ParamSet<Scalar> params_;
  std::vector<LayerInfo> layers_;
  detail::Conv<Scalar> project_;
  std::vector<Block> blocks_;
  detail::Conv<Scalar> head_;
};

template <typename Scalar>
Generator<Scalar> build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  return Generator<Scalar>(cfg, seed);
}

template <typename Scalar>
Discriminator<Scalar> build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  return Discriminator<Scalar>(cfg, seed);
}

}  // namespace dlab
