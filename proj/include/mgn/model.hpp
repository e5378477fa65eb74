#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mgn/nn.hpp"
#include "mgn/params.hpp"

namespace mgn {

enum class FusionMode { mutual, g2l, l2g, concat };
enum class ResidualMode { c2f, plain };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::mutual: return "mutual";
    case FusionMode::g2l: return "g2l";
    case FusionMode::l2g: return "l2g";
    case FusionMode::concat: return "concat";
  }
  return "?";
}

inline const char* to_string(ResidualMode m) { return m == ResidualMode::c2f ? "c2f" : "plain"; }

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "mutual") return FusionMode::mutual;
  if (s == "g2l") return FusionMode::g2l;
  if (s == "l2g") return FusionMode::l2g;
  if (s == "concat") return FusionMode::concat;
  throw ConfigError("unknown fusion_mode '" + s + "' (expected mutual, g2l, l2g or concat)");
}

inline ResidualMode parse_residual_mode(const std::string& s) {
  if (s == "c2f") return ResidualMode::c2f;
  if (s == "plain") return ResidualMode::plain;
  throw ConfigError("unknown residual_mode '" + s + "' (expected c2f or plain)");
}

inline constexpr std::size_t kStages = 5;

struct ModelConfig {
  // 13 puts the default model at 414,369 parameters.
  int base_channels = 13;
  int token_grid = 8;
  int stages = static_cast<int>(kStages);
  int partitions = 8;
  double eps = 1e-6;
  FusionMode fusion_mode = FusionMode::mutual;
  ResidualMode residual_mode = ResidualMode::c2f;
  std::array<bool, kStages> block_mask{true, true, true, true, true};
  bool aux_supervision = true;
  int vit_dim = 64;
  int vit_heads = 4;
  int vit_mlp_ratio = 2;
  int rcab_reduction = 4;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
    };
    positive(base_channels, "base_channels");
    positive(token_grid, "token_grid");
    positive(partitions, "partitions");
    positive(vit_dim, "vit_dim");
    positive(vit_heads, "vit_heads");
    positive(vit_mlp_ratio, "vit_mlp_ratio");
    positive(rcab_reduction, "rcab_reduction");
    if (stages != static_cast<int>(kStages))
      throw ConfigError("stages must be 5 (the channel plan C,2C,4C,2C,C is fixed), got " + std::to_string(stages));
    if (partitions > 30) throw ConfigError("partitions must be at most 30, got " + std::to_string(partitions));
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (vit_dim % vit_heads != 0)
      throw ConfigError("vit_dim " + std::to_string(vit_dim) + " is not divisible by vit_heads " + std::to_string(vit_heads));
  }

  /// Channel width of interaction stage t (1-based): C, 2C, 4C, 2C, C.
  std::size_t stage_width(std::size_t t) const {
    static constexpr std::size_t mult[kStages] = {1, 2, 4, 2, 1};
    return mult[t - 1] * static_cast<std::size_t>(base_channels);
  }
};

template <class T>
struct Model {
  ModelConfig config;
  ParameterStore<T> params;

  /// Model sharing the given tensors (no copy), in build_model order.
  static Model from_tensors(const ModelConfig& cfg, const std::vector<std::string>& names,
                            const std::vector<BasicTensor<T>>& tensors) {
    Model m;
    m.config = cfg;
    for (std::size_t i = 0; i < names.size(); ++i) m.params.add(names[i], tensors[i]);
    return m;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    for (std::size_t i = 0; i < params.size(); ++i)
      m.params.add(params.names()[i], params.tensors()[i].template cast<U>());
    return m;
  }

  const BasicTensor<T>& operator[](const std::string& name) const { return params.get(name); }

  Conv2dParams<T> conv(const std::string& name, std::size_t stride = 1) const {
    const auto& w = params.get(name + ".weight");
    return {w, params.get(name + ".bias"), stride, w.dim(2) / 2};
  }
  LinearParams<T> linear(const std::string& name) const {
    return {params.get(name + ".weight"), params.get(name + ".bias")};
  }
  InstanceNormParams<T> instance_norm(const std::string& name) const {
    return {params.get(name + ".gamma"), params.get(name + ".beta"), 1e-5};
  }
  LayerNormParams<T> layer_norm(const std::string& name) const {
    return {params.get(name + ".gamma"), params.get(name + ".beta"), 1e-5};
  }
  RcabParams<T> rcab(const std::string& name) const {
    return {conv(name + ".conv1"), conv(name + ".conv2"), linear(name + ".squeeze"), linear(name + ".excite")};
  }
  VitBlockParams<T> vit() const {
    VitBlockParams<T> p;
    p.embed = linear("global.embed");
    p.pos = params.get("global.pos");
    p.norm1 = layer_norm("global.vit.norm1");
    p.attn = {linear("global.vit.attn.q"), linear("global.vit.attn.k"), linear("global.vit.attn.v"),
              linear("global.vit.attn.out"), static_cast<std::size_t>(config.vit_heads)};
    p.norm2 = layer_norm("global.vit.norm2");
    p.mlp1 = linear("global.vit.mlp1");
    p.mlp2 = linear("global.vit.mlp2");
    return p;
  }
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

class ModelBuilder {
 public:
  ModelBuilder(ParameterStore<float>& store, const Rng& rng) : store_(store), rng_(rng.child("init")) {}

  void conv(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k) {
    store_.add(name + ".weight", init::kaiming_uniform({c_out, c_in, k, k}, c_in * k * k, rng_.child(name)));
    store_.add(name + ".bias", Tensor::zeros({c_out}));
  }
  void linear(const std::string& name, std::size_t d_in, std::size_t d_out) {
    store_.add(name + ".weight", init::kaiming_uniform({d_out, d_in}, d_in, rng_.child(name)));
    store_.add(name + ".bias", Tensor::zeros({d_out}));
  }
  void norm(const std::string& name, std::size_t c) {
    store_.add(name + ".gamma", Tensor::ones({c}));
    store_.add(name + ".beta", Tensor::zeros({c}));
  }
  void rcab(const std::string& name, std::size_t c, std::size_t reduction) {
    const std::size_t hidden = std::max<std::size_t>(1, c / reduction);
    conv(name + ".conv1", c, c, 3);
    conv(name + ".conv2", c, c, 3);
    linear(name + ".squeeze", c, hidden);
    linear(name + ".excite", hidden, c);
  }
  void down_block(const std::string& name, std::size_t c, std::size_t reduction) {
    conv(name + ".conv1", c, c, 3);
    conv(name + ".conv2", c, 2 * c, 3);
    conv(name + ".conv3", 2 * c, 2 * c, 3);
    rcab(name + ".rcab", 2 * c, reduction);
    conv(name + ".conv4", 2 * c, 2 * c, 1);
  }
  void up_block(const std::string& name, std::size_t c, std::size_t reduction) {
    conv(name + ".conv1", c, 4 * c, 3);
    conv(name + ".conv2", c, c, 3);
    rcab(name + ".rcab", c, reduction);
    conv(name + ".conv3", c, c, 1);
    conv(name + ".proj", c, c / 2, 1);
  }
  void raw(const std::string& name, Tensor t) { store_.add(name, std::move(t)); }
  void fill(const std::string& name, float v) {
    for (auto& x : store_.get(name).mutable_data()) x = v;
  }
  Rng stream(const std::string& name) const { return rng_.child(name); }

 private:
  ParameterStore<float>& store_;
  Rng rng_;
};

}  // namespace detail

/// Allocates and initializes every parameter of the network. Convolution and
/// dense weights are Kaiming-uniform, biases zero, norms identity, positional
/// embedding N(0, 0.02). Each tensor draws from its own named child stream.
inline Model<float> build_model(const ModelConfig& cfg, const Rng& rng) {
  cfg.validate();
  Model<float> m;
  m.config = cfg;
  detail::ModelBuilder b(m.params, rng);
  const std::size_t C = static_cast<std::size_t>(cfg.base_channels);
  const std::size_t D = static_cast<std::size_t>(cfg.vit_dim);
  const std::size_t S = static_cast<std::size_t>(cfg.token_grid);
  const std::size_t r = static_cast<std::size_t>(cfg.rcab_reduction);

  // Transformer head.
  b.linear("global.embed", 3, D);
  b.raw("global.pos", init::normal({S * S, D}, 0.02, b.stream("global.pos")));
  b.norm("global.vit.norm1", D);
  for (const char* n : {"q", "k", "v", "out"}) b.linear(std::string("global.vit.attn.") + n, D, D);
  b.norm("global.vit.norm2", D);
  b.linear("global.vit.mlp1", D, D * static_cast<std::size_t>(cfg.vit_mlp_ratio));
  b.linear("global.vit.mlp2", D * static_cast<std::size_t>(cfg.vit_mlp_ratio), D);
  b.linear("global.head", D, C);

  // CNN head.
  b.conv("local.head.conv", 3, C, 3);
  b.norm("local.head.norm", C);

  // Global blocks follow the local channel plan.
  for (std::size_t t = 1; t <= kStages; ++t)
    b.linear("global.block" + std::to_string(t), t == 1 ? C : cfg.stage_width(t - 1), cfg.stage_width(t));

  // U-shaped local body.
  b.conv("local.block1.conv", C, C, 3);
  b.down_block("local.block2", C, r);
  b.down_block("local.block3", 2 * C, r);
  b.up_block("local.block4", 4 * C, r);
  b.up_block("local.block5", 2 * C, r);
  b.conv("local.block6.conv", C, C, 3);

  // Fusion between each (G_t, L_t) pair.
  for (std::size_t t = 1; t <= kStages; ++t) {
    const std::size_t w = cfg.stage_width(t);
    const std::string prefix = "fusion" + std::to_string(t);
    if (cfg.fusion_mode == FusionMode::concat) {
      b.conv(prefix + ".concat", 2 * w, w, 1);
    } else {
      for (const char* dir : {"g2l", "l2g"}) {
        for (const char* n : {"q", "k", "v"}) b.linear(prefix + "." + dir + "." + n, w, w);
        // Guidance weights start near 1; with zero bias the five multiplicative
        // stages shrink the features towards zero.
        b.fill(prefix + "." + dir + ".v.bias", 1.0f);
      }
    }
  }

  b.conv("head.residual", C, 3, 3);
  b.conv("head.weights", C, static_cast<std::size_t>(cfg.partitions), 3);
  b.linear("head.global_aux", C, 3);
  return m;
}

template <class T>
std::size_t param_count(const Model<T>& m) {
  return m.params.scalar_count();
}

// ---------------------------------------------------------------------------
// Heads

/// Pool to S x S, one transformer block over the S^2 tokens, mean over
/// tokens, FC to width C.
template <class T>
BasicTensor<T> global_head_forward(const Model<T>& m, const BasicTensor<T>& x,
                                   std::vector<BasicTensor<T>>* attn = nullptr) {
  const auto vit = m.vit();
  auto tokens = tokenize(adaptive_avg_pool2d(x, m.config.token_grid), vit);
  auto t = vit_block_forward(tokens, vit, attn);
  return fully_connected(mean(t, {0}), m.linear("global.head"));
}

template <class T>
BasicTensor<T> local_head_forward(const Model<T>& m, const BasicTensor<T>& x) {
  return relu(instance_norm2d(conv2d(x, m.conv("local.head.conv")), m.instance_norm("local.head.norm")));
}

template <class T>
BasicTensor<T> global_block_forward(const Model<T>& m, std::size_t t, const BasicTensor<T>& f) {
  return tanh(fully_connected(f, m.linear("global.block" + std::to_string(t))));
}

/// Down-sampling block: conv, strided conv, conv, RCAB, 1x1 conv.
template <class T>
BasicTensor<T> down_block_forward(const Model<T>& m, const std::string& name, const BasicTensor<T>& x) {
  auto h = relu(conv2d(x, m.conv(name + ".conv1")));
  h = relu(conv2d(h, m.conv(name + ".conv2", 2)));
  h = relu(conv2d(h, m.conv(name + ".conv3")));
  h = rcab_forward(h, m.rcab(name + ".rcab"));
  return conv2d(h, m.conv(name + ".conv4"));
}

/// Up-sampling block (expand, pixel shuffle, conv, RCAB, 1x1 conv), then a 1x1
/// projection halving the width and the additive encoder skip.
template <class T>
BasicTensor<T> up_block_forward(const Model<T>& m, const std::string& name, const BasicTensor<T>& x,
                                const BasicTensor<T>& skip) {
  auto h = relu(conv2d(x, m.conv(name + ".conv1")));
  h = pixel_shuffle(h, 2);
  h = relu(conv2d(h, m.conv(name + ".conv2")));
  h = rcab_forward(h, m.rcab(name + ".rcab"));
  h = conv2d(h, m.conv(name + ".conv3"));
  return add(conv2d(h, m.conv(name + ".proj")), skip);
}

// ---------------------------------------------------------------------------
// Mutual guidance

template <class T>
struct AttentionFcs {
  LinearParams<T> q, k, v;
};

/// softmax(q k^T / sqrt(C)) v with q = FC_q(f_i), k = FC_k(f_j), v = FC_v(f_j).
/// q k^T is the C x C outer product; softmax runs along its second axis.
template <class T>
BasicTensor<T> channel_attention(const BasicTensor<T>& f_i, const BasicTensor<T>& f_j, const AttentionFcs<T>& fc) {
  if (f_i.rank() != 1 || f_j.rank() != 1 || f_i.numel() != f_j.numel())
    throw DimensionError("channel_attention: widths differ " + shape_str(f_i.shape()) + " vs " + shape_str(f_j.shape()));
  const std::size_t c = f_i.numel();
  auto q = reshape(fully_connected(f_i, fc.q), {c, 1});
  auto k = reshape(fully_connected(f_j, fc.k), {1, c});
  auto v = reshape(fully_connected(f_j, fc.v), {c, 1});
  auto a = softmax(scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(c))), 1);
  return reshape(matmul(a, v), {c});
}

template <class T>
struct StageParams {
  AttentionFcs<T> g2l, l2g;
  Conv2dParams<T> concat;
};

template <class T>
StageParams<T> stage_params(const Model<T>& m, std::size_t t) {
  const std::string p = "fusion" + std::to_string(t);
  StageParams<T> s;
  if (m.config.fusion_mode == FusionMode::concat) {
    s.concat = m.conv(p + ".concat");
  } else {
    s.g2l = {m.linear(p + ".g2l.q"), m.linear(p + ".g2l.k"), m.linear(p + ".g2l.v")};
    s.l2g = {m.linear(p + ".l2g.q"), m.linear(p + ".l2g.k"), m.linear(p + ".l2g.v")};
  }
  return s;
}

/// Test and ablation hooks that pin intermediate quantities.
struct ForwardOverrides {
  bool unit_g2l = false;          // w_{g->l} forced to ones
  bool unit_l2g = false;          // w_{l->g} forced to ones
  bool unit_weight_maps = false;  // every C2F weight map forced to ones
};

template <class T>
struct GuidanceResult {
  BasicTensor<T> f_g;
  BasicTensor<T> F_l;
  BasicTensor<T> w_g2l;  // undefined when the direction is inactive
  BasicTensor<T> w_l2g;
};

template <class T>
GuidanceResult<T> mutual_guidance_step(const BasicTensor<T>& f_g, const BasicTensor<T>& F_l, const StageParams<T>& p,
                                       FusionMode mode, const ForwardOverrides& ov = {}) {
  if (F_l.rank() != 3 || f_g.rank() != 1 || F_l.dim(0) != f_g.numel())
    throw DimensionError("mutual_guidance_step: global width " + shape_str(f_g.shape()) + " does not match local map " +
                         shape_str(F_l.shape()));
  GuidanceResult<T> r{f_g, F_l, {}, {}};
  if (mode == FusionMode::concat) {
    auto stacked = concat<T>({F_l, broadcast_to(f_g, F_l.shape())}, 0);
    r.F_l = conv2d(stacked, p.concat);
    return r;
  }
  const auto f_l = global_avg_pool2d(F_l);
  const std::size_t c = f_g.numel();
  if (mode == FusionMode::mutual || mode == FusionMode::g2l) {
    r.w_g2l = ov.unit_g2l ? BasicTensor<T>::ones({c}) : channel_attention(f_l, f_g, p.g2l);
    r.F_l = mul(F_l, r.w_g2l);
  }
  if (mode == FusionMode::mutual || mode == FusionMode::l2g) {
    r.w_l2g = ov.unit_l2g ? BasicTensor<T>::ones({c}) : channel_attention(f_g, f_l, p.l2g);
    r.f_g = mul(f_g, r.w_l2g);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine residual integration

template <class T>
struct ResidualDecomposition {
  BasicTensor<T> residual;                 // R_x [3, H, W]
  std::vector<BasicTensor<T>> pieces;      // r^k = R_x / 2^k, k = 1..K
  BasicTensor<T> rest;                     // r^h = R_x / 2^K
  std::vector<BasicTensor<T>> weights;     // w^k [1, H, W], empty until assigned
};

template <class T>
ResidualDecomposition<T> residual_divide(const BasicTensor<T>& residual, int k) {
  if (k < 1) throw ConfigError("residual_divide: partition count must be at least 1, got " + std::to_string(k));
  ResidualDecomposition<T> d;
  d.residual = residual;
  for (int i = 1; i <= k; ++i) d.pieces.push_back(scale(residual, std::ldexp(1.0, -i)));
  d.rest = scale(residual, std::ldexp(1.0, -k));
  return d;
}

/// Conv(C -> K) then 2 * sigmoid, split into K maps of shape [1, H, W] in [0, 2].
template <class T>
std::vector<BasicTensor<T>> weight_maps(const BasicTensor<T>& features, const Conv2dParams<T>& head, int k) {
  auto maps = scale(sigmoid(conv2d(features, head)), 2.0);
  if (maps.dim(0) != static_cast<std::size_t>(k))
    throw DimensionError("weight_maps: head produces " + std::to_string(maps.dim(0)) + " maps, expected " + std::to_string(k));
  std::vector<BasicTensor<T>> out;
  for (int i = 0; i < k; ++i) out.push_back(narrow(maps, 0, static_cast<std::size_t>(i), 1));
  return out;
}

/// y = sum_k r^k w^k + r^h + x, accumulated fine-to-coarse.
template <class T>
BasicTensor<T> residual_integrate(const BasicTensor<T>& x, const ResidualDecomposition<T>& d) {
  if (d.weights.size() != d.pieces.size())
    throw DimensionError("residual_integrate: " + std::to_string(d.pieces.size()) + " pieces but " +
                         std::to_string(d.weights.size()) + " weight maps");
  auto acc = d.rest;
  for (std::size_t i = d.pieces.size(); i-- > 0;) acc = add(acc, mul(d.pieces[i], d.weights[i]));
  return add(x, acc);
}

// ---------------------------------------------------------------------------
// Global auxiliary output

/// Per-channel power curve (x + eps)^gamma_c.
template <class T>
BasicTensor<T> gamma_curve(const BasicTensor<T>& x, const BasicTensor<T>& gamma, double eps) {
  return pow(add_scalar(x, eps), gamma);
}

/// gamma = softplus(FC(f_g)) > 0, one exponent per color channel.
template <class T>
BasicTensor<T> global_aux(const BasicTensor<T>& x, const BasicTensor<T>& f_g, const LinearParams<T>& fc, double eps) {
  return gamma_curve(x, softplus(fully_connected(f_g, fc)), eps);
}

// ---------------------------------------------------------------------------
// Full forward pass

template <class T>
struct ForwardOutputs {
  BasicTensor<T> y;         // enhanced image (not clamped)
  BasicTensor<T> residual;  // R_x
  BasicTensor<T> x_g;       // global auxiliary image
  BasicTensor<T> x_l;       // x + R_x
  std::vector<BasicTensor<T>> weight_maps;
  std::array<BasicTensor<T>, kStages> w_g2l;
  std::array<BasicTensor<T>, kStages> w_l2g;
};

inline void check_input_extent(const Shape& s) {
  if (s.size() != 3 || s[0] != 3)
    throw DimensionError("forward: expected an RGB image [3,H,W], got " + shape_str(s));
  if (s[1] < 8 || s[2] < 8 || s[1] % 4 != 0 || s[2] % 4 != 0)
    throw DimensionError("forward: spatial size " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                         " must be at least 8 and divisible by 4; pad the image reflectively first");
}

template <class T>
ForwardOutputs<T> forward(const Model<T>& m, const BasicTensor<T>& x, const ForwardOverrides& ov = {}) {
  check_input_extent(x.shape());
  const auto& cfg = m.config;
  ForwardOutputs<T> out;

  auto f = global_head_forward(m, x);
  auto F = local_head_forward(m, x);
  BasicTensor<T> skip1, skip2;
  for (std::size_t t = 1; t <= kStages; ++t) {
    f = global_block_forward(m, t, f);
    const std::string name = "local.block" + std::to_string(t);
    switch (t) {
      case 1: F = relu(conv2d(F, m.conv(name + ".conv"))); break;
      case 2:
      case 3: F = down_block_forward(m, name, F); break;
      case 4: F = up_block_forward(m, name, F, skip2); break;
      case 5: F = up_block_forward(m, name, F, skip1); break;
    }
    if (cfg.block_mask[t - 1]) {
      auto g = mutual_guidance_step(f, F, stage_params(m, t), cfg.fusion_mode, ov);
      f = g.f_g;
      F = g.F_l;
      out.w_g2l[t - 1] = g.w_g2l;
      out.w_l2g[t - 1] = g.w_l2g;
    }
    if (t == 1) skip1 = F;
    if (t == 2) skip2 = F;
  }
  F = relu(conv2d(F, m.conv("local.block6.conv")));

  out.residual = conv2d(F, m.conv("head.residual"));
  if (cfg.residual_mode == ResidualMode::c2f) {
    auto d = residual_divide(out.residual, cfg.partitions);
    if (ov.unit_weight_maps) {
      d.weights.assign(d.pieces.size(), BasicTensor<T>::ones({1, x.dim(1), x.dim(2)}));
    } else {
      d.weights = weight_maps(F, m.conv("head.weights"), cfg.partitions);
    }
    out.weight_maps = d.weights;
    out.y = residual_integrate(x, d);
  } else {
    out.y = add(x, out.residual);
  }
  out.x_l = add(x, out.residual);
  out.x_g = global_aux(x, f, m.linear("head.global_aux"), cfg.eps);
  return out;
}

}  // namespace mgn
