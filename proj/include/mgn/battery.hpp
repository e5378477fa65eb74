#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mgn/gradcheck.hpp"
#include "mgn/model.hpp"
#include "mgn/train.hpp"

namespace mgn {

struct BatteryRow {
  std::string layer;
  double max_rel_err = 0.0;
  std::size_t coords = 0;
};

struct BatteryOptions {
  std::size_t size = 16;  // spatial extent of the image-shaped inputs
  std::uint64_t seed = 0;
  // Small steps keep the central difference on one side of every ReLU kink.
  double eps = 1e-6;
  std::size_t coords_per_tensor = 6;
};

namespace detail {

inline Tensor random_tensor(const Shape& s, Rng rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(shape_numel(s));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(s, std::move(v));
}

/// A fixed tensor usable from both the 32-bit and 64-bit evaluation.
struct Fixed {
  Tensor f;
  Tensor64 d;
  explicit Fixed(Tensor t) : f(t), d(t.cast<double>()) {}
  template <class T>
  const BasicTensor<T>& get() const {
    if constexpr (std::is_same_v<T, float>) return f;
    else return d;
  }
};

/// sum(out * proj): a scalar with a generic, non-symmetric dependence on out.
template <class T>
BasicTensor<T> project(const BasicTensor<T>& out, const Fixed& proj) {
  return sum(mul(out, proj.get<T>()));
}

struct Case {
  std::string name;
  std::vector<Tensor> params;
  // Returns the scalar for either precision.
  std::function<Tensor(const std::vector<Tensor>&)> f32;
  std::function<Tensor64(const std::vector<Tensor64>&)> f64;
};

/// Wraps a generic lambda taking the parameter list into the two typed closures.
template <class G>
Case make_case(std::string name, std::vector<Tensor> params, G g) {
  return {std::move(name), std::move(params), [g](const std::vector<Tensor>& p) { return g(p); },
          [g](const std::vector<Tensor64>& p) { return g(p); }};
}

struct Dispatch {
  const Case* c;
  Tensor operator()(const std::vector<Tensor>& p) const { return c->f32(p); }
  Tensor64 operator()(const std::vector<Tensor64>& p) const { return c->f64(p); }
};

}  // namespace detail

/// Cases for each layer type in isolation.
inline std::vector<detail::Case> layer_cases(const BatteryOptions& o) {
  using namespace detail;
  const Rng root = Rng(o.seed).child("gradcheck");
  const std::size_t n = o.size;
  std::vector<Case> cases;
  auto rnd = [&](const char* key, const Shape& s, double lo = -1.0, double hi = 1.0) {
    return random_tensor(s, root.child(key), lo, hi);
  };

  {
    Fixed proj(rnd("conv.proj", {4, n, n}));
    cases.push_back(make_case("conv2d", {rnd("conv.x", {3, n, n}), rnd("conv.w", {4, 3, 3, 3}), rnd("conv.b", {4})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(conv2d(p[0], Conv2dParams<T>{p[1], p[2], 1, 1}), proj);
                              }));
  }
  {
    Fixed proj(rnd("conv_s2.proj", {4, n / 2, n / 2}));
    cases.push_back(make_case("conv2d_stride2",
                              {rnd("conv_s2.x", {3, n, n}), rnd("conv_s2.w", {4, 3, 3, 3}), rnd("conv_s2.b", {4})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(conv2d(p[0], Conv2dParams<T>{p[1], p[2], 2, 1}), proj);
                              }));
  }
  {
    Fixed proj(rnd("conv1.proj", {5, n, n}));
    cases.push_back(make_case("conv2d_1x1", {rnd("conv1.x", {3, n, n}), rnd("conv1.w", {5, 3, 1, 1}), rnd("conv1.b", {5})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(conv2d(p[0], Conv2dParams<T>{p[1], p[2], 1, 0}), proj);
                              }));
  }
  {
    Fixed proj(rnd("in.proj", {4, n, n}));
    cases.push_back(make_case("instance_norm2d", {rnd("in.x", {4, n, n}), rnd("in.g", {4}), rnd("in.b", {4})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(instance_norm2d(p[0], InstanceNormParams<T>{p[1], p[2], 1e-5}), proj);
                              }));
  }
  {
    Fixed proj(rnd("ln.proj", {6, 8}));
    cases.push_back(make_case("layer_norm", {rnd("ln.x", {6, 8}), rnd("ln.g", {8}), rnd("ln.b", {8})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(layer_norm(p[0], LayerNormParams<T>{p[1], p[2], 1e-5}), proj);
                              }));
  }
  {
    Fixed proj(rnd("fc.proj", {5, 7}));
    cases.push_back(make_case("fully_connected", {rnd("fc.x", {5, 6}), rnd("fc.w", {7, 6}), rnd("fc.b", {7})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(fully_connected(p[0], p[1], p[2]), proj);
                              }));
  }
  {
    Fixed proj(rnd("pool.proj", {3, 4, 4}));
    cases.push_back(make_case("adaptive_avg_pool2d", {rnd("pool.x", {3, n + 2, n - 1})}, [proj](const auto& p) {
      using T = scalar_of_t<decltype(p)>;
      return project<T>(adaptive_avg_pool2d(p[0], 4), proj);
    }));
  }
  {
    Fixed proj(rnd("ps.proj", {2, n, n}));
    cases.push_back(make_case("pixel_shuffle", {rnd("ps.x", {8, n / 2, n / 2})}, [proj](const auto& p) {
      using T = scalar_of_t<decltype(p)>;
      return project<T>(pixel_shuffle(p[0], 2), proj);
    }));
  }
  {
    const std::size_t c = 4;
    Fixed proj(rnd("rcab.proj", {c, n, n}));
    cases.push_back(make_case(
        "rcab",
        {rnd("rcab.x", {c, n, n}), rnd("rcab.w1", {c, c, 3, 3}, -0.5, 0.5), rnd("rcab.b1", {c}),
         rnd("rcab.w2", {c, c, 3, 3}, -0.5, 0.5), rnd("rcab.b2", {c}), rnd("rcab.ws", {1, c}), rnd("rcab.bs", {1}),
         rnd("rcab.we", {c, 1}), rnd("rcab.be", {c})},
        [proj](const auto& p) {
          using T = scalar_of_t<decltype(p)>;
          RcabParams<T> r{{p[1], p[2], 1, 1}, {p[3], p[4], 1, 1}, {p[5], p[6]}, {p[7], p[8]}};
          return project<T>(rcab_forward(p[0], r), proj);
        }));
  }
  {
    const std::size_t tokens = 6, d = 8;
    Fixed proj(rnd("mha.proj", {tokens, d}));
    std::vector<Tensor> ps{rnd("mha.x", {tokens, d})};
    for (const char* k : {"q", "k", "v", "o"}) {
      ps.push_back(rnd((std::string("mha.w") + k).c_str(), {d, d}, -0.5, 0.5));
      ps.push_back(rnd((std::string("mha.b") + k).c_str(), {d}));
    }
    cases.push_back(make_case("multi_head_attention", ps, [proj](const auto& p) {
      using T = scalar_of_t<decltype(p)>;
      AttentionParams<T> a{{p[1], p[2]}, {p[3], p[4]}, {p[5], p[6]}, {p[7], p[8]}, 2};
      return project<T>(multi_head_attention(p[0], a).out, proj);
    }));
  }
  {
    const std::size_t s = 3, d = 8;
    Fixed proj(rnd("vit.proj", {s * s, d}));
    std::vector<Tensor> ps{rnd("vit.img", {3, s, s}, 0.0, 1.0), rnd("vit.we", {d, 3}), rnd("vit.be", {d}),
                           rnd("vit.pos", {s * s, d}, -0.1, 0.1), rnd("vit.g1", {d}), rnd("vit.n1", {d})};
    for (const char* k : {"q", "k", "v", "o"}) {
      ps.push_back(rnd((std::string("vit.w") + k).c_str(), {d, d}, -0.5, 0.5));
      ps.push_back(rnd((std::string("vit.b") + k).c_str(), {d}));
    }
    for (const char* k : {"g2", "n2"}) ps.push_back(rnd((std::string("vit.") + k).c_str(), {d}));
    ps.push_back(rnd("vit.wm1", {2 * d, d}, -0.5, 0.5));
    ps.push_back(rnd("vit.bm1", {2 * d}));
    ps.push_back(rnd("vit.wm2", {d, 2 * d}, -0.5, 0.5));
    ps.push_back(rnd("vit.bm2", {d}));
    cases.push_back(make_case("vit_block", ps, [proj](const auto& p) {
      using T = scalar_of_t<decltype(p)>;
      VitBlockParams<T> v;
      v.embed = {p[1], p[2]};
      v.pos = p[3];
      v.norm1 = {p[4], p[5], 1e-5};
      v.attn = {{p[6], p[7]}, {p[8], p[9]}, {p[10], p[11]}, {p[12], p[13]}, 2};
      v.norm2 = {p[14], p[15], 1e-5};
      v.mlp1 = {p[16], p[17]};
      v.mlp2 = {p[18], p[19]};
      return project<T>(vit_block_forward(tokenize(p[0], v), v), proj);
    }));
  }
  {
    const std::size_t c = 5;
    Fixed proj(rnd("ca.proj", {c}));
    cases.push_back(make_case("channel_attention",
                              {rnd("ca.fi", {c}), rnd("ca.fj", {c}), rnd("ca.wq", {c, c}), rnd("ca.bq", {c}),
                               rnd("ca.wk", {c, c}), rnd("ca.bk", {c}), rnd("ca.wv", {c, c}), rnd("ca.bv", {c})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                AttentionFcs<T> fc{{p[2], p[3]}, {p[4], p[5]}, {p[6], p[7]}};
                                return project<T>(channel_attention(p[0], p[1], fc), proj);
                              }));
  }
  {
    const std::size_t c = 4;
    Fixed pf(rnd("mg.projf", {c})), pF(rnd("mg.projF", {c, n, n}));
    std::vector<Tensor> ps{rnd("mg.f", {c}), rnd("mg.F", {c, n, n})};
    for (const char* k : {"g2l.q", "g2l.k", "g2l.v", "l2g.q", "l2g.k", "l2g.v"}) {
      ps.push_back(rnd((std::string("mg.w") + k).c_str(), {c, c}));
      ps.push_back(rnd((std::string("mg.b") + k).c_str(), {c}));
    }
    cases.push_back(make_case("mutual_guidance", ps, [pf, pF](const auto& p) {
      using T = scalar_of_t<decltype(p)>;
      StageParams<T> s;
      s.g2l = {{p[2], p[3]}, {p[4], p[5]}, {p[6], p[7]}};
      s.l2g = {{p[8], p[9]}, {p[10], p[11]}, {p[12], p[13]}};
      auto g = mutual_guidance_step(p[0], p[1], s, FusionMode::mutual);
      return add(project<T>(g.f_g, pf), project<T>(g.F_l, pF));
    }));
  }
  {
    const std::size_t c = 4;
    Fixed proj(rnd("cc.proj", {c, n, n}));
    cases.push_back(make_case("concat_fusion",
                              {rnd("cc.f", {c}), rnd("cc.F", {c, n, n}), rnd("cc.w", {c, 2 * c, 1, 1}), rnd("cc.b", {c})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                StageParams<T> s;
                                s.concat = {p[2], p[3], 1, 0};
                                return project<T>(mutual_guidance_step(p[0], p[1], s, FusionMode::concat).F_l, proj);
                              }));
  }
  {
    const int k = 4;
    Fixed proj(rnd("c2f.proj", {3, n, n}));
    Fixed x(rnd("c2f.x", {3, n, n}, 0.0, 1.0));
    cases.push_back(make_case("c2f_integration",
                              {rnd("c2f.r", {3, n, n}), rnd("c2f.F", {5, n, n}), rnd("c2f.w", {4, 5, 3, 3}, -0.3, 0.3),
                               rnd("c2f.b", {4})},
                              [proj, x, k](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                auto d = residual_divide(p[0], k);
                                d.weights = weight_maps(p[1], Conv2dParams<T>{p[2], p[3], 1, 1}, k);
                                return project<T>(residual_integrate(x.get<T>(), d), proj);
                              }));
  }
  {
    Fixed proj(rnd("aux.proj", {3, n, n}));
    cases.push_back(make_case("global_aux",
                              {rnd("aux.x", {3, n, n}, 0.05, 1.0), rnd("aux.f", {6}), rnd("aux.w", {3, 6}), rnd("aux.b", {3})},
                              [proj](const auto& p) {
                                using T = scalar_of_t<decltype(p)>;
                                return project<T>(global_aux(p[0], p[1], LinearParams<T>{p[2], p[3]}, 1e-6), proj);
                              }));
  }
  return cases;
}

/// Groups parameter names into layers by dropping the trailing field
/// (".weight", ".bias", ".gamma", ".beta").
inline std::string layer_of(const std::string& param) {
  for (const char* suffix : {".weight", ".bias", ".gamma", ".beta"}) {
    const std::string s = suffix;
    if (param.size() > s.size() && param.compare(param.size() - s.size(), s.size(), s) == 0)
      return param.substr(0, param.size() - s.size());
  }
  return param;
}

/// Full forward pass plus the total loss on a size x size image, checked with
/// respect to every model parameter; one row per parameterized layer.
inline std::vector<BatteryRow> model_rows(const RunConfig& cfg, const BatteryOptions& o) {
  using namespace detail;
  const Rng root = Rng(o.seed).child("gradcheck");
  const auto model = build_model(cfg.model, root.child("model"));
  const Fixed x(random_tensor({3, o.size, o.size}, root.child("model.x"), 0.0, 1.0));
  const Fixed gt(random_tensor({3, o.size, o.size}, root.child("model.gt"), 0.0, 1.0));
  const auto names = model.params.names();
  const auto mc = cfg.model;
  const LossWeights w = effective_weights(cfg);
  auto g = [&](const auto& p) {
    using T = scalar_of_t<decltype(p)>;
    const auto m = Model<T>::from_tensors(mc, names, p);
    const auto out = forward(m, x.get<T>());
    return total_loss(out.y, out.x_g, out.x_l, gt.get<T>(), w).total;
  };
  Case c = make_case("model", model.params.tensors(), g);
  GradCheckOptions go;
  go.eps = o.eps;
  go.coords_per_tensor = o.coords_per_tensor;
  go.seed = o.seed;
  const auto r = grad_check(Dispatch{&c}, c.params, go);

  std::vector<BatteryRow> rows;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto layer = "model/" + layer_of(names[i]);
    auto [it, fresh] = index.emplace(layer, rows.size());
    if (fresh) rows.push_back({layer, 0.0, 0});
    auto& row = rows[it->second];
    row.max_rel_err = std::max(row.max_rel_err, r.per_param[i]);
    row.coords += std::min(o.coords_per_tensor, c.params[i].numel());
  }
  return rows;
}

/// Every isolated layer case followed by the full-model rows.
inline std::vector<BatteryRow> run_battery(const RunConfig& cfg, const BatteryOptions& o = {}) {
  std::vector<BatteryRow> rows;
  GradCheckOptions go;
  go.eps = o.eps;
  go.coords_per_tensor = o.coords_per_tensor;
  go.seed = o.seed;
  for (const auto& c : layer_cases(o)) {
    const auto r = grad_check(detail::Dispatch{&c}, c.params, go);
    rows.push_back({c.name, r.max_rel_err, r.coords_checked});
  }
  for (auto& r : model_rows(cfg, o)) rows.push_back(std::move(r));
  return rows;
}

}  // namespace mgn
