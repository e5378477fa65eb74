#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mgn/config.hpp"
#include "mgn/data.hpp"
#include "mgn/inference.hpp"
#include "mgn/io.hpp"
#include "mgn/model.hpp"

namespace mgn {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Loss

template <class T = float>
struct LossTerms {
  BasicTensor<T> total;
  double l_f = 0.0;  // L1(y, y_gt)
  double l_g = 0.0;  // L1(x_g, y_gt)
  double l_l = 0.0;  // L1(x_l, y_gt)
};

template <class T>
BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("l1_loss: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

/// L_f + alpha_g L_g + alpha_l L_l. A zero weight drops the term from the graph.
template <class T>
LossTerms<T> total_loss(const BasicTensor<T>& y, const BasicTensor<T>& x_g, const BasicTensor<T>& x_l,
                        const BasicTensor<T>& y_gt, const LossWeights& w) {
  LossTerms<T> t;
  BasicTensor<T> lf = l1_loss(y, y_gt), lg = l1_loss(x_g, y_gt), ll = l1_loss(x_l, y_gt);
  t.l_f = lf.item();
  t.l_g = lg.item();
  t.l_l = ll.item();
  t.total = lf;
  if (w.alpha_g != 0.0) t.total = add(t.total, scale(lg, w.alpha_g));
  if (w.alpha_l != 0.0) t.total = add(t.total, scale(ll, w.alpha_l));
  return t;
}

/// Weights actually applied, with auxiliary supervision switched off or on.
inline LossWeights effective_weights(const RunConfig& c) {
  return c.model.aux_supervision ? c.loss : LossWeights{0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

inline double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be at least 1");
  if (step < 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  return lr0 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
}

struct AdamOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<std::string> names, std::vector<Tensor> params, AdamOptions opt = {})
      : names_(std::move(names)), params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// One bias-corrected update from the gradients currently stored on the
  /// parameters. Throws before touching anything if a gradient is not finite.
  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto g = params_[i].grad();
      for (std::size_t j = 0; j < g.size(); ++j)
        if (!std::isfinite(g[j]))
          throw TrainingDiverged("non-finite gradient in '" + names_[i] + "' at element " + std::to_string(j) +
                                 " (step " + std::to_string(t_ + 1) + ")");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto g = params_[i].grad();
      auto p = params_[i].mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
        const double mh = m[j] / c1, vh = v[j] / c2;
        p[j] = static_cast<float>(p[j] - lr * mh / (std::sqrt(vh) + opt_.eps));
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Global L2 norm of all stored gradients.
inline double grad_norm(const std::vector<Tensor>& params) {
  double acc = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (float g : p.grad()) acc += static_cast<double>(g) * g;
  return std::sqrt(acc);
}

/// Rescales gradients in place so their global norm is at most max_norm.
inline void clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double n = grad_norm(params);
  if (!(n > max_norm)) return;
  const auto s = static_cast<float>(max_norm / n);
  for (auto& p : params)
    if (p.has_grad())
      for (auto& g : p.impl()->grad) g *= s;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRow {
  long step = 0;
  double lr = 0.0;
  double l_total = 0.0, l_f = 0.0, l_g = 0.0, l_l = 0.0;
  std::optional<double> val_psnr, val_ssim;
};

inline std::string format_log_row(const LogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,", r.step, r.lr, r.l_total, r.l_f, r.l_g, r.l_l);
  std::string s = buf;
  if (r.val_psnr) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", *r.val_psnr, *r.val_ssim);
    s += buf;
  } else {
    s += ",";
  }
  return s;
}

inline std::string log_header(const RunConfig& c) {
  return std::string("# fusion_mode=") + to_string(c.model.fusion_mode) + "\n" +
         "step,lr,L_total,L_f,L_g,L_l,val_psnr,val_ssim\n";
}

struct TrainData {
  std::vector<SamplePair> train, val;
};

/// The synthetic train/validation split derived from the config seed.
inline TrainData make_synthetic_data(const TrainConfig& t) {
  const Rng root(t.seed);
  return {synth_dataset(static_cast<std::size_t>(t.train_pairs), static_cast<std::size_t>(t.image_size), root.child("train-data")),
          synth_dataset(static_cast<std::size_t>(t.val_pairs), static_cast<std::size_t>(t.image_size), root.child("val-data"))};
}

struct TrainOptions {
  std::string out_dir;  // empty: keep nothing on disk
  std::function<void(const LogRow&)> on_row;
};

struct TrainResult {
  Model<float> model;  // final parameters
  std::vector<LogRow> rows;
  double best_val_psnr = -1.0;
  long best_step = 0;
  double final_val_psnr = 0.0, final_val_ssim = 0.0;
  double baseline_val_psnr = 0.0;  // PSNR(x, y_gt) on the validation split
  std::string log_csv;
};

/// Mini-batch Adam on the total loss with a cosine schedule. Validates every
/// val_every steps and at the end; with an output directory, writes log.csv,
/// best.ckpt and final.ckpt there. A non-finite loss or gradient writes
/// last_good.ckpt and rethrows.
inline TrainResult train(const RunConfig& cfg, const TrainData& data, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw ConfigError("train: dataset is empty");
  const auto& tc = cfg.train;
  const Rng root(tc.seed);

  TrainResult res;
  res.model = build_model(cfg.model, root);
  check_expected_params(cfg, param_count(res.model));
  auto& params = res.model.params.tensors();
  for (auto& p : params) p.set_requires_grad();
  Adam adam(res.model.params.names(), params, {tc.beta1, tc.beta2, tc.adam_eps});
  const LossWeights w = effective_weights(cfg);

  Rng batch_rng = root.child("batches");
  Rng aug_rng = root.child("augment");

  const bool to_disk = !opt.out_dir.empty();
  namespace fs = std::filesystem;
  std::ofstream log;
  if (to_disk) {
    fs::create_directories(opt.out_dir);
    log.open(fs::path(opt.out_dir) / "log.csv", std::ios::binary | std::ios::trunc);
    if (!log) throw FormatError("cannot write log.csv under '" + opt.out_dir + "'");
  }
  std::ostringstream csv;
  csv << log_header(cfg);
  if (to_disk) log << log_header(cfg) << std::flush;

  {
    NoGradGuard ng;
    for (const auto& p : data.val) res.baseline_val_psnr += psnr(p.x, p.y_gt);
    res.baseline_val_psnr /= static_cast<double>(data.val.size());
  }

  const long total = tc.total_steps;
  const auto crop_size = static_cast<std::size_t>(tc.crop);
  for (long step = 0; step < total; ++step) {
    const double lr = cosine_lr(step, total, tc.lr0);
    LogRow row;
    row.step = step + 1;
    row.lr = lr;

    res.model.params.zero_grad();
    Tensor batch_loss;
    const double inv_b = 1.0 / tc.batch_size;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(batch_rng.uniform_int(data.train.size()));
      SamplePair s = data.train[idx];
      if (s.x.dim(1) != crop_size || s.x.dim(2) != crop_size) s = random_crop(s, crop_size, batch_rng);
      s = augment(s, aug_rng);
      auto out = forward(res.model, s.x);
      auto terms = total_loss(out.y, out.x_g, out.x_l, s.y_gt, w);
      auto scaled = scale(terms.total, inv_b);
      batch_loss = b == 0 ? scaled : add(batch_loss, scaled);
      row.l_f += terms.l_f * inv_b;
      row.l_g += terms.l_g * inv_b;
      row.l_l += terms.l_l * inv_b;
    }
    row.l_total = batch_loss.item();

    auto bail = [&](const std::string& why) {
      if (to_disk) save_checkpoint((fs::path(opt.out_dir) / "last_good.ckpt").string(), res.model, cfg);
      throw TrainingDiverged(why);
    };
    if (!std::isfinite(row.l_total)) bail("loss became non-finite at step " + std::to_string(step + 1));
    batch_loss.backward();
    if (tc.clip_grad_norm > 0.0) clip_grad_norm(params, tc.clip_grad_norm);
    try {
      adam.step(lr);
    } catch (const TrainingDiverged& e) {
      bail(e.what());
    }

    if ((step + 1) % tc.val_every == 0 || step + 1 == total) {
      const auto ev = evaluate(res.model, data.val);
      row.val_psnr = ev.mean_psnr;
      row.val_ssim = ev.mean_ssim;
      res.final_val_psnr = ev.mean_psnr;
      res.final_val_ssim = ev.mean_ssim;
      if (ev.mean_psnr > res.best_val_psnr) {
        res.best_val_psnr = ev.mean_psnr;
        res.best_step = step + 1;
        if (to_disk) save_checkpoint((fs::path(opt.out_dir) / "best.ckpt").string(), res.model, cfg);
      }
    }
    const std::string line = format_log_row(row) + "\n";
    csv << line;
    if (to_disk) log << line << std::flush;
    res.rows.push_back(row);
    if (opt.on_row) opt.on_row(row);
  }
  for (auto& p : params) p.zero_grad();
  if (to_disk) save_checkpoint((fs::path(opt.out_dir) / "final.ckpt").string(), res.model, cfg);
  res.log_csv = csv.str();
  return res;
}

}  // namespace mgn
