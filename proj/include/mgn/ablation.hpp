#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mgn/train.hpp"

namespace mgn {

struct Variant {
  std::string name;
  RunConfig config;
};

/// Variants of `base` in table order. Every variant keeps the base seed and
/// step budget. Throws ConfigError for an unknown suite.
inline std::vector<Variant> ablation_suite(const std::string& suite, const RunConfig& base) {
  std::vector<Variant> out;
  auto add = [&](std::string name, auto edit) {
    RunConfig c = base;
    // Parameter pins belong to the base architecture only.
    c.expected_params.reset();
    edit(c);
    out.push_back({std::move(name), c});
  };
  if (suite == "fusion") {
    for (auto m : {FusionMode::concat, FusionMode::l2g, FusionMode::g2l, FusionMode::mutual})
      add(to_string(m), [m](RunConfig& c) { c.model.fusion_mode = m; });
  } else if (suite == "partition") {
    for (int k : {1, 2, 4, 8, 12, 16})
      add("K=" + std::to_string(k), [k](RunConfig& c) {
        c.model.partitions = k;
        c.model.residual_mode = ResidualMode::c2f;
      });
  } else if (suite == "blocks") {
    add("Model-O", [](RunConfig& c) { c.model.block_mask = {false, false, false, false, false}; });
    const char* single[] = {"Model-A", "Model-B", "Model-C", "Model-D", "Model-E"};
    for (std::size_t t = 0; t < kStages; ++t)
      add(single[t], [t](RunConfig& c) {
        c.model.block_mask = {false, false, false, false, false};
        c.model.block_mask[t] = true;
      });
    // Cumulative: t1, t1..t2, ..., t1..t5 (A then F to I).
    const char* cumulative[] = {"Model-A", "Model-F", "Model-G", "Model-H", "Model-I"};
    for (std::size_t t = 0; t < kStages; ++t)
      add(std::string(cumulative[t]) + (t == 0 ? "-cumulative" : ""), [t](RunConfig& c) {
        for (std::size_t i = 0; i < kStages; ++i) c.model.block_mask[i] = i <= t;
      });
  } else if (suite == "loss") {
    const double ag = base.loss.alpha_g, al = base.loss.alpha_l;
    add("Model-A", [](RunConfig& c) { c.loss = {0.0, 0.0}; });
    add("Model-B", [ag](RunConfig& c) { c.loss = {ag, 0.0}; });
    add("Model-C", [al](RunConfig& c) { c.loss = {0.0, al}; });
    add("Model-D", [ag, al](RunConfig& c) { c.loss = {ag, al}; });
    for (auto& v : out) v.config.model.aux_supervision = true;
  } else {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected fusion, partition, blocks or loss)");
  }
  return out;
}

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  double best_val_psnr = 0.0;
  double final_val_psnr = 0.0;
  double final_val_ssim = 0.0;
  double baseline_psnr = 0.0;
};

inline std::string ablation_csv_header() {
  return "suite,variant,params,best_val_psnr,final_val_psnr,final_val_ssim,baseline_psnr\n";
}

inline std::string ablation_csv_row(const std::string& suite, const AblationRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f\n", suite.c_str(), r.variant.c_str(), r.params,
                r.best_val_psnr, r.final_val_psnr, r.final_val_ssim, r.baseline_psnr);
  return buf;
}

/// Trains every variant on the same data. With `out_dir`, each variant's log
/// and checkpoints go to out_dir/<variant>/.
inline std::vector<AblationRow> run_ablation(const std::vector<Variant>& variants, const TrainData& data,
                                             const std::string& out_dir = {},
                                             const std::function<void(const std::string&, const LogRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    TrainOptions opt;
    if (!out_dir.empty()) opt.out_dir = (std::filesystem::path(out_dir) / v.name).string();
    if (on_row) opt.on_row = [&](const LogRow& r) { on_row(v.name, r); };
    const auto res = train(v.config, data, opt);
    rows.push_back({v.name, param_count(res.model), res.best_val_psnr, res.final_val_psnr, res.final_val_ssim,
                    res.baseline_val_psnr});
  }
  return rows;
}

}  // namespace mgn
