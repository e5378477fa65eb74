// Command-line front end: train, enhance, eval, ablate, gradcheck.
//
// Exit codes: 0 success, 1 partial failure or failed check, 2 usage or
// configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgn/mgn.hpp"

namespace fs = std::filesystem;
using namespace mgn;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kUsage = 2;
constexpr double kGradTolerance = 1e-3;

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

/// Creates `dir` and checks that a file can be written inside it.
bool ensure_writable_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) return false;
  const auto probe = fs::path(dir) / ".write-test";
  {
    std::ofstream f(probe);
    if (!f) return false;
  }
  fs::remove(probe, ec);
  return true;
}

void print_row(const LogRow& r, long total) {
  if (r.val_psnr) {
    std::fprintf(stderr, "step %ld/%ld  loss %.5f  val psnr %.3f dB  ssim %.4f\n", r.step, total, r.l_total, *r.val_psnr,
                 *r.val_ssim);
  } else if (r.step % 50 == 0) {
    std::fprintf(stderr, "step %ld/%ld  loss %.5f  lr %.3g\n", r.step, total, r.l_total, r.lr);
  }
}

int cmd_train(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  RunConfig cfg = config_or_default(config_path);
  if (seed) cfg.train.seed = *seed;
  if (!ensure_writable_dir(out)) {
    std::cerr << "error: cannot write to output directory '" << out << "'\n";
    return kUsage;
  }
  const auto data = make_synthetic_data(cfg.train);
  TrainOptions opt;
  opt.out_dir = out;
  const long total = cfg.train.total_steps;
  opt.on_row = [total](const LogRow& r) { print_row(r, total); };
  try {
    const auto res = train(cfg, data, opt);
    std::printf("fusion_mode=%s params=%zu baseline_psnr=%.4f best_val_psnr=%.4f (step %ld) final_val_psnr=%.4f final_val_ssim=%.4f\n",
                to_string(cfg.model.fusion_mode), param_count(res.model), res.baseline_val_psnr, res.best_val_psnr,
                res.best_step, res.final_val_psnr, res.final_val_ssim);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kPartial;
  }
  return kOk;
}

int cmd_enhance(const std::string& ckpt_path, const std::vector<std::string>& inputs, const std::string& out) {
  const auto ck = load_checkpoint(ckpt_path);
  if (!ensure_writable_dir(out)) {
    std::cerr << "error: cannot write to output directory '" << out << "'\n";
    return kUsage;
  }
  int failures = 0;
  for (const auto& in : inputs) {
    try {
      const auto img = read_ppm(in);
      const auto dst = fs::path(out) / fs::path(in).filename();
      write_ppm(dst.string(), enhance(ck.model, img));
      std::printf("%s -> %s\n", in.c_str(), dst.c_str());
    } catch (const std::exception& e) {
      std::cerr << "error: " << in << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures ? kPartial : kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& pairs_dir, const std::string& csv_path) {
  const auto ck = load_checkpoint(ckpt_path);
  const auto folder = load_paired_folder(pairs_dir);
  for (const auto& n : folder.unmatched) std::cerr << "unmatched: " << n << "\n";

  std::vector<SamplePair> pairs;
  for (const auto& p : folder.pairs) pairs.push_back(p.pair);
  const auto ev = evaluate(ck.model, pairs);

  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) {
    std::cerr << "error: cannot write '" << csv_path << "'\n";
    return kUsage;
  }
  csv << "image_id,psnr,ssim\n";
  char buf[512];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%.10f,%.10f\n", folder.pairs[i].name.c_str(), ev.psnr[i], ev.ssim[i]);
    csv << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.10f,%.10f\n", ev.mean_psnr, ev.mean_ssim);
  csv << buf;
  std::printf("pairs=%zu mean_psnr=%.4f mean_ssim=%.4f\n", pairs.size(), ev.mean_psnr, ev.mean_ssim);
  return folder.unmatched.empty() ? kOk : kPartial;
}

int cmd_ablate(const std::string& suite, const std::string& config_path, const std::string& out) {
  const RunConfig base = config_or_default(config_path);
  const auto variants = ablation_suite(suite, base);
  if (!ensure_writable_dir(out)) {
    std::cerr << "error: cannot write to output directory '" << out << "'\n";
    return kUsage;
  }
  const auto data = make_synthetic_data(base.train);
  const long total = base.train.total_steps;
  const auto rows = run_ablation(variants, data, out, [total](const std::string& name, const LogRow& r) {
    if (r.val_psnr) std::fprintf(stderr, "[%s] ", name.c_str());
    print_row(r, total);
  });
  const auto csv_path = fs::path(out) / ("ablation_" + suite + ".csv");
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  csv << ablation_csv_header();
  for (const auto& r : rows) csv << ablation_csv_row(suite, r);
  std::cout << ablation_csv_header();
  for (const auto& r : rows) std::cout << ablation_csv_row(suite, r);
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed) {
  const RunConfig cfg = config_or_default(config_path);
  BatteryOptions opt;
  opt.seed = seed;
  const auto rows = run_battery(cfg, opt);
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    const bool ok = r.max_rel_err < kGradTolerance;
    std::printf("%-4s %-40s max_rel_err=%.3e coords=%zu\n", ok ? "ok" : "FAIL", r.layer.c_str(), r.max_rel_err, r.coords);
    if (!ok) failed.push_back(r.layer);
  }
  if (!failed.empty()) {
    std::printf("gradcheck failed for %zu layer(s):", failed.size());
    for (const auto& f : failed) std::printf(" %s", f.c_str());
    std::printf("\n");
    return kPartial;
  }
  std::printf("gradcheck passed: %zu layers below %.0e\n", rows.size(), kGradTolerance);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Mutual guidance network: training, enhancement and evaluation"};
  app.require_subcommand(1, 1);

  std::string config, out, ckpt, pairs, csv, suite;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;

  auto* train_cmd = app.add_subcommand("train", "train on the synthetic dataset");
  train_cmd->add_option("--config", config, "JSON config (defaults when omitted)");
  train_cmd->add_option("--out", out, "output directory")->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "overrides the config seed");

  auto* enhance_cmd = app.add_subcommand("enhance", "enhance PPM images with a checkpoint");
  enhance_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  enhance_cmd->add_option("--in", inputs, "input PPM files")->required();
  enhance_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over a paired folder (x/ and gt/)");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--pairs", pairs, "folder holding x/ and gt/")->required();
  eval_cmd->add_option("--csv", csv, "per-image report")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train the variants of one ablation suite");
  ablate_cmd->add_option("--suite", suite, "fusion | partition | blocks | loss")->required();
  ablate_cmd->add_option("--config", config, "base JSON config");
  ablate_cmd->add_option("--out", out, "output directory")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  grad_cmd->add_option("--config", config, "JSON config");
  grad_cmd->add_option("--seed", seed, "seed for inputs and sampled coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(config, out, *train_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
    if (*enhance_cmd) return cmd_enhance(ckpt, inputs, out);
    if (*eval_cmd) return cmd_eval(ckpt, pairs, csv);
    if (*ablate_cmd) return cmd_ablate(suite, config, out);
    if (*grad_cmd) return cmd_gradcheck(config, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPartial;
  }
  return kUsage;
}
