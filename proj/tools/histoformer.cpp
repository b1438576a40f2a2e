// histoformer: train, infer, gradcheck and bench entry points.
//
// Exit status: 0 success, 1 configuration/validation/I-O error, 2 numeric
// failure (non-finite values or a failed gradient check).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "histo/bench.hpp"
#include "histo/checkpoint.hpp"
#include "histo/data_synth.hpp"
#include "histo/gradcheck_suite.hpp"
#include "histo/metrics.hpp"
#include "histo/ppm.hpp"
#include "histo/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

int cmd_train(const std::string& config_path, const std::string& resume) {
  const auto cfg = histo::load_train_config(config_path);
  const auto result = histo::train<float>(cfg, resume, [](const std::string& line) { std::cout << line << std::endl; });
  std::fprintf(stderr, "checkpoint %s written; %.1f s\n", result.checkpoint.c_str(), result.seconds);
  return kExitOk;
}

int cmd_infer(const std::string& ckpt, const std::vector<std::string>& inputs, const std::string& out_dir,
              const std::vector<std::string>& gts) {
  if (!gts.empty() && gts.size() != inputs.size())
    throw histo::ConfigError("--gt needs one file per --in (" + std::to_string(inputs.size()) + "), got " +
                             std::to_string(gts.size()));
  const auto model = histo::load_checkpoint<float>(ckpt);
  std::filesystem::create_directories(out_dir);
  double sum_psnr = 0, sum_ssim = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto img = histo::read_ppm<float>(inputs[i]);
    const auto padded = histo::reflect_pad_to_multiple(img, 8);
    auto restored = model.infer(padded);
    if (!restored.all_finite()) throw histo::NumericError("non-finite output for " + inputs[i]);
    restored = histo::crop(restored, 0, 0, img.dim(1), img.dim(2));
    char prefix[16];
    std::snprintf(prefix, sizeof(prefix), "%04zu_", i);
    const auto out_path =
        (std::filesystem::path(out_dir) / (prefix + std::filesystem::path(inputs[i]).stem().string() + ".ppm")).string();
    histo::write_ppm(restored, out_path);
    std::string line = "image=" + inputs[i] + " out=" + out_path;
    if (!gts.empty()) {
      const auto gt = histo::read_ppm<float>(gts[i]);
      if (gt.shape() != img.shape()) throw histo::DimensionError("ground truth size differs for " + gts[i]);
      const double p = histo::psnr(restored, gt), s = histo::ssim(restored, gt);
      sum_psnr += p;
      sum_ssim += s;
      line += " psnr=" + histo::format_fixed("%.4f", p) + " ssim=" + histo::format_fixed("%.6f", s);
    }
    std::cout << line << std::endl;
  }
  if (!gts.empty()) {
    const double n = static_cast<double>(inputs.size());
    std::cout << "mean psnr=" << histo::format_fixed("%.4f", sum_psnr / n)
              << " ssim=" << histo::format_fixed("%.6f", sum_ssim / n) << std::endl;
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& scope_name, bool f64) {
  const auto scope = histo::parse_grad_scope(scope_name);
  int failed = 0;
  double worst = 0, seconds = 0;
  const auto reports = histo::run_gradcheck(scope, f64);
  for (const auto& r : reports) {
    failed += r.passed() ? 0 : 1;
    worst = std::max(worst, r.result.max_rel_error);
    seconds += r.seconds;
    std::printf("%s %-26s max_rel_err=%.3e tol=%.0e coords=%lld unstable=%lld\n", r.passed() ? "PASS" : "FAIL",
                r.name.c_str(), r.result.max_rel_error, r.tolerance, static_cast<long long>(r.result.coords_checked),
                static_cast<long long>(r.result.unstable_coords));
  }
  std::printf("gradcheck scope=%s precision=%s cases=%zu failed=%d max_rel_err=%.3e seconds=%.1f\n",
              scope_name.c_str(), f64 ? "f64" : "f32", reports.size(), failed, worst, seconds);
  return failed == 0 ? kExitOk : kExitNumeric;
}

int cmd_bench(const std::string& spec) {
  const auto grid = histo::parse_bench_grid(spec);
  std::printf("%-28s %6s %12s %12s\n", "op", "size", "median_ms", "peak_rss_mb");
  const auto rep = histo::run_bench(grid, [](const histo::BenchRow& r) {
    std::printf("%-28s %6lld %12.4f %12.1f\n", r.name.c_str(), static_cast<long long>(r.size), r.median_ms,
                r.peak_rss_mb);
    std::fflush(stdout);
  });
  std::printf("attention_slope=%.3f (time vs H*W, log-log)\n", rep.attention_slope);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Histogram transformer for adverse-weather image restoration"};
  app.require_subcommand(1);

  std::string config, resume;
  auto* train = app.add_subcommand("train", "train a model from a key = value config file");
  train->add_option("--config", config, "config file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  std::string ckpt, out_dir;
  std::vector<std::string> inputs, gts;
  auto* infer = app.add_subcommand("infer", "restore PPM images with a trained checkpoint");
  infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
  infer->add_option("--in", inputs, "input PPM files")->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_option("--gt", gts, "ground-truth PPM files, one per input");

  std::string scope;
  bool f64 = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--scope", scope, "ops, dhsa, dgff, htb or model")->required();
  gradcheck->add_flag("--f64", f64, "analytic gradients in double precision (default: single)");

  std::string grid = "16,32,64";
  auto* bench = app.add_subcommand("bench", "time every primitive and block over a size grid");
  bench->add_option("--grid", grid, "sizes[,..][:c=C][:b=B][:h=HEADS][:r=REPEATS]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(config, resume);
    if (*infer) return cmd_infer(ckpt, inputs, out_dir, gts);
    if (*gradcheck) return cmd_gradcheck(scope, f64);
    if (*bench) return cmd_bench(grid);
  } catch (const histo::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const histo::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
