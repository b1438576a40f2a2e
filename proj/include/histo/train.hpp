#pragma once

// Desk-scale training loop: synthetic pairs, AdamW with cosine annealing,
// periodic validation, checkpoints and a line-oriented metrics log.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "histo/backbone.hpp"
#include "histo/checkpoint.hpp"
#include "histo/data_synth.hpp"
#include "histo/losses.hpp"
#include "histo/metrics.hpp"
#include "histo/optim.hpp"

namespace histo {

struct TrainConfig {
  std::string model = "tiny";  // tiny | full
  std::int64_t iterations = 500;
  std::int64_t batch = 4;
  std::int64_t patch = 64;
  double lr_init = 3e-4;
  double lr_final = 1e-6;
  std::int64_t warm_iters = -1;  // -1: 92/300 of the run
  double weight_decay = 1e-4;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::int64_t train_pairs = 200;
  std::int64_t val_pairs = 32;
  std::int64_t image_size = 96;  // synthetic training image side; crops of `patch` are drawn from it
  std::int64_t eval_every = 100;
  std::int64_t log_every = 10;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::string checkpoint = "histoformer.ckpt";
  std::string log = "";  // metrics log file; empty: stdout only
  std::string train_dir = "";  // optional `<root>/{clean,degraded}` instead of synthetic pairs
  std::string val_dir = "";
  bool two_stage = false;  // first half at patch 48, then `patch`
  std::int64_t threads = 0;  // 0: hardware concurrency

  std::int64_t effective_warm_iters() const { return warm_iters >= 0 ? warm_iters : iterations * 92 / 300; }

  LrSchedule schedule() const { return {iterations, effective_warm_iters(), lr_init, lr_final}; }

  ModelConfig model_config() const {
    if (model == "tiny") return ModelConfig::tiny();
    if (model == "full") return ModelConfig::full();
    throw ConfigError("unknown model '" + model + "' (expected tiny or full)");
  }

  std::int64_t patch_at(std::int64_t iter) const { return two_stage && iter < iterations / 2 ? 48 : patch; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (iterations <= 0) fail("iterations must be > 0");
    if (batch <= 0) fail("batch must be > 0");
    if (patch <= 0 || patch % 8 != 0) fail("patch must be a positive multiple of 8");
    if (two_stage && patch < 48) fail("two_stage needs patch >= 48");
    if (image_size < patch) fail("image_size must be >= patch");
    if (!(lr_init > 0) || lr_final < 0 || lr_final > lr_init) fail("need 0 <= lr_final <= lr_init, lr_init > 0");
    if (warm_iters >= iterations) fail("warm_iters must be < iterations");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (train_pairs <= 0 || val_pairs <= 0) fail("train_pairs and val_pairs must be > 0");
    if (eval_every < 0 || log_every <= 0 || checkpoint_every < 0) fail("bad logging cadence");
    if (threads < 0) fail("threads must be >= 0");
    LossConfig{alpha}.validate();
    model_config().validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class U>
U parse_value(const std::string& v, std::size_t line, const std::string& key) {
  std::istringstream is(v);
  U out{};
  is >> out;
  if (!is || !(is >> std::ws).eof())
    throw ConfigError("line " + std::to_string(line) + ": invalid value '" + v + "' for '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& v, std::size_t line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("line " + std::to_string(line) + ": invalid boolean '" + v + "' for '" + key + "'");
}

}  // namespace detail

// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::map<std::string, std::function<void(const std::string&, std::size_t, const std::string&)>> setters;
  auto i64 = [&](std::int64_t& f) {
    return [&f](const std::string& v, std::size_t l, const std::string& k) { f = detail::parse_value<std::int64_t>(v, l, k); };
  };
  auto f64 = [&](double& f) {
    return [&f](const std::string& v, std::size_t l, const std::string& k) { f = detail::parse_value<double>(v, l, k); };
  };
  auto str = [&](std::string& f) { return [&f](const std::string& v, std::size_t, const std::string&) { f = v; }; };
  setters["model"] = str(c.model);
  setters["iterations"] = i64(c.iterations);
  setters["batch"] = i64(c.batch);
  setters["patch"] = i64(c.patch);
  setters["lr_init"] = f64(c.lr_init);
  setters["lr_final"] = f64(c.lr_final);
  setters["warm_iters"] = i64(c.warm_iters);
  setters["weight_decay"] = f64(c.weight_decay);
  setters["alpha"] = f64(c.alpha);
  setters["seed"] = [&c](const std::string& v, std::size_t l, const std::string& k) {
    c.seed = detail::parse_value<std::uint64_t>(v, l, k);
  };
  setters["train_pairs"] = i64(c.train_pairs);
  setters["val_pairs"] = i64(c.val_pairs);
  setters["image_size"] = i64(c.image_size);
  setters["eval_every"] = i64(c.eval_every);
  setters["log_every"] = i64(c.log_every);
  setters["checkpoint_every"] = i64(c.checkpoint_every);
  setters["checkpoint"] = str(c.checkpoint);
  setters["log"] = str(c.log);
  setters["train_dir"] = str(c.train_dir);
  setters["val_dir"] = str(c.val_dir);
  setters["two_stage"] = [&c](const std::string& v, std::size_t l, const std::string& k) { c.two_stage = detail::parse_bool(v, l, k); };
  setters["threads"] = i64(c.threads);

  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string s = detail::trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError("line " + std::to_string(line) + ": missing value for '" + key + "'");
    it->second(value, line, key);
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

inline std::int64_t resolve_threads(std::int64_t requested) {
  if (requested > 0) return requested;
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::thread::hardware_concurrency()));
}

// Runs fn(i) for i in [0, n) over up to `threads` workers.
inline void parallel_for(std::int64_t n, std::int64_t threads, const std::function<void(std::int64_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (std::int64_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::int64_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// splitmix64 finalizer over a seed pair.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class T>
std::vector<ImagePair<T>> synthesize_pairs(std::int64_t count, std::int64_t size, std::uint64_t base_seed,
                                           std::int64_t threads) {
  std::vector<ImagePair<T>> pairs(static_cast<std::size_t>(count));
  parallel_for(count, threads, [&](std::int64_t i) {
    pairs[static_cast<std::size_t>(i)] = make_pair<T>(size, mix_seed(base_seed, static_cast<std::uint64_t>(i)));
  });
  return pairs;
}

struct ValidationStats {
  double psnr = 0;
  double ssim = 0;
  double rho = 0;
  double baseline_psnr = 0;
  double baseline_ssim = 0;
};

template <class T>
ValidationStats validate_model(const Histoformer<T>& model, const std::vector<ImagePair<T>>& pairs, std::int64_t threads) {
  std::vector<ValidationStats> per(pairs.size());
  parallel_for(static_cast<std::int64_t>(pairs.size()), threads, [&](std::int64_t i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    const Tensor<T> out = model.infer(p.degraded);
    auto& s = per[static_cast<std::size_t>(i)];
    s.psnr = psnr(out, p.clean);
    s.ssim = ssim(out, p.clean);
    s.rho = pearson_value(out, p.clean);
    s.baseline_psnr = psnr(p.degraded, p.clean);
    s.baseline_ssim = ssim(p.degraded, p.clean);
  });
  ValidationStats m;
  for (const auto& s : per) {
    m.psnr += s.psnr;
    m.ssim += s.ssim;
    m.rho += s.rho;
    m.baseline_psnr += s.baseline_psnr;
    m.baseline_ssim += s.baseline_ssim;
  }
  const double n = static_cast<double>(per.size());
  m.psnr /= n;
  m.ssim /= n;
  m.rho /= n;
  m.baseline_psnr /= n;
  m.baseline_ssim /= n;
  return m;
}

// Fixed-capacity FIFO between the batch producer and the training loop.
template <class U>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(capacity) {}
  void push(U v) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(v));
    not_empty_.notify_one();
  }
  std::optional<U> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    U v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }
  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t cap_;
  std::deque<U> q_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

template <class T>
struct Batch {
  std::int64_t iter = 0;
  std::vector<ImagePair<T>> samples;
};

// The batch for an iteration is a pure function of (seed, iteration), so
// resumed runs see the same data as uninterrupted ones.
template <class T>
Batch<T> make_batch(const TrainConfig& cfg, const std::vector<ImagePair<T>>& train, std::int64_t iter) {
  SplitRng rng(mix_seed(cfg.seed ^ 0x5bd1e995ull, static_cast<std::uint64_t>(iter)));
  Batch<T> b;
  b.iter = iter;
  const auto size = cfg.patch_at(iter);
  for (std::int64_t i = 0; i < cfg.batch; ++i) {
    const auto& pair = train[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(train.size())))];
    b.samples.push_back(augment_flips(sample_pair_patch(pair, size, rng), rng));
  }
  return b;
}

struct TrainResult {
  std::vector<std::string> log;
  std::vector<double> losses;
  ValidationStats final_val;
  double seconds = 0;
  std::string checkpoint;
};

inline std::string format_fixed(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// Trains from scratch, or from `resume` (a checkpoint with optimizer state).
// Every emitted metrics line goes to `sink` and, if configured, the log file.
template <class T = float>
TrainResult train(const TrainConfig& cfg, const std::string& resume = "",
                  const std::function<void(const std::string&)>& sink = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto threads = resolve_threads(cfg.threads);

  std::vector<ImagePair<T>> train_set, val_set;
  if (!cfg.train_dir.empty()) {
    train_set = read_pair_dir<T>(cfg.train_dir);
    for (const auto& p : train_set)
      if (p.clean.dim(1) < cfg.patch || p.clean.dim(2) < cfg.patch)
        throw ConfigError("training image smaller than patch in " + cfg.train_dir);
  } else {
    train_set = synthesize_pairs<T>(cfg.train_pairs, cfg.image_size, mix_seed(cfg.seed, 1), threads);
  }
  if (!cfg.val_dir.empty())
    val_set = read_pair_dir<T>(cfg.val_dir);
  else
    val_set = synthesize_pairs<T>(cfg.val_pairs, cfg.patch, mix_seed(cfg.seed, 2), threads);

  std::optional<Histoformer<T>> model;
  if (!resume.empty()) {
    model.emplace(load_checkpoint<T>(resume));
    if (!(model->config() == cfg.model_config())) throw ConfigError("checkpoint model does not match config '" + cfg.model + "'");
  } else {
    model.emplace(cfg.model_config(), mix_seed(cfg.seed, 3));
  }
  auto& store = model->store();
  const std::int64_t start = store.step;
  if (start >= cfg.iterations) throw ConfigError("checkpoint already at iteration " + std::to_string(start));

  TrainResult result;
  std::ofstream log_file;
  if (!cfg.log.empty()) {
    log_file.open(cfg.log, start > 0 ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open log: " + cfg.log);
  }
  auto emit = [&](const std::string& line) {
    result.log.push_back(line);
    if (log_file) log_file << line << '\n' << std::flush;
    if (sink) sink(line);
  };

  const LrSchedule sched = cfg.schedule();
  const LossConfig loss_cfg{cfg.alpha};
  const AdamWConfig adam{0.9, 0.999, 1e-8, cfg.weight_decay};

  BoundedQueue<Batch<T>> queue(2);
  std::thread producer([&] {
    for (std::int64_t it = start; it < cfg.iterations; ++it) queue.push(make_batch(cfg, train_set, it));
    queue.close();
  });
  struct ProducerGuard {
    BoundedQueue<Batch<T>>& q;
    std::thread& th;
    ~ProducerGuard() {
      q.close();
      if (th.joinable()) th.join();
    }
  } guard{queue, producer};

  std::vector<std::vector<Tensor<T>>> sample_grads(static_cast<std::size_t>(cfg.batch));
  std::vector<double> sample_loss(static_cast<std::size_t>(cfg.batch));
  for (std::int64_t it = start; it < cfg.iterations; ++it) {
    auto batch = queue.pop();
    if (!batch) throw StateError("batch producer stopped early");
    const double lr = cosine_lr(it, sched);

    parallel_for(cfg.batch, threads, [&](std::int64_t i) {
      auto& grads = sample_grads[static_cast<std::size_t>(i)];
      for (auto& g : grads) g.fill(T(0));
      const auto& s = batch->samples[static_cast<std::size_t>(i)];
      Tape<T> tape;
      ParamBinder<T> binder(tape, store);
      Var<T> restored = model->forward(binder, tape.leaf(s.degraded, false));
      Var<T> loss = total_loss(restored, tape.constant(s.clean), loss_cfg);
      tape.backward(loss);
      binder.accumulate_grads(grads, T(1));
      sample_loss[static_cast<std::size_t>(i)] = static_cast<double>(loss.value()[0]);
    });

    double loss = 0;
    store.zero_grad();
    const T inv = T(1) / static_cast<T>(cfg.batch);
    for (std::int64_t i = 0; i < cfg.batch; ++i) {
      loss += sample_loss[static_cast<std::size_t>(i)];
      const auto& grads = sample_grads[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < grads.size(); ++k) {
        T* dst = store.entries()[k].grad.ptr();
        const T* src = grads[k].ptr();
        for (std::int64_t j = 0; j < grads[k].numel(); ++j) dst[j] += inv * src[j];
      }
    }
    loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
    store.grads_ready = true;
    adamw_step(store, lr, adam);
    result.losses.push_back(loss);

    const std::int64_t done = it + 1;
    const bool eval = cfg.eval_every > 0 && (done % cfg.eval_every == 0) && done != cfg.iterations;
    if (done != cfg.iterations && (done % cfg.log_every == 0 || eval || it == start)) {
      std::string line = "iter=" + std::to_string(done) + " loss=" + format_fixed("%.9g", loss) + " lr=" + format_fixed("%.9g", lr);
      if (eval) {
        const auto v = validate_model(*model, val_set, threads);
        line += " psnr=" + format_fixed("%.4f", v.psnr) + " ssim=" + format_fixed("%.6f", v.ssim);
      }
      emit(line);
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.iterations)
      save_checkpoint(cfg.checkpoint, *model);
  }

  result.final_val = validate_model(*model, val_set, threads);
  save_checkpoint(cfg.checkpoint, *model);
  result.checkpoint = cfg.checkpoint;
  const auto& v = result.final_val;
  emit("iter=" + std::to_string(cfg.iterations) + " loss=" + format_fixed("%.9g", result.losses.back()) +
       " lr=" + format_fixed("%.9g", cosine_lr(cfg.iterations - 1, sched)) + " psnr=" + format_fixed("%.4f", v.psnr) +
       " ssim=" + format_fixed("%.6f", v.ssim));
  emit("summary val_psnr=" + format_fixed("%.4f", v.psnr) + " baseline_psnr=" + format_fixed("%.4f", v.baseline_psnr) +
       " gain_db=" + format_fixed("%.4f", v.psnr - v.baseline_psnr) + " val_ssim=" + format_fixed("%.6f", v.ssim) +
       " baseline_ssim=" + format_fixed("%.6f", v.baseline_ssim) + " val_rho=" + format_fixed("%.6f", v.rho) +
       " final_loss=" + format_fixed("%.9g", result.losses.back()));
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace histo
