#include "ctssg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>

#include "ctssg/errors.hpp"
#include "ctssg/ops.hpp"

namespace ctssg {

using nlohmann::json;

void TrainConfig::validate() const {
  adam().validate();
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (accumulation == 0) throw ValidationError("accumulation must be >= 1");
  if (max_steps == 0) throw ValidationError("max_steps must be >= 1");
  if (warmup_steps > max_steps) throw ValidationError("warmup_steps must not exceed max_steps");
  if (eval_every == 0) throw ValidationError("eval_every must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
}

AdamConfig TrainConfig::adam() const {
  return AdamConfig{lr, beta1, beta2, adam_eps, warmup_steps};
}

std::string history_csv(std::span<const HistoryRow> rows) {
  std::string out = "step,train_loss,val_macro_f1,val_auroc,val_map,val_accuracy,lr\n";
  char buf[256];
  for (const HistoryRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.step,
                  r.train_loss, r.val_macro_f1, r.val_auroc, r.val_map, r.val_accuracy, r.lr);
    out += buf;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch),
                    std::uint32_t(std::uint64_t(epoch) >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::size_t(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

namespace {

double sigmoid(double z) {
  const double e = std::exp(-std::abs(z));
  return z >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
}

// Runs fn(i) for i in [0, n) across OpenMP threads and rethrows the first
// (lowest index) exception afterwards.
template <typename Fn>
void parallel_for_each(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const long count = long(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    try {
      fn(std::size_t(i));
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<double> predict_probabilities(const SpectralEncoder& encoder,
                                          const EncoderParams& params,
                                          std::span<const SyntheticVolume> data) {
  const std::size_t m = encoder.config().labels;
  std::vector<double> probs(data.size() * m);
  parallel_for_each(data.size(), [&](std::size_t i) {
    Tape::Scope no_record(nullptr);
    const Tensor logits = encoder.forward(data[i].voxels, params);
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] = sigmoid(logits[j]);
  });
  return probs;
}

MetricsReport evaluate(const SpectralEncoder& encoder, const EncoderParams& params,
                       std::span<const SyntheticVolume> data, double threshold) {
  const std::size_t m = encoder.config().labels;
  const std::vector<double> probs = predict_probabilities(encoder, params, data);
  std::vector<double> targets;
  targets.reserve(data.size() * m);
  for (const SyntheticVolume& v : data) {
    if (v.labels.size() != m) {
      throw DimensionError("sample has " + std::to_string(v.labels.size()) + " labels, model " +
                           "predicts " + std::to_string(m));
    }
    targets.insert(targets.end(), v.labels.begin(), v.labels.end());
  }
  return evaluate_metrics(probs, targets, data.size(), m, threshold);
}

double batch_gradient(const SpectralEncoder& encoder, const EncoderParams& params,
                      std::span<const SyntheticVolume* const> batch,
                      std::vector<std::vector<double>>& grads) {
  const std::size_t m = encoder.config().labels;
  const std::size_t n = batch.size();
  std::vector<std::vector<std::vector<double>>> per_sample(n);
  std::vector<double> losses(n);
  parallel_for_each(n, [&](std::size_t i) {
    const EncoderParams local = params.leaf_views();
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(&tape);
      const Tensor logits = encoder.forward(batch[i]->voxels, local);
      const Tensor targets({1, m}, batch[i]->labels);
      loss = bce_with_logits(reshape(logits, {1, m}), targets);
    }
    tape.backward(loss);
    losses[i] = loss.item();
    local.for_each([&](const std::string&, const Tensor& t) {
      if (t.has_grad()) {
        per_sample[i].emplace_back(t.grad().begin(), t.grad().end());
      } else {
        per_sample[i].emplace_back(t.numel(), 0.0);
      }
    });
  });

  grads.clear();
  params.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.numel(), 0.0); });
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    loss += losses[i];
    for (std::size_t p = 0; p < grads.size(); ++p) {
      for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += per_sample[i][p][j];
    }
  }
  for (auto& g : grads) {
    for (double& v : g) v /= double(n);
  }
  return loss / double(n);
}

Trainer::Trainer(const SpectralEncoder& encoder, TrainConfig cfg)
    : encoder_(encoder), cfg_(std::move(cfg)) {
  cfg_.validate();
}

TrainState Trainer::initial_state(const EncoderParams& params) const {
  TrainState s;
  s.params = params.clone();
  s.adam = make_adam_state(s.params.tensors());
  s.best_params = s.params.clone();
  return s;
}

void Trainer::run(TrainState& state, std::span<const SyntheticVolume> train,
                  std::span<const SyntheticVolume> val,
                  const std::function<void(const TrainState&)>& on_eval) const {
  if (train.empty()) throw ValidationError("training split is empty");
  if (val.empty()) throw ValidationError("validation split is empty");
  const AdamConfig adam = cfg_.adam();
  std::vector<Tensor> tensors = state.params.tensors();
  const std::size_t per_step = cfg_.batch_size * cfg_.accumulation;
  const std::size_t n = train.size();

  std::size_t cached_epoch = std::size_t(-1);
  std::vector<std::size_t> order;
  std::vector<const SyntheticVolume*> batch(per_step);
  std::vector<std::vector<double>> grads;

  while (state.step < cfg_.max_steps) {
    const std::size_t step = state.step + 1;
    for (std::size_t t = 0; t < per_step; ++t) {
      const std::size_t pos = (step - 1) * per_step + t;
      const std::size_t epoch = pos / n;
      if (epoch != cached_epoch) {
        order = epoch_order(n, cfg_.seed, epoch);
        cached_epoch = epoch;
      }
      batch[t] = &train[order[pos % n]];
    }
    const double loss = batch_gradient(encoder_, state.params, batch, grads);
    if (!std::isfinite(loss)) {
      throw NumericError("training diverged: loss is not finite at step " + std::to_string(step));
    }
    adam_step(tensors, grads, state.adam, step, adam);
    state.step = step;
    state.loss_sum += loss;
    ++state.loss_count;

    if (step % cfg_.eval_every == 0 || step == cfg_.max_steps) {
      const MetricsReport report = evaluate(encoder_, state.params, val, cfg_.threshold);
      HistoryRow row;
      row.step = step;
      row.train_loss = state.loss_sum / double(state.loss_count);
      row.val_macro_f1 = report.macro_f1;
      row.val_auroc = report.macro_auroc;
      row.val_map = report.mean_average_precision;
      row.val_accuracy = report.macro_accuracy;
      row.lr = cfg_.lr * warmup_factor(step, cfg_.warmup_steps);
      state.history.push_back(row);
      state.loss_sum = 0.0;
      state.loss_count = 0;
      if (report.macro_f1 > state.best_f1) {
        state.best_f1 = report.macro_f1;
        state.best_step = step;
        state.best_params = state.params.clone();
        state.evals_since_best = 0;
      } else {
        ++state.evals_since_best;
      }
      if (on_eval) on_eval(state);
      if (cfg_.patience != 0 && state.evals_since_best >= cfg_.patience) break;
    }
  }
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& dir, const EncoderParams& params,
                     const json& model_config, const json& extra) {
  std::filesystem::create_directories(dir);
  const auto named = params.named();
  write_tensors(dir / "params", named);
  std::ofstream(dir / "config.json") << model_config.dump(2) << '\n';
  json meta = extra.is_object() ? extra : json::object();
  meta["config_hash"] = config_hash(model_config);
  meta["parameter_count"] = params.parameter_count();
  std::ofstream(dir / "checkpoint.json") << meta.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const EncoderConfig& cfg,
                                 const json& model_config) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw LoadError("no checkpoint in " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint metadata: " + std::string(e.what()));
  }
  const std::string expected = config_hash(model_config);
  const std::string stored = meta.value("config_hash", "");
  if (stored != expected) {
    throw LoadError("checkpoint " + dir.string() + " was written for config hash " + stored +
                    ", current config hashes to " + expected);
  }
  return {params_from_named(cfg, read_tensors(dir / "params")), std::move(meta)};
}

void save_train_state(const std::filesystem::path& dir, const TrainState& state,
                      const json& model_config) {
  json history = json::array();
  for (const HistoryRow& r : state.history) {
    history.push_back({r.step, r.train_loss, r.val_macro_f1, r.val_auroc, r.val_map,
                       r.val_accuracy, r.lr});
  }
  const json extra = {{"step", state.step},
                      {"best_f1", state.best_f1},
                      {"best_step", state.best_step},
                      {"evals_since_best", state.evals_since_best},
                      {"loss_sum", state.loss_sum},
                      {"loss_count", state.loss_count},
                      {"history", std::move(history)}};
  save_checkpoint(dir / "last", state.params, model_config, extra);
  save_checkpoint(dir / "best", state.best_params, model_config,
                  {{"step", state.best_step}, {"val_macro_f1", state.best_f1}});

  std::vector<NamedTensor> moments;
  const auto named = state.params.named();
  for (std::size_t p = 0; p < named.size(); ++p) {
    const Shape& shape = named[p].tensor.shape();
    moments.push_back({"m." + named[p].name, Tensor(shape, state.adam.m[p])});
    moments.push_back({"v." + named[p].name, Tensor(shape, state.adam.v[p])});
  }
  write_tensors(dir / "last" / "optimizer", moments);
}

TrainState load_train_state(const std::filesystem::path& dir, const EncoderConfig& cfg,
                            const json& model_config) {
  LoadedCheckpoint last = load_checkpoint(dir / "last", cfg, model_config);
  LoadedCheckpoint best = load_checkpoint(dir / "best", cfg, model_config);
  TrainState s;
  s.params = std::move(last.params);
  s.best_params = std::move(best.params);
  const json& meta = last.meta;
  s.step = meta.at("step").get<std::size_t>();
  s.best_f1 = meta.at("best_f1").get<double>();
  s.best_step = meta.at("best_step").get<std::size_t>();
  s.evals_since_best = meta.at("evals_since_best").get<std::size_t>();
  s.loss_sum = meta.at("loss_sum").get<double>();
  s.loss_count = meta.at("loss_count").get<std::size_t>();
  for (const json& r : meta.at("history")) {
    s.history.push_back({r[0].get<std::size_t>(), r[1].get<double>(), r[2].get<double>(),
                         r[3].get<double>(), r[4].get<double>(), r[5].get<double>(),
                         r[6].get<double>()});
  }
  const auto moments = read_tensors(dir / "last" / "optimizer");
  const auto named = s.params.named();
  if (moments.size() != 2 * named.size()) throw LoadError("optimizer state does not match params");
  for (std::size_t p = 0; p < named.size(); ++p) {
    const auto& m = moments[2 * p];
    const auto& v = moments[2 * p + 1];
    if (m.name != "m." + named[p].name || v.name != "v." + named[p].name ||
        m.tensor.numel() != named[p].tensor.numel()) {
      throw LoadError("optimizer state does not match parameter " + named[p].name);
    }
    s.adam.m.emplace_back(m.tensor.values().begin(), m.tensor.values().end());
    s.adam.v.emplace_back(v.tensor.values().begin(), v.tensor.values().end());
  }
  return s;
}

}  // namespace ctssg
