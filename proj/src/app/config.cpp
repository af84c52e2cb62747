#include "ctssg/config.hpp"

#include <fstream>
#include <set>

#include "ctssg/errors.hpp"

namespace ctssg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where, std::set<std::string> known) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ValidationError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string weighting_name(EdgeWeighting w) {
  return w == EdgeWeighting::kUnit ? "unit" : "distance";
}

EdgeWeighting weighting_from_string(const std::string& s) {
  if (s == "distance") return EdgeWeighting::kDistance;
  if (s == "unit") return EdgeWeighting::kUnit;
  throw ValidationError("unknown edge weighting '" + s + "' (expected distance or unit)");
}

}  // namespace

void ExperimentConfig::resolve() {
  encoder.slices = synth.slices;
  encoder.height = synth.height;
  encoder.width = synth.width;
  encoder.slices_per_node = synth.slices_per_node;
  encoder.labels = synth.labels.size();
  graph.nodes = encoder.nodes();
  graph.slices_per_node = double(synth.slices_per_node);
  validate();
}

void ExperimentConfig::validate() const {
  synth.validate();
  encoder.validate();
  graph.validate();
  train.validate();
  if (seeds.empty()) throw ValidationError("seeds must list at least one seed");
  if (graph.nodes != encoder.nodes()) {
    throw ValidationError("graph N=" + std::to_string(graph.nodes) + " does not match encoder N=" +
                          std::to_string(encoder.nodes()));
  }
  if (encoder.labels != synth.labels.size()) {
    throw ValidationError("encoder M=" + std::to_string(encoder.labels) + " does not match synth M=" +
                          std::to_string(synth.labels.size()));
  }
  if (encoder.slices != synth.slices || encoder.height != synth.height ||
      encoder.width != synth.width) {
    throw ValidationError("encoder volume extents do not match synth extents");
  }
  if (!per_layer_q.empty()) {
    if (per_layer_q.size() != encoder.blocks) {
      throw ValidationError("per_layer_q has " + std::to_string(per_layer_q.size()) +
                            " entries for L=" + std::to_string(encoder.blocks) + " blocks");
    }
    for (std::size_t q : per_layer_q) {
      if (q < 1) throw ValidationError("per_layer_q entries must be >= 1");
    }
  }
  if (data.train == 0) throw ValidationError("data.train must be >= 1");
  if (data.val == 0) throw ValidationError("data.val must be >= 1");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.resolve();
  return cfg;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    reject_unknown(j, "config", {"name", "out_dir", "seeds", "synth", "graph", "encoder", "train", "data"});
    read(j, "name", cfg.name);
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    read(j, "seeds", cfg.seeds);
    if (j.contains("synth")) cfg.synth = synth_config_from_json(j.at("synth"));

    if (j.contains("graph")) {
      const json& g = j.at("graph");
      reject_unknown(g, "graph", {"receptive_field", "per_layer_q", "s_z_mm", "s_z_dm",
                                  "include_self_loops", "topology", "weighting"});
      read(g, "receptive_field", cfg.graph.receptive_field);
      read(g, "per_layer_q", cfg.per_layer_q);
      if (g.contains("s_z_mm") && g.contains("s_z_dm")) {
        throw ValidationError("graph: give s_z_mm or s_z_dm, not both");
      }
      if (g.contains("s_z_mm")) cfg.graph.spacing_dm = g.at("s_z_mm").get<double>() / 100.0;
      read(g, "s_z_dm", cfg.graph.spacing_dm);
      read(g, "include_self_loops", cfg.graph.include_self_loops);
      if (g.contains("topology")) cfg.graph.topology = topology_from_string(g.at("topology"));
      if (g.contains("weighting")) cfg.graph.weighting = weighting_from_string(g.at("weighting"));
    }

    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      reject_unknown(e, "encoder", {"latent", "blocks", "filter_size", "operator", "feature_init",
                                    "cnn_channels", "positional", "residual", "layer_norm",
                                    "layer_norm_eps"});
      read(e, "latent", cfg.encoder.latent);
      read(e, "blocks", cfg.encoder.blocks);
      read(e, "filter_size", cfg.encoder.filter_size);
      if (e.contains("operator")) cfg.encoder.op = graph_operator_from_string(e.at("operator"));
      if (e.contains("feature_init")) {
        cfg.encoder.feature_init = feature_init_from_string(e.at("feature_init"));
      }
      read(e, "cnn_channels", cfg.encoder.cnn_channels);
      read(e, "positional", cfg.encoder.positional);
      read(e, "residual", cfg.encoder.residual);
      read(e, "layer_norm", cfg.encoder.layer_norm);
      read(e, "layer_norm_eps", cfg.encoder.layer_norm_eps);
    }

    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, "train", {"lr", "beta1", "beta2", "adam_eps", "batch_size", "accumulation",
                                  "warmup_steps", "max_steps", "eval_every", "patience", "seed",
                                  "threshold"});
      read(t, "lr", cfg.train.lr);
      read(t, "beta1", cfg.train.beta1);
      read(t, "beta2", cfg.train.beta2);
      read(t, "adam_eps", cfg.train.adam_eps);
      read(t, "batch_size", cfg.train.batch_size);
      read(t, "accumulation", cfg.train.accumulation);
      read(t, "warmup_steps", cfg.train.warmup_steps);
      read(t, "max_steps", cfg.train.max_steps);
      read(t, "eval_every", cfg.train.eval_every);
      read(t, "patience", cfg.train.patience);
      read(t, "seed", cfg.train.seed);
      read(t, "threshold", cfg.train.threshold);
    }

    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, "data", {"train", "val", "test", "dir"});
      read(d, "train", cfg.data.train);
      read(d, "val", cfg.data.val);
      read(d, "test", cfg.data.test);
      if (d.contains("dir")) cfg.data.dir = d.at("dir").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  cfg.resolve();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

namespace {

json graph_json(const ExperimentConfig& cfg) {
  return {{"receptive_field", cfg.graph.receptive_field},
          {"per_layer_q", cfg.per_layer_q},
          {"s_z_dm", cfg.graph.spacing_dm},
          {"include_self_loops", cfg.graph.include_self_loops},
          {"topology", to_string(cfg.graph.topology)},
          {"weighting", weighting_name(cfg.graph.weighting)}};
}

json encoder_json(const EncoderConfig& e) {
  return {{"latent", e.latent},
          {"blocks", e.blocks},
          {"filter_size", e.filter_size},
          {"operator", to_string(e.op)},
          {"feature_init", to_string(e.feature_init)},
          {"cnn_channels", e.cnn_channels},
          {"positional", e.positional},
          {"residual", e.residual},
          {"layer_norm", e.layer_norm},
          {"layer_norm_eps", e.layer_norm_eps}};
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json data = {{"train", cfg.data.train}, {"val", cfg.data.val}, {"test", cfg.data.test}};
  if (!cfg.data.dir.empty()) data["dir"] = cfg.data.dir.string();
  return {{"name", cfg.name},
          {"out_dir", cfg.out_dir.string()},
          {"seeds", cfg.seeds},
          {"synth", to_json(cfg.synth)},
          {"graph", graph_json(cfg)},
          {"encoder", encoder_json(cfg.encoder)},
          {"train",
           {{"lr", t.lr},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},
            {"batch_size", t.batch_size},
            {"accumulation", t.accumulation},
            {"warmup_steps", t.warmup_steps},
            {"max_steps", t.max_steps},
            {"eval_every", t.eval_every},
            {"patience", t.patience},
            {"seed", t.seed},
            {"threshold", t.threshold}}},
          {"data", data}};
}

json model_json(const ExperimentConfig& cfg) {
  json volume = {{"S", cfg.encoder.slices},
                 {"H", cfg.encoder.height},
                 {"W", cfg.encoder.width},
                 {"C", cfg.encoder.slices_per_node},
                 {"M", cfg.encoder.labels}};
  return {{"volume", volume}, {"graph", graph_json(cfg)}, {"encoder", encoder_json(cfg.encoder)}};
}

}  // namespace ctssg
