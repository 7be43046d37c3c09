#include "tolo/config.hpp"

#include <set>
#include <string>

#include "tolo/errors.hpp"

namespace tolo {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw FormatError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json to_json(const EngineConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [h, w] : c.layers) layers.push_back({h, w});
  return {{"latent_height", c.latent_height}, {"latent_width", c.latent_width},
          {"channels", c.channels},           {"proj_dim", c.proj_dim},
          {"embed_dim", c.embed_dim},         {"map_size", c.map_size},
          {"layers", layers},                 {"gamma", c.gamma},
          {"query_scale", c.query_scale},     {"key_scale", c.key_scale},
          {"init_scale", c.init_scale},       {"drift_scale", c.drift_scale}};
}

EngineConfig engine_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"latent_height", "latent_width", "channels", "proj_dim", "embed_dim", "map_size",
                  "layers", "gamma", "query_scale", "key_scale", "init_scale", "drift_scale"},
                 "engine config");
  EngineConfig c;
  try {
    read_opt(j, "latent_height", c.latent_height);
    read_opt(j, "latent_width", c.latent_width);
    read_opt(j, "channels", c.channels);
    read_opt(j, "proj_dim", c.proj_dim);
    read_opt(j, "embed_dim", c.embed_dim);
    read_opt(j, "map_size", c.map_size);
    read_opt(j, "gamma", c.gamma);
    read_opt(j, "query_scale", c.query_scale);
    read_opt(j, "key_scale", c.key_scale);
    read_opt(j, "init_scale", c.init_scale);
    read_opt(j, "drift_scale", c.drift_scale);
    if (j.contains("layers")) {
      c.layers.clear();
      for (const auto& l : j.at("layers")) {
        if (!l.is_array() || l.size() != 2) throw FormatError("engine config: layer must be [h, w]");
        c.layers.emplace_back(l[0].get<Index>(), l[1].get<Index>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("engine config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const GuidanceConfig& c) {
  return {{"T", c.T},
          {"m", c.m},
          {"n", c.n},
          {"alpha", c.alpha},
          {"iou_threshold", c.iou_threshold},
          {"mode", to_string(c.mode)},
          {"lambda", c.weights.lambda},
          {"sharpness", c.weights.sharpness},
          {"lambda_s", c.weights.lambda_s},
          {"lambda_a", c.weights.lambda_a},
          {"eps", c.weights.eps}};
}

GuidanceConfig guidance_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"T", "m", "n", "alpha", "iou_threshold", "mode", "lambda", "sharpness",
                  "lambda_s", "lambda_a", "eps"},
                 "guidance config");
  GuidanceConfig c;
  try {
    read_opt(j, "T", c.T);
    read_opt(j, "m", c.m);
    read_opt(j, "n", c.n);
    read_opt(j, "alpha", c.alpha);
    read_opt(j, "iou_threshold", c.iou_threshold);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    read_opt(j, "lambda", c.weights.lambda);
    read_opt(j, "sharpness", c.weights.sharpness);
    read_opt(j, "lambda_s", c.weights.lambda_s);
    read_opt(j, "lambda_a", c.weights.lambda_a);
    read_opt(j, "eps", c.weights.eps);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("guidance config: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("guidance config: ") + e.what());
  }
  return c;
}

}  // namespace tolo
