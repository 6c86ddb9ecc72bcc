#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ltr/model.hpp"
#include "ltr/rethinking.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/training.hpp"

namespace ltr {

// Schema violation in a config document; the message names the key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string out_dir = "runs/desk";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  RethinkConfig rethink;
  GenConfig data;
  PathsConfig paths;

  // Validates every section.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RethinkConfig& c);
nlohmann::json to_json(const GenConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Strict readers: unknown keys and wrong types raise ConfigError, missing keys
// keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
RethinkConfig rethink_config_from_json(const nlohmann::json& j);
GenConfig gen_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved config, pretty-printed with sorted keys.
std::string dump_run_config(const RunConfig& c);

}  // namespace ltr
