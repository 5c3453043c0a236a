#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rivlpr/augment.hpp"
#include "rivlpr/evaluate.hpp"
#include "rivlpr/synthetic.hpp"
#include "rivlpr/trainer.hpp"

namespace rivlpr {

/// Every module's settings. On disk: `[section]` headers, `key = value` lines,
/// `#` comments. Unknown sections or keys are errors.
struct PipelineConfig {
  RivConfig riv;
  AugmentSpec augment;
  EncoderConfig encoder;
  AggregateConfig aggregate;
  MiningConfig mining;
  LossConfig loss;
  TrainConfig train;
  EvalProtocol eval;
  SyntheticSpec synthetic;  // synthetic.sensor mirrors riv

  void validate() const;
  TrainSetup setup() const;
  ModelConfig model() const { return {riv, encoder, aggregate}; }
};

PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Full dump; parse_config(format_config(c)) reproduces c exactly.
std::string format_config(const PipelineConfig& cfg);

/// "section.key=value" or ("section.key", "value"). Revalidates the whole config.
void apply_override(PipelineConfig& cfg, const std::string& assignment);
void set_value(PipelineConfig& cfg, const std::string& dotted_key, const std::string& value);
std::string get_value(const PipelineConfig& cfg, const std::string& dotted_key);
std::vector<std::string> config_keys();

}  // namespace rivlpr
