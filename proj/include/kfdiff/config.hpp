#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfdiff/denoiser.hpp"
#include "kfdiff/evaluation.hpp"
#include "kfdiff/motion_data.hpp"
#include "kfdiff/trainer.hpp"

namespace kfdiff {

// Resolved configuration as JSON with sections corpus/train/sample/eval.
// Every key has a default; overrides may only touch known keys and must keep
// the default's JSON type (integers stay integers).
class RunConfig {
 public:
  RunConfig();

  static const nlohmann::json& defaults();

  // Deep-merges a JSON object (e.g. a config file).
  void merge(const nlohmann::json& overrides, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  // KFDIFF_<SECTION>_<KEY>=value, e.g. KFDIFF_TRAIN_STEPS=500.
  void merge_env(const std::map<std::string, std::string>& env);
  void set(const std::string& section, const std::string& key, const nlohmann::json& value,
           const std::string& origin);

  const nlohmann::json& resolved() const { return j_; }

  CorpusSpec corpus() const;
  TrainConfig train() const;
  DenoiserConfig model(int dim, int vocab) const;
  SamplerConfig sampler() const;
  EvalOptions eval() const;
  std::vector<double> ablation_rates() const;

 private:
  nlohmann::json j_;
};

// Current process environment restricted to KFDIFF_* variables.
std::map<std::string, std::string> kfdiff_environment();

}  // namespace kfdiff
