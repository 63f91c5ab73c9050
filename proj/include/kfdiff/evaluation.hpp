#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfdiff/checkpoint.hpp"
#include "kfdiff/guidance.hpp"
#include "kfdiff/metrics.hpp"

namespace kfdiff {

struct EvalOptions {
  int trials = 50;
  int num_samples = 1;  // samples per trial; ADE takes the best one
  int pair_count = 25;
  double rate = 0.05;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
  SamplerConfig sampler;
  std::vector<Strategy> strategies{Strategy::DiffKfc, Strategy::Inpaint, Strategy::Gradient, Strategy::TextOnly};

  void validate() const;
};

struct TrialMetrics {
  double ade = 0.0;
  double k_err = 0.0;
  double k_trans = 0.0;
};

struct TrialResult {
  int trial = 0;
  int record = 0;
  std::size_t frames = 0;
  std::vector<int> keyframes;
  std::uint64_t sample_seed = 0;
  double real_k_trans = 0.0;     // K-TranS of the ground truth itself
  std::vector<TrialMetrics> per_strategy;  // aligned with EvalReport::strategies
};

struct StrategyRow {
  Strategy strategy;
  MetricBundle mean;
};

struct EvalReport {
  std::vector<Strategy> strategies;
  std::vector<StrategyRow> rows;
  std::vector<TrialResult> trials;
  double real_k_trans = 0.0;

  const StrategyRow& row(Strategy s) const;
  std::size_t index(Strategy s) const;
};

// Models used by the strategies. `baseline` (optional) is the text-only
// model for inpaint/grad/text-only; without it those strategies take the
// keyframe model's null-condition path.
struct EvalModels {
  const ModelBundle* keyframe = nullptr;
  const ModelBundle* baseline = nullptr;
};

// Paired trials: every strategy sees the same record, mask and noise seed.
EvalReport evaluate(const EvalModels& models, const Corpus& corpus, const EvalOptions& opt);

struct AblationRow {
  double rate = 0.0;
  MetricBundle mean;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  bool ade_monotone = false;    // non-increasing as the rate grows
  bool k_err_monotone = false;
  double k_err_ratio = 0.0;     // K-Err at the lowest rate / K-Err at the highest
};

// One model per rate, or a single model reused for every rate. Rate 0 drops
// the keyframes (null condition); its metrics use the one-frame floor mask.
AblationReport ablate(const std::vector<const ModelBundle*>& models, const Corpus& corpus,
                      const std::vector<double>& rates, const EvalOptions& opt);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const AblationReport& r);
std::string format_table(const EvalReport& r);
std::string format_table(const AblationReport& r);

}  // namespace kfdiff
