#include "kfdiff/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "kfdiff/errors.hpp"

namespace kfdiff {

using json = nlohmann::json;

void EvalOptions::validate() const {
  if (trials < 1) throw ConfigError("eval.trials must be >= 1");
  if (num_samples < 1) throw ConfigError("sample.num_samples must be >= 1");
  if (pair_count < 1) throw ConfigError("eval.pair_count must be >= 1");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("eval.rate must lie in [0, 1]");
  if (threads < 0) throw ConfigError("eval.threads must be >= 0");
  if (strategies.empty()) throw ConfigError("eval.strategies is empty");
  sampler.validate();
}

std::size_t EvalReport::index(Strategy s) const {
  for (std::size_t i = 0; i < strategies.size(); ++i)
    if (strategies[i] == s) return i;
  throw InputError("strategy " + std::string(to_string(s)) + " not in report");
}

const StrategyRow& EvalReport::row(Strategy s) const { return rows[index(s)]; }

namespace {

struct TrialSetup {
  int record;
  KeyframeMask mask;
  std::uint64_t sample_seed;
};

std::vector<int> trial_records(std::size_t corpus_size, int trials, std::uint64_t seed) {
  std::vector<int> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(stream_seed(seed, 0x6576616cull));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> out(trials);
  for (int i = 0; i < trials; ++i) out[i] = order[i % corpus_size];
  return out;
}

std::uint64_t mask_seed(std::uint64_t seed, int trial) { return stream_seed(seed, 0x100000ull + trial); }
std::uint64_t noise_seed(std::uint64_t seed, int trial) { return stream_seed(seed, 0x200000ull + trial); }

// Runs fn(i) for i in [0, n) on `threads` workers; each worker owns its
// private state (model copies). The first exception is rethrown.
template <class State, class MakeState, class Fn>
void parallel_for(int n, int threads, MakeState&& make_state, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&](State& state) {
    for (int i = next++; i < n && !failed; i = next++) {
      try {
        fn(state, i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    State state = make_state();
    work(state);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        State state = make_state();
        work(state);
      });
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct WorkerModels {
  Denoiser<float> keyframe;
  std::optional<Denoiser<float>> baseline;
};

MatrixF run_strategy(Strategy s, WorkerModels& w, const SampleRequest& req, const SamplerConfig& cfg,
                     const DiffusionSchedule& sched) {
  const bool keyframe_model = s == Strategy::DiffKfc || s == Strategy::DiffKfcNoTg;
  Denoiser<float>& model = keyframe_model || !w.baseline ? w.keyframe : *w.baseline;
  return sample_strategy(s, model, req, cfg, sched);
}

SampleRequest make_request(const CorpusRecord& rec, const MatrixF& normalized, const KeyframeMask& mask) {
  return SampleRequest{rec.prompt.tokens, normalized.rows(), extract_keyframes(normalized, mask), mask};
}

void check_compatible(const ModelBundle& a, const Corpus& corpus) {
  if (a.model.config().dim != corpus.dim()) throw ShapeError("model dim does not match corpus dim");
  if (a.vocab.words() != corpus.vocab.words()) throw InputError("model vocabulary does not match corpus vocabulary");
}

}  // namespace

EvalReport evaluate(const EvalModels& models, const Corpus& corpus, const EvalOptions& opt) {
  opt.validate();
  if (!models.keyframe) throw PreconditionError("evaluate: keyframe model required");
  check_compatible(*models.keyframe, corpus);
  if (models.baseline) {
    check_compatible(*models.baseline, corpus);
    if (models.baseline->diffusion_steps != models.keyframe->diffusion_steps)
      throw ConfigError("baseline and keyframe models use different diffusion step counts");
  }
  if (corpus.records.empty()) throw InputError("evaluation corpus is empty");
  const ModelBundle& kb = *models.keyframe;
  const DiffusionSchedule sched = kb.schedule();
  const std::vector<int> records = trial_records(corpus.records.size(), opt.trials, opt.seed);

  EvalReport report;
  report.strategies = opt.strategies;
  report.trials.resize(opt.trials);
  // Generated motions (denormalized) per strategy, first sample of each trial.
  std::vector<std::vector<MatrixF>> generated(opt.strategies.size(), std::vector<MatrixF>(opt.trials));
  std::vector<MatrixF> reference(opt.trials);

  parallel_for<WorkerModels>(
      opt.trials, opt.threads,
      [&] {
        return WorkerModels{kb.model, models.baseline ? std::optional<Denoiser<float>>(models.baseline->model)
                                                       : std::nullopt};
      },
      [&](WorkerModels& w, int i) {
        const CorpusRecord& rec = corpus.records[records[i]];
        const MatrixF& gt = rec.motion.frames;
        const MatrixF normalized = normalize(gt, kb.stats);
        const KeyframeMask mask = sample_keyframe_mask(gt.rows(), opt.rate, mask_seed(opt.seed, i));
        const SampleRequest req = make_request(rec, normalized, mask);
        const MatrixF gt_kf = extract_keyframes(gt, mask);
        TrialResult& tr = report.trials[i];
        tr.trial = i;
        tr.record = records[i];
        tr.frames = gt.rows();
        tr.keyframes = mask.keyframe_indices;
        tr.sample_seed = noise_seed(opt.seed, i);
        tr.real_k_trans = k_trans(gt, gt_kf, mask.keyframe_indices);
        reference[i] = gt;
        for (std::size_t s = 0; s < opt.strategies.size(); ++s) {
          std::vector<MatrixF> samples;
          TrialMetrics m;
          for (int j = 0; j < opt.num_samples; ++j) {
            SamplerConfig cfg = opt.sampler;
            cfg.seed = stream_seed(tr.sample_seed, j);
            samples.push_back(denormalize(run_strategy(opt.strategies[s], w, req, cfg, sched), kb.stats));
            m.k_err += k_err(samples.back(), gt_kf, mask.keyframe_indices) / opt.num_samples;
            m.k_trans += k_trans(samples.back(), gt_kf, mask.keyframe_indices) / opt.num_samples;
          }
          m.ade = ade(gt, samples, mask);
          tr.per_strategy.push_back(m);
          generated[s][i] = std::move(samples.front());
        }
      });

  for (const auto& t : report.trials) report.real_k_trans += t.real_k_trans / opt.trials;
  for (std::size_t s = 0; s < opt.strategies.size(); ++s) {
    StrategyRow row{opt.strategies[s], {}};
    for (const auto& t : report.trials) {
      row.mean.ade += t.per_strategy[s].ade / opt.trials;
      row.mean.k_err += t.per_strategy[s].k_err / opt.trials;
      row.mean.k_trans += t.per_strategy[s].k_trans / opt.trials;
    }
    if (opt.trials >= 2) {
      row.mean.diversity = diversity(generated[s], opt.pair_count, stream_seed(opt.seed, 0x646976ull));
      row.mean.frechet = frechet_feature_distance(generated[s], reference);
    }
    report.rows.push_back(row);
  }
  return report;
}

AblationReport ablate(const std::vector<const ModelBundle*>& models, const Corpus& corpus,
                      const std::vector<double>& rates, const EvalOptions& opt) {
  opt.validate();
  if (rates.empty()) throw ConfigError("ablation needs >= 1 keyframe rate");
  if (models.size() != 1 && models.size() != rates.size())
    throw ConfigError("ablation takes one checkpoint or one per rate (" + std::to_string(rates.size()) + ")");
  for (const ModelBundle* m : models) {
    if (!m) throw PreconditionError("ablate: null model");
    check_compatible(*m, corpus);
  }
  for (std::size_t i = 1; i < rates.size(); ++i)
    if (!(rates[i] > rates[i - 1])) throw ConfigError("ablation rates must be strictly increasing");

  AblationReport report;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    const ModelBundle& mb = *models[models.size() == 1 ? 0 : r];
    EvalOptions o = opt;
    o.rate = rates[r];
    o.strategies = {Strategy::DiffKfc};
    const DiffusionSchedule sched = mb.schedule();
    const std::vector<int> records = trial_records(corpus.records.size(), o.trials, o.seed);
    std::vector<TrialMetrics> per_trial(o.trials);
    std::vector<MatrixF> generated(o.trials), reference(o.trials);
    parallel_for<Denoiser<float>>(
        o.trials, o.threads, [&] { return mb.model; },
        [&](Denoiser<float>& model, int i) {
          const CorpusRecord& rec = corpus.records[records[i]];
          const MatrixF& gt = rec.motion.frames;
          const MatrixF normalized = normalize(gt, mb.stats);
          const KeyframeMask mask = sample_keyframe_mask(gt.rows(), o.rate, mask_seed(o.seed, i));
          const SampleRequest req = make_request(rec, normalized, mask);
          const MatrixF gt_kf = extract_keyframes(gt, mask);
          const bool drop = o.rate == 0.0;
          std::vector<MatrixF> samples;
          TrialMetrics& m = per_trial[i];
          for (int j = 0; j < o.num_samples; ++j) {
            SamplerConfig cfg = o.sampler;
            cfg.seed = stream_seed(noise_seed(o.seed, i), j);
            samples.push_back(denormalize(sample_diffkfc(model, req, cfg, sched, drop), mb.stats));
            m.k_err += k_err(samples.back(), gt_kf, mask.keyframe_indices) / o.num_samples;
            m.k_trans += k_trans(samples.back(), gt_kf, mask.keyframe_indices) / o.num_samples;
          }
          m.ade = ade(gt, samples, mask);
          generated[i] = std::move(samples.front());
          reference[i] = gt;
        });
    AblationRow row{rates[r], {}};
    for (const auto& m : per_trial) {
      row.mean.ade += m.ade / o.trials;
      row.mean.k_err += m.k_err / o.trials;
      row.mean.k_trans += m.k_trans / o.trials;
    }
    if (o.trials >= 2) {
      row.mean.diversity = diversity(generated, o.pair_count, stream_seed(o.seed, 0x646976ull));
      row.mean.frechet = frechet_feature_distance(generated, reference);
    }
    report.rows.push_back(row);
  }
  report.ade_monotone = report.k_err_monotone = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    report.ade_monotone = report.ade_monotone && report.rows[i].mean.ade <= report.rows[i - 1].mean.ade;
    report.k_err_monotone = report.k_err_monotone && report.rows[i].mean.k_err <= report.rows[i - 1].mean.k_err;
  }
  const double last = report.rows.back().mean.k_err;
  report.k_err_ratio = last > 0.0 ? report.rows.front().mean.k_err / last : 0.0;
  return report;
}

namespace {

json bundle_json(const MetricBundle& m) {
  return json{{"ade", m.ade}, {"k_err", m.k_err}, {"k_trans", m.k_trans}, {"diversity", m.diversity},
              {"frechet", m.frechet}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

json to_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j = bundle_json(row.mean);
    j["strategy"] = std::string(to_string(row.strategy));
    rows.push_back(j);
  }
  json trials = json::array();
  for (const auto& t : r.trials) {
    json per = json::object();
    for (std::size_t s = 0; s < r.strategies.size(); ++s)
      per[std::string(to_string(r.strategies[s]))] = {
          {"ade", t.per_strategy[s].ade}, {"k_err", t.per_strategy[s].k_err}, {"k_trans", t.per_strategy[s].k_trans}};
    trials.push_back({{"trial", t.trial},
                      {"record", t.record},
                      {"frames", t.frames},
                      {"keyframes", t.keyframes},
                      {"sample_seed", t.sample_seed},
                      {"real_k_trans", t.real_k_trans},
                      {"metrics", per}});
  }
  return json{{"real_motion_k_trans", r.real_k_trans},
              {"trial_count", r.trials.size()},
              {"strategies", rows},
              {"trials", trials}};
}

json to_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j = bundle_json(row.mean);
    j["rate"] = row.rate;
    rows.push_back(j);
  }
  return json{{"rows", rows},
              {"ade_monotone", r.ade_monotone},
              {"k_err_monotone", r.k_err_monotone},
              {"k_err_ratio_lowest_to_highest", r.k_err_ratio}};
}

std::string format_table(const EvalReport& r) {
  std::string out = "strategy        ADE      K-Err    K-TranS  FD       Diversity\n";
  out += "real motion     -        -        " + fmt("%-8.4f", r.real_k_trans) + " -        -\n";
  for (const auto& row : r.rows) {
    std::string name(to_string(row.strategy));
    name.resize(16, ' ');
    out += name + fmt("%-8.4f", row.mean.ade) + " " + fmt("%-8.4f", row.mean.k_err) + " " +
           fmt("%-8.4f", row.mean.k_trans) + " " + fmt("%-8.4f", row.mean.frechet) + " " +
           fmt("%.4f", row.mean.diversity) + "\n";
  }
  return out;
}

std::string format_table(const AblationReport& r) {
  std::string out = "rate    ADE      K-Err    K-TranS  FD\n";
  for (const auto& row : r.rows)
    out += fmt("%-7.2f", row.rate * 100.0) + " " + fmt("%-8.4f", row.mean.ade) + " " + fmt("%-8.4f", row.mean.k_err) +
           " " + fmt("%-8.4f", row.mean.k_trans) + " " + fmt("%.4f", row.mean.frechet) + "\n";
  out += std::string("ADE monotone non-increasing: ") + (r.ade_monotone ? "yes" : "no") + "\n";
  out += std::string("K-Err monotone non-increasing: ") + (r.k_err_monotone ? "yes" : "no") + "\n";
  out += "K-Err ratio (lowest/highest rate): " + fmt("%.3f", r.k_err_ratio) + "\n";
  return out;
}

}  // namespace kfdiff
