// Acceptance driver: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria (0 = all pass).
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "kfdiff/attention.hpp"
#include "kfdiff/checkpoint.hpp"
#include "kfdiff/config.hpp"
#include "kfdiff/denoiser.hpp"
#include "kfdiff/diffusion.hpp"
#include "kfdiff/evaluation.hpp"
#include "kfdiff/guidance.hpp"
#include "kfdiff/trainer.hpp"
#include "support.hpp"

using namespace kfdiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path work;
  std::string kfdiff;
  bool reuse = false;
  int kfc_steps = 7000;
  int text_steps = 5000;
  int trials = 50;
  double cfg_scale = 1.5;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 -----------------------------------------------------------------------

Outcome forward_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool finite = true;
  for (int steps : {10, 100, 1000}) {
    const auto s = DiffusionSchedule::cosine(steps);
    for (double b : s.betas()) finite = finite && std::isfinite(b);
    std::mt19937_64 rng(steps);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
      const int t = 1 + static_cast<int>(rng() % steps);
      const MatrixD x0 = test::random_matrix<double>(4, 3, rng);
      MatrixD x = x0, acc(4, 3);
      for (int step = 1; step <= t; ++step) {
        const double a = std::sqrt(s.alpha(step)), b = std::sqrt(s.beta(step));
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double e = g(rng);
          x[i] = a * x[i] + b * e;
          acc[i] = a * acc[i] + b * e;
        }
      }
      MatrixF eps(4, 3);
      for (std::size_t i = 0; i < eps.size(); ++i)
        eps[i] = static_cast<float>(acc[i] / std::sqrt(1.0 - s.alpha_bar(t)));
      const MatrixF closed = q_sample(x0.cast<float>(), t, eps, s);
      for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(closed[i] - x[i]));
    }
  }
  const double sec = seconds_since(t0);
  return {worst < 1e-5 && finite && sec < 1.0,
          "max |closed - chain| = " + fmt("%.2e", worst) + " over T in {10,100,1000} (" + fmt("%.3f", sec) + " s)"};
}

// ---- 2 -----------------------------------------------------------------------

Outcome dct_machinery() {
  const auto t0 = std::chrono::steady_clock::now();
  double ortho = 0.0, idem = 0.0;
  for (int len : {3, 5, 9, 13, 17})
    for (int m = 1; m <= len; ++m) {
      const DctBasis b = dct_basis(len, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          double s = 0.0;
          for (int n = 0; n < len; ++n) s += b.basis(n, i) * b.basis(n, j);
          ortho = std::max(ortho, std::abs(s - (i == j ? 1.0 : 0.0)));
        }
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j) {
          double pp = 0.0;
          for (int k = 0; k < len; ++k) pp += b.projector(i, k) * b.projector(k, j);
          idem = std::max(idem, std::abs(pp - b.projector(i, j)));
        }
    }

  // 100 random single-window cases against ||G(P - I)||^2 / ((2l+1) K).
  std::mt19937_64 rng(17);
  double loss_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int l = 1 + trial % 5, m = 1 + trial % (2 * l + 1);
    const TransitionWindow w{l, m};
    const int n = 2 * l + 1 + static_cast<int>(rng() % 8), center = l + static_cast<int>(rng() % (n - 2 * l));
    const MatrixD x = test::random_matrix<double>(n, 4, rng);
    const MatrixD& p = dct_basis(2 * l + 1, m).projector;
    double brute = 0.0;
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i <= 2 * l; ++i) {
        double v = -x(center - l + i, c);
        for (int j = 0; j <= 2 * l; ++j) v += p(i, j) * x(center - l + j, c);
        brute += v * v;
      }
    brute /= (2 * l + 1);
    const std::vector<int> kf{center};
    loss_err = std::max(loss_err, std::abs(transition_loss(x, kf, w) - brute));
  }

  double grad_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixD x = test::random_matrix<double>(30, 5, rng);
    const std::vector<int> kf{1, 11, 14, 28};
    const TransitionWindow w{4, 3};
    const MatrixD g = transition_grad(x, kf, w);
    MatrixD num = test::numeric_grad([&](const MatrixD& v) { return transition_loss(v, kf, w); }, x, 1e-5);
    for (int k : kf)
      for (std::size_t c = 0; c < x.cols(); ++c) num(k, c) = 0.0;
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      a += (g[i] - num[i]) * (g[i] - num[i]);
      b += num[i] * num[i];
    }
    grad_err = std::max(grad_err, std::sqrt(a / b));
  }
  const double sec = seconds_since(t0);
  const bool ok = ortho < 1e-10 && idem < 1e-8 && loss_err < 1e-8 && grad_err < 1e-5 && sec < 5.0;
  return {ok, "DtD " + fmt("%.1e", ortho) + ", PP-P " + fmt("%.1e", idem) + ", loss " + fmt("%.1e", loss_err) +
                  ", grad rel " + fmt("%.1e", grad_err) + " (" + fmt("%.2f", sec) + " s)"};
}

// ---- 3 -----------------------------------------------------------------------

Outcome dilation_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const DenoiserConfig cfg = DenoiserConfig::desk(19, 17);
  Denoiser<float> model(cfg);
  std::mt19937_64 rng(31);
  const std::vector<int> tokens{2, 3};
  int mismatches = 0, uncovered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 16 + rng() % 49;
    const std::size_t frames = trial % 4 == 0 ? n - 1 - rng() % 6 : n;
    const KeyframeMask m = sample_keyframe_mask(frames, 0.02 + 0.04 * (trial % 4), rng());
    std::vector<char> rows(n, 0), valid(n, 0), padding(n, 0);
    for (int i : m.keyframe_indices) rows[i] = valid[i] = 1;
    for (std::size_t i = frames; i < n; ++i) padding[i] = 1;
    ag::Tape<float> tape(false);
    std::vector<TokenValidity> trace;
    model.encode(tape, tape.constant(MatrixF(n, 19)), rows, model.prompt_embedding(tape, tokens), false, frames,
                 &trace);
    const auto steps = dilation_steps(cfg, static_cast<int>(n));
    for (std::size_t b = 0; b < steps.size(); ++b) {
      std::vector<char> next = valid;
      for (int i = 0; i < static_cast<int>(n); ++i) {
        if (padding[i] || valid[i]) continue;
        for (int j = std::max(0, i - steps[b]); j <= std::min<int>(n - 1, i + steps[b]); ++j)
          if (valid[j]) next[i] = 1;
      }
      valid = next;
      if (b >= trace.size() || trace[b].valid != valid) ++mismatches;
    }
    for (std::size_t i = 0; i < frames; ++i) uncovered += !trace.back().valid[i];
  }
  const double sec = seconds_since(t0);
  return {mismatches == 0 && uncovered == 0 && sec < 5.0,
          std::to_string(mismatches) + " block mismatches, " + std::to_string(uncovered) +
              " uncovered frames over 200 cases (" + fmt("%.2f", sec) + " s)"};
}

// ---- 4 -----------------------------------------------------------------------

Outcome attention_mask() {
  std::mt19937_64 rng(41);
  double worst_invalid = 0.0, worst_single = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int lk = 3 + trial % 13;
    const MatrixF q = test::random_matrix<float>(5, 8, rng, 3.0), k = test::random_matrix<float>(lk, 8, rng, 3.0),
                  v = test::random_matrix<float>(lk, 8, rng);
    std::vector<char> valid(lk, 0);
    for (int j = 0; j < lk; ++j) valid[j] = rng() % 3 == 0;
    valid[trial % lk] = 1;
    const auto r = masked_attention(q, k, v, 2, valid);
    for (std::size_t row = 0; row < r.probs.rows(); ++row)
      for (int j = 0; j < lk; ++j)
        if (!valid[j]) worst_invalid = std::max(worst_invalid, static_cast<double>(r.probs(row, j)));
    std::vector<char> one(lk, 0);
    one[trial % lk] = 1;
    const auto s = masked_attention(q, k, v, 2, one);
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 8; ++c)
        worst_single = std::max(worst_single, static_cast<double>(std::abs(s.out(i, c) - v(trial % lk, c))));
  }
  return {worst_invalid < 1e-8 && worst_single < 1e-6,
          "max invalid weight " + fmt("%.1e", worst_invalid) + ", single-valid error " + fmt("%.1e", worst_single)};
}

// ---- 5 -----------------------------------------------------------------------

Outcome guidance_algebra() {
  std::mt19937_64 rng(51);
  bool degenerate = true;
  double affine = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixF c = test::random_matrix<float>(6, 4, rng), u = test::random_matrix<float>(6, 4, rng);
    degenerate = degenerate && cfg_combine(c, u, 1.0) == c && cfg_combine(c, u, 0.0) == u;
    const MatrixD cd = c.cast<double>(), ud = u.cast<double>();
    const double s1 = -1.0 + 4.0 * (rng() % 1000) / 1000.0, s2 = 3.5, lam = 0.3;
    const MatrixD a = cfg_combine(cd, ud, s1), b = cfg_combine(cd, ud, s2),
                  mix = cfg_combine(cd, ud, lam * s1 + (1 - lam) * s2);
    for (std::size_t i = 0; i < a.size(); ++i)
      affine = std::max(affine, std::abs(mix[i] - (lam * a[i] + (1 - lam) * b[i])));
  }

  // Descent: the guided mean has lower L_tr than the unguided mean. The
  // gradient is taken at the state whose loss is measured (x0_hat = mean).
  const TransitionWindow w{4, 3};
  const auto sched = DiffusionSchedule::cosine(100);
  int decreased = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng() % 45;
    const KeyframeMask m = sample_keyframe_mask(n, 0.05 + 0.05 * (trial % 3), rng());
    const MatrixF mean = test::random_matrix<float>(n, 19, rng), kf = extract_keyframes(
                                                                      test::random_matrix<float>(n, 19, rng), m);
    const int t = 2 + static_cast<int>(rng() % 99);
    const double sigma2 = sched.posterior_variance(t);
    const MatrixF guided = transition_guided_mean(mean, mean, kf, m.keyframe_indices, 1e-2, sigma2, w);
    auto assembled_loss = [&](const MatrixF& x) {
      MatrixD a = x.cast<double>();
      for (int k : m.keyframe_indices)
        for (int c = 0; c < 19; ++c) a(k, c) = kf(k, c);
      return transition_loss(a, m.keyframe_indices, w);
    };
    decreased += assembled_loss(guided) < assembled_loss(mean);
  }
  return {degenerate && affine < 1e-10 && decreased >= 95,
          std::string("s in {0,1} exact: ") + (degenerate ? "yes" : "no") + ", affinity " + fmt("%.1e", affine) +
              ", descent " + std::to_string(decreased) + "/100"};
}

// ---- 6 -----------------------------------------------------------------------

Outcome loss_masking() {
  std::mt19937_64 rng(61);
  bool invariant = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 8 + rng() % 40;
    const MatrixF x0 = test::random_matrix<float>(n, 19, rng), pred = test::random_matrix<float>(n, 19, rng);
    const MatrixF mm = sample_keyframe_mask(n, 0.1 + 0.1 * (trial % 3), rng()).as_matrix(19);
    MatrixF perturbed = pred;
    const MatrixF noise = test::random_matrix<float>(n, 19, rng, 1e3);
    for (std::size_t i = 0; i < perturbed.size(); ++i)
      if (mm[i] == 1.0f) perturbed[i] += noise[i];
    const auto a = simple_loss(x0, pred, mm), b = simple_loss(x0, perturbed, mm);
    invariant = invariant && a.value == b.value && a.grad == b.grad;
  }
  MatrixF x0(4, 2), mask(4, 2);
  mask(1, 0) = mask(1, 1) = 1.0f;
  MatrixF pred = x0;
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += 1.0f;
  const double hand = simple_loss(x0, pred, mask).value;
  return {invariant && hand == 1.0, std::string("bit-identical under keyframe perturbation: ") +
                                        (invariant ? "yes" : "no") + ", 4x2 hand case = " + fmt("%.17g", hand)};
}

// ---- 7 -----------------------------------------------------------------------

Outcome denoiser_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  DenoiserConfig cfg;
  cfg.dim = 19;
  cfg.width = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ff_width = 12;
  cfg.vocab = 17;
  cfg.seed = 71;
  Denoiser<double> model = Denoiser<float>(cfg).cast<double>();
  std::mt19937_64 rng(72);
  const MatrixD x0 = test::random_matrix<double>(6, 19, rng), xt = test::random_matrix<double>(6, 19, rng);
  std::vector<char> rows(6, 0);
  rows[0] = rows[3] = 1;
  MatrixD mask(6, 19), kf(6, 19);
  for (int c = 0; c < 19; ++c) {
    mask(0, c) = mask(3, c) = 1.0;
    kf(0, c) = x0(0, c);
    kf(3, c) = x0(3, c);
  }
  const std::vector<int> tokens{2, 5, 9};
  const ChannelLayout layout;
  auto objective = [&](ag::Tape<double>& tape, ag::Var y) {
    const auto simple = simple_loss(x0, tape.value(y), mask);
    const auto phy = phy_loss(x0, tape.value(y), mask, PhyLossOptions{layout});
    MatrixD g = simple.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += phy.grad[i];
    return std::make_pair(simple.value + phy.total, g);
  };
  auto loss = [&]() {
    ag::Tape<double> tape(false);
    const ag::Var y = model.forward(tape, tape.constant(xt), 7, tokens, tape.constant(kf), rows, false);
    return objective(tape, y).first;
  };
  auto& params = model.parameters();
  params.zero_grad();
  {
    ag::Tape<double> tape(true);
    const ag::Var y = model.forward(tape, tape.constant(xt), 7, tokens, tape.constant(kf), rows, false);
    tape.backward(y, objective(tape, y).second);
  }
  int checked = 0;
  double worst = 0.0;
  for (int guard = 0; checked < 20 && guard < 100000; ++guard) {
    auto& p = params[rng() % params.size()];
    const std::size_t i = rng() % p.value.size();
    if (std::abs(p.grad[i]) < 1e-7) continue;
    const double keep = p.value[i], h = 1e-5;
    p.value[i] = keep + h;
    const double up = loss();
    p.value[i] = keep - h;
    const double down = loss();
    p.value[i] = keep;
    worst = std::max(worst, test::rel_err(p.grad[i], (up - down) / (2 * h)));
    ++checked;
  }
  const double sec = seconds_since(t0);
  return {checked == 20 && worst < 1e-3 && sec < 30.0,
          "worst relative error " + fmt("%.1e", worst) + " on " + std::to_string(checked) + " parameters (" +
              fmt("%.2f", sec) + " s)"};
}

// ---- 8 and 9 -------------------------------------------------------------------

struct TrainedModels {
  ModelBundle keyframe;
  ModelBundle text;
  double train_seconds = 0.0;
  bool reused = false;
};

// Desk-scale settings for the trend criteria. The keyframe model sees rates
// from 2% to 10% during training so that one model serves every ablation
// rate; guidance strength s is lowered from 2.5 because extrapolating away
// from the null branch hurts while the conditional branch is this young.
RunConfig trend_config(const Settings& s) {
  RunConfig cfg;
  cfg.set("train", "steps", s.kfc_steps, "acceptance");
  cfg.set("train", "keyframe_rate", 0.02, "acceptance");
  cfg.set("train", "keyframe_rate_max", 0.10, "acceptance");
  cfg.set("sample", "s", s.cfg_scale, "acceptance");
  cfg.set("eval", "trials", s.trials, "acceptance");
  return cfg;
}

ModelBundle train_bundle(const RunConfig& cfg, const Corpus& corpus, bool conditioning, int steps,
                         const fs::path& path, bool reuse) {
  if (reuse && fs::exists(path)) return load_checkpoint(path);
  TrainConfig tc = cfg.train();
  tc.keyframe_conditioning = conditioning;
  tc.steps = steps;
  DenoiserConfig dc = cfg.model(corpus.dim(), corpus.vocab.size());
  dc.keyframe_encoder = conditioning;
  Denoiser<float> model(dc);
  const int every = std::max(1, tc.steps / 10);
  train(model, corpus, tc, [&](const TrainLogRow& row) {
    if ((row.step + 1) % every == 0)
      std::cerr << "  [" << (conditioning ? "keyframe" : "text-only") << "] step " << row.step + 1 << "/"
                << tc.steps << " loss " << row.losses.total << "\n";
  });
  ModelBundle bundle{std::move(model), tc.diffusion_steps, corpus.stats, corpus.layout, corpus.vocab,
                     json{{"acceptance", true}, {"steps", tc.steps}}};
  save_checkpoint(bundle, path);
  return bundle;
}

TrainedModels& trained_models(const Settings& s) {
  static std::unique_ptr<TrainedModels> models;
  if (models) return *models;
  const RunConfig cfg = trend_config(s);
  const Corpus corpus = generate_corpus(cfg.corpus());
  fs::create_directories(s.work);
  const fs::path kp = s.work / "keyframe_model.json", tp = s.work / "text_model.json";
  const bool reused = s.reuse && fs::exists(kp) && fs::exists(tp);
  const auto t0 = std::chrono::steady_clock::now();
  ModelBundle kfc = train_bundle(cfg, corpus, true, s.kfc_steps, kp, s.reuse);
  ModelBundle text = train_bundle(cfg, corpus, false, s.text_steps, tp, s.reuse);
  models = std::make_unique<TrainedModels>(TrainedModels{std::move(kfc), std::move(text), seconds_since(t0), reused});
  return *models;
}

Corpus held_out_corpus() {
  CorpusSpec spec;
  spec.size = 200;
  spec.seed = 0x5eed;
  return generate_corpus(spec);
}

struct Table2Counts {
  int a = 0, b = 0, c = 0, n = 0;
};

Table2Counts table2_counts(const ModelBundle& kfc, const ModelBundle& text, EvalOptions opt) {
  opt.strategies = {Strategy::DiffKfc, Strategy::DiffKfcNoTg, Strategy::Gradient, Strategy::TextOnly,
                    Strategy::Inpaint};
  const EvalReport r = evaluate({&kfc, &text}, held_out_corpus(), opt);
  std::cerr << "s = " << opt.sampler.s << "\n" << format_table(r);
  const std::size_t k = r.index(Strategy::DiffKfc), notg = r.index(Strategy::DiffKfcNoTg),
                    grad = r.index(Strategy::Gradient), txt = r.index(Strategy::TextOnly);
  Table2Counts out;
  for (const TrialResult& t : r.trials) {
    const auto& p = t.per_strategy;
    out.a += p[k].k_err < p[grad].k_err && p[k].k_err < p[txt].k_err;
    out.b += std::abs(p[k].k_trans - t.real_k_trans) < std::abs(p[notg].k_trans - t.real_k_trans);
    out.c += p[k].ade < p[txt].ade;
    ++out.n;
  }
  return out;
}

std::string describe(const Table2Counts& t) {
  const std::string n = "/" + std::to_string(t.n);
  return "(a) K-Err wins " + std::to_string(t.a) + n + " [>=80%], (b) TG closer " + std::to_string(t.b) + n +
         " [>=70%], (c) ADE wins " + std::to_string(t.c) + n + " [>=90%]";
}

Outcome table2_trends(const Settings& s) {
  TrainedModels& m = trained_models(s);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalOptions opt = trend_config(s).eval();
  const Table2Counts main = table2_counts(m.keyframe, m.text, opt);
  // Same models at the default guidance strength, reported for reference.
  EvalOptions paper = opt;
  paper.sampler.s = RunConfig().sampler().s;
  const Table2Counts ref = table2_counts(m.keyframe, m.text, paper);
  const bool budget = m.reused || m.train_seconds <= 1800.0;
  const bool ok = main.a >= 0.8 * main.n && main.b >= 0.7 * main.n && main.c >= 0.9 * main.n && budget;
  return {ok, "s=" + fmt("%.1f", opt.sampler.s) + ": " + describe(main) + "; training " +
                  (m.reused ? std::string("reused") : fmt("%.0f s", m.train_seconds)) + " [<=1800 s], eval " +
                  fmt("%.0f s", seconds_since(t0)) + " | reference s=" + fmt("%.1f", paper.sampler.s) + ": " +
                  describe(ref)};
}

Outcome table4_trends(const Settings& s) {
  const bool fresh = !trained_models(s).reused;
  TrainedModels& m = trained_models(s);
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = trend_config(s);
  const AblationReport r = ablate({&m.keyframe}, held_out_corpus(), cfg.ablation_rates(), cfg.eval());
  std::cerr << format_table(r);
  const double total = seconds_since(t0) + (fresh ? m.train_seconds : 0.0);
  const bool ok = r.ade_monotone && r.k_err_monotone && r.k_err_ratio >= 5.0 && total <= 2700.0;
  std::string rows;
  for (const auto& row : r.rows)
    rows += " " + fmt("%.2f", row.rate) + ":" + fmt("%.3f", row.mean.ade) + "/" + fmt("%.3f", row.mean.k_err);
  return {ok, std::string("ADE monotone ") + (r.ade_monotone ? "yes" : "no") + ", K-Err monotone " +
                  (r.k_err_monotone ? "yes" : "no") + ", K-Err ratio " + fmt("%.2f", r.k_err_ratio) +
                  " [>=5]; rate:ADE/K-Err" + rows + "; " + fmt("%.0f s", total) + " incl. training"};
}

// ---- 10 ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome cli_determinism(const Settings& s) {
  const fs::path dir = s.work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << json{{"corpus", {{"size", 40}, {"N_max", 32}}},
                                             {"train",
                                              {{"T", 10}, {"steps", 20}, {"batch", 4}, {"d", 16}, {"layers", 1},
                                               {"heads", 2}, {"ff_width", 32}}},
                                             {"eval", {{"trials", 4}, {"pair_count", 2}}}}
                                          .dump();
  {
    std::ofstream kf(dir / "kf.jsonl");
    for (int idx : {0, 7, 15}) kf << json{{"index", idx}, {"frame", std::vector<float>(19, 0.05f * idx)}}.dump() << "\n";
    std::ofstream(dir / "sample.json") << json{{"checkpoint", "model.json"}, {"prompt", "a person jumps in place"},
                                               {"keyframes", "kf.jsonl"}, {"length", 24}, {"csv", "motion.csv"}}
                                              .dump();
  }
  const std::string exe = "\"" + s.kfdiff + "\"", d = "\"" + dir.string() + "/";
  const std::string cfgf = d + "config.json\"";
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {exe + " gen-data --config " + cfgf + " --out " + d + "corpus.jsonl\"", {"corpus.jsonl"}},
      {exe + " train --config " + cfgf + " --corpus " + d + "corpus.jsonl\" --out " + d + "model.json\"",
       {"model.json", "model.json.bin", "model.json.loss.csv"}},
      {exe + " sample " + d + "sample.json\" --out " + d + "motion.jsonl\"", {"motion.jsonl", "motion.csv"}},
      {exe + " evaluate --config " + cfgf + " --checkpoint " + d + "model.json\" --corpus " + d +
           "corpus.jsonl\" --out " + d + "eval.json\"",
       {"eval.json", "eval.json.txt"}},
      {exe + " ablate --config " + cfgf + " --checkpoint " + d + "model.json\" --corpus " + d +
           "corpus.jsonl\" --out " + d + "ablate.json\"",
       {"ablate.json", "ablate.json.txt"}},
  };
  std::vector<std::string> differing;
  int failed = 0, files = 0;
  for (const auto& [cmd, outputs] : commands) {
    std::map<std::string, std::string> first;
    for (int run = 0; run < 2; ++run) {
      if (std::system((cmd + " > " + d + "log.txt\" 2>&1").c_str()) != 0) {
        ++failed;
        std::cerr << "command failed: " << cmd << "\n" << slurp(dir / "log.txt");
        break;
      }
      for (const auto& o : outputs) {
        const std::string bytes = slurp(dir / o);
        if (run == 0) {
          first[o] = bytes;
          ++files;
        } else if (bytes != first[o] || bytes.empty()) {
          differing.push_back(o);
        }
      }
    }
  }
  std::string detail = std::to_string(commands.size()) + " commands, " + std::to_string(files) +
                       " artifacts compared; " + std::to_string(failed) + " failed, " +
                       std::to_string(differing.size()) + " differ";
  for (const auto& o : differing) detail += " " + o;
  return {failed == 0 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kfdiff acceptance criteria"};
  Settings s;
  std::string only;
  s.work = fs::temp_directory_path() / "kfdiff_acceptance";
  std::string work = s.work.string();
  s.kfdiff = KFDIFF_CLI_PATH;
  app.add_option("--only", only, "Comma-separated criterion numbers (default: all)");
  app.add_option("--work", work, "Scratch directory for checkpoints and CLI artifacts");
  app.add_option("--kfdiff", s.kfdiff, "Path to the kfdiff executable");
  app.add_flag("--reuse", s.reuse, "Reuse trained checkpoints found in the work directory");
  app.add_option("--kfc-steps", s.kfc_steps, "Override keyframe-model training steps");
  app.add_option("--text-steps", s.text_steps, "Override text-only model training steps");
  app.add_option("--trials", s.trials, "Trials for the trend criteria");
  app.add_option("--s", s.cfg_scale, "Classifier-free guidance scale for the trend criteria");
  CLI11_PARSE(app, argc, argv);
  s.work = work;

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) selected.insert(std::stoi(item));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"forward-process exactness", forward_exactness},
      {"DCT machinery", dct_machinery},
      {"dilation oracle equivalence", dilation_oracle},
      {"attention mask exactness", attention_mask},
      {"guidance algebra", guidance_algebra},
      {"loss masking", loss_masking},
      {"denoiser gradient correctness", denoiser_gradients},
      {"trained-conditioning trends", [&] { return table2_trends(s); }},
      {"keyframe-rate trends", [&] { return table4_trends(s); }},
      {"CLI determinism", [&] { return cli_determinism(s); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failures;
}
