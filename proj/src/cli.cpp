#include "kfdiff/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>
#include <sstream>

#include "kfdiff/checkpoint.hpp"
#include "kfdiff/config.hpp"
#include "kfdiff/errors.hpp"
#include "kfdiff/evaluation.hpp"
#include "kfdiff/guidance.hpp"
#include "kfdiff/trainer.hpp"

namespace kfdiff {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kArtifactVersion = 1;

int exit_code_for(const std::string& category) {
  static const std::map<std::string, int> codes{
      {"config", 2},        {"shape", 3}, {"range", 4},   {"input", 5},        {"precondition", 6},
      {"numeric", 7},       {"version", 8}, {"io", 9},    {"missing-file", 10},
  };
  const auto it = codes.find(category);
  return it == codes.end() ? 1 : it->second;
}

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus;
  std::vector<std::string> checkpoints;
  std::optional<std::string> strategy;
  std::optional<double> rate, r, s;
  std::optional<int> trials;
  std::string manifest;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path q = p;
  q += suffix;
  return q;
}

RunConfig resolve(const Flags& f, const std::map<std::string, std::string>& env) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.merge_file(f.config);
  cfg.merge_env(env);
  return cfg;
}

json artifact_header(const std::string& command, const RunConfig& cfg) {
  return json{{"version", kArtifactVersion}, {"command", command}, {"config", cfg.resolved()}};
}

Corpus load_corpus(const Flags& f) {
  if (f.corpus.empty()) throw ConfigError("--corpus is required");
  return read_corpus(f.corpus);
}

void require_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const Flags& f, const std::map<std::string, std::string>& env, std::ostream& out) {
  RunConfig cfg = resolve(f, env);
  if (f.seed) cfg.set("corpus", "seed", *f.seed, "--seed");
  require_out(f);
  const Corpus corpus = generate_corpus(cfg.corpus());
  if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
  write_corpus(corpus, f.out);
  out << "wrote " << corpus.records.size() << " sequences to " << f.out << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Flags& f, const std::map<std::string, std::string>& env, std::ostream& out) {
  RunConfig cfg = resolve(f, env);
  if (f.seed) cfg.set("train", "seed", *f.seed, "--seed");
  if (f.rate) cfg.set("train", "keyframe_rate", *f.rate, "--rate");
  require_out(f);
  const Corpus corpus = load_corpus(f);
  const TrainConfig tc = cfg.train();
  const DenoiserConfig dc = cfg.model(corpus.dim(), corpus.vocab.size());
  Denoiser<float> model(dc);

  std::ostringstream log;
  log << "step,simple,phy,total\n";
  log.precision(9);
  const int every = std::max(1, tc.steps / 20);
  train(model, corpus, tc, [&](const TrainLogRow& row) {
    log << row.step << ',' << row.losses.simple << ',' << row.losses.phy << ',' << row.losses.total << '\n';
    if ((row.step + 1) % every == 0 || row.step + 1 == tc.steps)
      out << "step " << row.step + 1 << "/" << tc.steps << " total " << row.losses.total << "\n" << std::flush;
  });

  json run = artifact_header("train", cfg);
  run["corpus"] = {{"path", f.corpus}, {"size", corpus.records.size()}, {"seed", corpus.spec.seed}};
  ModelBundle bundle{std::move(model), tc.diffusion_steps, corpus.stats, corpus.layout, corpus.vocab, run};
  save_checkpoint(bundle, f.out);
  write_text(with_suffix(f.out, ".loss.csv"), log.str());
  out << "wrote checkpoint " << f.out << "\n";
  return 0;
}

// ---- sample -----------------------------------------------------------------

struct Keyframes {
  std::vector<int> indices;
  std::vector<std::vector<float>> frames;
};

Keyframes read_keyframes(const fs::path& path, int dim) {
  if (!fs::exists(path)) throw MissingFileError("keyframe file not found: " + path.string());
  std::ifstream in(path);
  Keyframes kf;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      kf.indices.push_back(j.at("index").get<int>());
      kf.frames.push_back(j.at("frame").get<std::vector<float>>());
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (static_cast<int>(kf.frames.back().size()) != dim)
      throw ShapeError(path.string() + ":" + std::to_string(line_no) + ": keyframe has " +
                       std::to_string(kf.frames.back().size()) + " values, expected " + std::to_string(dim));
  }
  return kf;
}

int cmd_sample(const Flags& f, const std::map<std::string, std::string>& env, std::ostream& out) {
  RunConfig cfg = resolve(f, env);
  json manifest = json::object();
  if (!f.manifest.empty()) {
    if (!fs::exists(f.manifest)) throw MissingFileError("manifest not found: " + f.manifest);
    try {
      std::ifstream in(f.manifest);
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw InputError(f.manifest + ": " + e.what());
    }
    if (!manifest.is_object()) throw InputError(f.manifest + ": manifest must be a JSON object");
  }
  static const std::vector<std::string> known{"checkpoint", "prompt", "keyframes", "length", "r",
                                              "s",          "seed",   "strategy",  "csv",    "record"};
  for (const auto& [key, _] : manifest.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(f.manifest + ": unknown manifest key '" + key + "'");
  const fs::path base = f.manifest.empty() ? fs::path() : fs::path(f.manifest).parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  try {
    for (const char* key : {"r", "s", "seed", "strategy"})
      if (manifest.contains(key)) cfg.set("sample", key, manifest[key], f.manifest);
  } catch (const json::exception& e) {
    throw ConfigError(f.manifest + ": " + e.what());
  }
  if (f.seed) cfg.set("sample", "seed", *f.seed, "--seed");
  if (f.r) cfg.set("sample", "r", *f.r, "--r");
  if (f.s) cfg.set("sample", "s", *f.s, "--s");
  if (f.strategy) cfg.set("sample", "strategy", *f.strategy, "--strategy");
  if (f.rate) cfg.set("eval", "rate", *f.rate, "--rate");
  require_out(f);

  std::string ckpt;
  if (f.checkpoints.size() > 1) throw ConfigError("sample takes a single --checkpoint");
  if (!f.checkpoints.empty()) {
    ckpt = f.checkpoints.front();
  } else if (manifest.contains("checkpoint")) {
    ckpt = rel(manifest["checkpoint"].get<std::string>()).string();
  } else {
    throw ConfigError("no checkpoint given (--checkpoint or manifest 'checkpoint')");
  }
  ModelBundle bundle = load_checkpoint(ckpt);
  const Strategy strategy = parse_strategy(cfg.resolved()["sample"]["strategy"].get<std::string>());
  const SamplerConfig sc = cfg.sampler();
  const int dim = bundle.model.config().dim;

  std::string prompt;
  std::size_t length = 0;
  KeyframeMask mask;
  MatrixF raw_keyframes;
  if (manifest.contains("record")) {
    // Prompt, length and keyframes taken from a corpus record.
    const Corpus corpus = load_corpus(f);
    const int id = manifest["record"].get<int>();
    if (id < 0 || static_cast<std::size_t>(id) >= corpus.records.size())
      throw RangeError("record " + std::to_string(id) + " outside corpus");
    const CorpusRecord& rec = corpus.records[id];
    prompt = rec.prompt.text;
    length = rec.motion.length();
    mask = sample_keyframe_mask(length, cfg.resolved()["eval"]["rate"].get<double>(), stream_seed(sc.seed, 0x6b66ull));
    raw_keyframes = extract_keyframes(rec.motion.frames, mask);
  } else {
    if (!manifest.contains("prompt")) throw ConfigError("manifest needs 'prompt' (or 'record' with --corpus)");
    prompt = manifest["prompt"].get<std::string>();
    Keyframes kf;
    if (manifest.contains("keyframes")) kf = read_keyframes(rel(manifest["keyframes"].get<std::string>()), dim);
    int last = -1;
    for (int i : kf.indices) last = std::max(last, i);
    length = manifest.contains("length") ? manifest["length"].get<std::size_t>() : static_cast<std::size_t>(last + 1);
    if (length < 1) throw ConfigError("manifest needs 'length' when no keyframes are given");
    for (int i : kf.indices)
      if (i < 0 || static_cast<std::size_t>(i) >= length)
        throw RangeError("keyframe index " + std::to_string(i) + " outside [0, " + std::to_string(length) + ")");
    mask = KeyframeMask::from_indices(length, kf.indices);
    raw_keyframes = MatrixF(length, dim);
    for (std::size_t k = 0; k < kf.indices.size(); ++k)
      for (int c = 0; c < dim; ++c) raw_keyframes(kf.indices[k], c) = kf.frames[k][c];
  }
  const bool needs_kf = strategy != Strategy::TextOnly;
  if (needs_kf && mask.count() == 0) throw ConfigError("strategy " + std::string(to_string(strategy)) + " needs keyframes");

  const MatrixF normalized_kf = extract_keyframes(normalize(raw_keyframes, bundle.stats), mask);
  const SampleRequest req{bundle.vocab.encode(prompt), length, normalized_kf, mask};
  const MatrixF motion =
      denormalize(sample_strategy(strategy, bundle.model, req, sc, bundle.schedule()), bundle.stats);

  json header = artifact_header("sample", cfg);
  header["kind"] = "motion";
  header["frames"] = length;
  header["D"] = dim;
  header["fps"] = CorpusSpec::kFps;
  header["prompt"] = prompt;
  header["strategy"] = std::string(to_string(strategy));
  header["keyframes"] = mask.keyframe_indices;
  header["checkpoint"] = ckpt;
  std::ostringstream jl;
  jl << header.dump() << '\n';
  for (std::size_t i = 0; i < motion.rows(); ++i) {
    json row{{"frame", i}, {"values", std::vector<float>(motion.row(i).begin(), motion.row(i).end())}};
    jl << row.dump() << '\n';
  }
  write_text(f.out, jl.str());
  if (manifest.contains("csv")) {
    std::ostringstream csv;
    csv << "frame,channel,value\n";
    csv.precision(9);
    for (std::size_t i = 0; i < motion.rows(); ++i)
      for (std::size_t c = 0; c < motion.cols(); ++c) csv << i << ',' << c << ',' << motion(i, c) << '\n';
    write_text(rel(manifest["csv"].get<std::string>()), csv.str());
  }
  out << "wrote " << length << " frames to " << f.out << "\n";
  return 0;
}

// ---- evaluate / ablate --------------------------------------------------------

void apply_eval_flags(RunConfig& cfg, const Flags& f) {
  if (f.seed) cfg.set("eval", "seed", *f.seed, "--seed");
  if (f.trials) cfg.set("eval", "trials", *f.trials, "--trials");
  if (f.r) cfg.set("sample", "r", *f.r, "--r");
  if (f.s) cfg.set("sample", "s", *f.s, "--s");
}

int cmd_evaluate(const Flags& f, const std::map<std::string, std::string>& env, std::ostream& out) {
  RunConfig cfg = resolve(f, env);
  apply_eval_flags(cfg, f);
  if (f.rate) cfg.set("eval", "rate", *f.rate, "--rate");
  if (f.strategy) {
    json list = json::array();
    std::stringstream ss(*f.strategy);
    std::string item;
    while (std::getline(ss, item, ',')) list.push_back(item);
    cfg.set("eval", "strategies", list, "--strategy");
  }
  require_out(f);
  if (f.checkpoints.empty() || f.checkpoints.size() > 2)
    throw ConfigError("evaluate takes --checkpoint KEYFRAME_MODEL [--checkpoint TEXT_ONLY_MODEL]");
  const EvalOptions opt = cfg.eval();
  const Corpus corpus = load_corpus(f);
  const ModelBundle keyframe = load_checkpoint(f.checkpoints[0]);
  std::optional<ModelBundle> baseline;
  if (f.checkpoints.size() == 2) baseline.emplace(load_checkpoint(f.checkpoints[1]));
  const EvalReport report = evaluate({&keyframe, baseline ? &*baseline : nullptr}, corpus, opt);

  json j = artifact_header("evaluate", cfg);
  j["inputs"] = {{"corpus", f.corpus}, {"checkpoints", f.checkpoints}};
  j["report"] = to_json(report);
  write_text(f.out, j.dump(2) + "\n");
  const std::string table = format_table(report);
  write_text(with_suffix(f.out, ".txt"), table);
  out << table;
  return 0;
}

int cmd_ablate(const Flags& f, const std::map<std::string, std::string>& env, std::ostream& out) {
  RunConfig cfg = resolve(f, env);
  apply_eval_flags(cfg, f);
  require_out(f);
  const std::vector<double> rates = cfg.ablation_rates();
  if (f.checkpoints.size() != 1 && f.checkpoints.size() != rates.size())
    throw ConfigError("ablate takes one --checkpoint or one per rate (" + std::to_string(rates.size()) + ")");
  const EvalOptions opt = cfg.eval();
  const Corpus corpus = load_corpus(f);
  std::vector<ModelBundle> bundles;
  bundles.reserve(f.checkpoints.size());
  for (const auto& c : f.checkpoints) bundles.push_back(load_checkpoint(c));
  std::vector<const ModelBundle*> ptrs;
  for (const auto& b : bundles) ptrs.push_back(&b);
  const AblationReport report = ablate(ptrs, corpus, rates, opt);

  json j = artifact_header("ablate", cfg);
  j["inputs"] = {{"corpus", f.corpus}, {"checkpoints", f.checkpoints}};
  j["report"] = to_json(report);
  write_text(f.out, j.dump(2) + "\n");
  const std::string table = format_table(report);
  write_text(with_suffix(f.out, ".txt"), table);
  out << table;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::map<std::string, std::string>& env) {
  CLI::App app{"Keyframe-conditioned text-to-motion diffusion toolkit", "kfdiff"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON configuration file");
    sub->add_option("--seed", f.seed, "Seed for this command");
    sub->add_option("--out", f.out, "Output path");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic motion corpus");
  common(gen);
  CLI::App* tr = app.add_subcommand("train", "Train a denoiser");
  common(tr);
  tr->add_option("--corpus", f.corpus, "Training corpus (JSONL)");
  tr->add_option("--rate", f.rate, "Training keyframe rate");
  CLI::App* sm = app.add_subcommand("sample", "Generate one motion");
  common(sm);
  sm->add_option("manifest", f.manifest, "Sampling manifest (JSON)");
  sm->add_option("--checkpoint", f.checkpoints, "Checkpoint manifest");
  sm->add_option("--corpus", f.corpus, "Corpus for manifest 'record' lookups");
  sm->add_option("--strategy", f.strategy, "diffkfc | diffkfc-notg | inpaint | grad | text-only");
  sm->add_option("--rate", f.rate, "Keyframe rate for 'record' manifests");
  sm->add_option("--r", f.r, "Transition guidance scale");
  sm->add_option("--s", f.s, "Classifier-free guidance scale");
  CLI::App* ev = app.add_subcommand("evaluate", "Compare strategies on paired trials");
  common(ev);
  ev->add_option("--checkpoint", f.checkpoints, "Keyframe model, then optional text-only model");
  ev->add_option("--corpus", f.corpus, "Evaluation corpus (JSONL)");
  ev->add_option("--strategy", f.strategy, "Comma-separated strategies");
  ev->add_option("--rate", f.rate, "Keyframe rate");
  ev->add_option("--r", f.r, "Transition guidance scale");
  ev->add_option("--s", f.s, "Classifier-free guidance scale");
  ev->add_option("--trials", f.trials, "Number of trials");
  CLI::App* ab = app.add_subcommand("ablate", "Keyframe-rate ablation");
  common(ab);
  ab->add_option("--checkpoint", f.checkpoints, "One checkpoint, or one per rate");
  ab->add_option("--corpus", f.corpus, "Evaluation corpus (JSONL)");
  ab->add_option("--r", f.r, "Transition guidance scale");
  ab->add_option("--s", f.s, "Classifier-free guidance scale");
  ab->add_option("--trials", f.trials, "Number of trials");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (app.get_subcommands().size() == 1 && app.get_subcommands().front()->get_help_ptr() &&
        app.get_subcommands().front()->get_help_ptr()->count() > 0) {
      out << app.get_subcommands().front()->help();
      return 0;
    }
    err << "error: config: " << msg << "\n";
    return exit_code_for("config");
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(f, env, out);
    if (name == "train") return cmd_train(f, env, out);
    if (name == "sample") return cmd_sample(f, env, out);
    if (name == "evaluate") return cmd_evaluate(f, env, out);
    return cmd_ablate(f, env, out);
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const nlohmann::json::exception& e) {
    err << "error: input: " << e.what() << "\n";
    return exit_code_for("input");
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace kfdiff
