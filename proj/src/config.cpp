#include "kfdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "kfdiff/errors.hpp"

extern char** environ;

namespace kfdiff {

using json = nlohmann::json;

const json& RunConfig::defaults() {
  static const json d = {
      {"corpus", {{"size", 500}, {"N_max", 64}, {"seed", 0}, {"noise_scale", 0.01}}},
      {"train",
       {{"T", 100},
        {"steps", 3000},
        {"batch", 16},
        {"lr", 1e-3},
        {"warmup_steps", 100},
        {"grad_clip", 1.0},
        {"d", 64},
        {"layers", 4},
        {"heads", 4},
        {"ff_width", 128},
        {"keyframe_rate", 0.05},
        {"keyframe_rate_max", 0.0},
        {"dropout_rate", 0.1},
        {"lambda_phy", 1.0},
        {"lambda_vel", 1.0},
        {"lambda_foot", 1.0},
        {"keyframe_conditioning", true},
        {"seed", 0}}},
      {"sample",
       {{"r", 100.0},
        {"s", 2.5},
        {"l", 4},
        {"m", 3},
        {"tg_steps", 0},
        {"grad_scale", 100.0},
        {"variance", "posterior"},
        {"strategy", "diffkfc"},
        {"num_samples", 1},
        {"seed", 0}}},
      {"eval",
       {{"trials", 50},
        {"pair_count", 25},
        {"rate", 0.05},
        {"strategies", {"diffkfc", "inpaint", "grad", "text-only"}},
        {"rates", {0.0, 0.02, 0.05, 0.10}},
        {"threads", 0},
        {"seed", 0}}},
  };
  return d;
}

RunConfig::RunConfig() : j_(defaults()) {}

namespace {

bool compatible(const json& def, const json& v) {
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return false;
}

const char* type_name(const json& def) {
  if (def.is_number_integer()) return "integer";
  if (def.is_number()) return "number";
  if (def.is_boolean()) return "boolean";
  if (def.is_string()) return "string";
  if (def.is_array()) return "array";
  return "value";
}

}  // namespace

void RunConfig::set(const std::string& section, const std::string& key, const json& value,
                    const std::string& origin) {
  const json& d = defaults();
  if (!d.contains(section)) throw ConfigError(origin + ": unknown section '" + section + "'");
  if (!d[section].contains(key)) throw ConfigError(origin + ": unknown key '" + section + "." + key + "'");
  const json& def = d[section][key];
  if (!compatible(def, value))
    throw ConfigError(origin + ": " + section + "." + key + " must be " + type_name(def) + ", got " + value.dump());
  if (key == "seed" && value.is_number_integer() && !value.is_number_unsigned() && value.get<long long>() < 0)
    throw ConfigError(origin + ": " + section + ".seed must be non-negative");
  j_[section][key] = value;
}

void RunConfig::merge(const json& overrides, const std::string& origin) {
  if (!overrides.is_object()) throw ConfigError(origin + ": configuration must be a JSON object");
  for (const auto& [section, body] : overrides.items()) {
    if (!defaults().contains(section)) throw ConfigError(origin + ": unknown section '" + section + "'");
    if (!body.is_object()) throw ConfigError(origin + ": section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) set(section, key, value, origin);
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("config file not found: " + path.string());
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  merge(j, path.string());
}

void RunConfig::merge_env(const std::map<std::string, std::string>& env) {
  const json& d = defaults();
  for (const auto& [name, raw] : env) {
    if (name.rfind("KFDIFF_", 0) != 0) continue;
    if (name == "KFDIFF_ISA") continue;  // kernel selection, not a run setting
    bool matched = false;
    for (const auto& [section, body] : d.items()) {
      std::string prefix = "KFDIFF_" + section + "_";
      std::transform(prefix.begin(), prefix.end(), prefix.begin(), [](unsigned char c) { return std::toupper(c); });
      if (name.rfind(prefix, 0) != 0) continue;
      const std::string suffix = name.substr(prefix.size());
      for (const auto& [key, def] : body.items()) {
        std::string upper = key;
        std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
        if (upper != suffix) continue;
        json value;
        if (def.is_string()) {
          value = raw;
        } else if (def.is_array() && !raw.empty() && raw.front() != '[') {
          // Comma-separated list.
          value = json::array();
          std::size_t pos = 0;
          while (pos <= raw.size()) {
            const std::size_t end = std::min(raw.find(',', pos), raw.size());
            const std::string item = raw.substr(pos, end - pos);
            if (def.empty() || def.front().is_string()) {
              value.push_back(item);
            } else {
              try {
                value.push_back(json::parse(item));
              } catch (const json::exception&) {
                throw ConfigError(name + ": cannot parse list item '" + item + "'");
              }
            }
            pos = end + 1;
          }
        } else {
          try {
            value = json::parse(raw);
          } catch (const json::exception&) {
            throw ConfigError(name + ": cannot parse value '" + raw + "'");
          }
        }
        set(section, key, value, name);
        matched = true;
      }
    }
    if (!matched) throw ConfigError(name + ": unknown configuration override");
  }
}

std::map<std::string, std::string> kfdiff_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(0, eq);
    if (name.rfind("KFDIFF_", 0) == 0) out[name] = entry.substr(eq + 1);
  }
  return out;
}

CorpusSpec RunConfig::corpus() const {
  const json& c = j_["corpus"];
  CorpusSpec s;
  s.size = c["size"].get<int>();
  s.n_max = c["N_max"].get<int>();
  s.seed = c["seed"].get<std::uint64_t>();
  s.noise_scale = c["noise_scale"].get<double>();
  if (s.size < 1) throw ConfigError("corpus.size must be >= 1");
  if (s.n_max < CorpusSpec::kMinFrames)
    throw ConfigError("corpus.N_max must be >= " + std::to_string(CorpusSpec::kMinFrames));
  if (!(s.noise_scale >= 0.0)) throw ConfigError("corpus.noise_scale must be >= 0");
  return s;
}

TrainConfig RunConfig::train() const {
  const json& t = j_["train"];
  TrainConfig c;
  c.diffusion_steps = t["T"].get<int>();
  c.steps = t["steps"].get<int>();
  c.batch = t["batch"].get<int>();
  c.lr = t["lr"].get<double>();
  c.warmup_steps = t["warmup_steps"].get<int>();
  c.grad_clip = t["grad_clip"].get<double>();
  c.keyframe_rate = t["keyframe_rate"].get<double>();
  c.keyframe_rate_max = t["keyframe_rate_max"].get<double>();
  c.dropout_rate = t["dropout_rate"].get<double>();
  c.lambda_phy = t["lambda_phy"].get<double>();
  c.lambda_vel = t["lambda_vel"].get<double>();
  c.lambda_foot = t["lambda_foot"].get<double>();
  c.keyframe_conditioning = t["keyframe_conditioning"].get<bool>();
  c.seed = t["seed"].get<std::uint64_t>();
  c.validate();
  return c;
}

DenoiserConfig RunConfig::model(int dim, int vocab) const {
  const json& t = j_["train"];
  DenoiserConfig c = DenoiserConfig::desk(dim, vocab);
  c.width = t["d"].get<int>();
  c.layers = t["layers"].get<int>();
  c.heads = t["heads"].get<int>();
  c.ff_width = t["ff_width"].get<int>();
  c.keyframe_encoder = t["keyframe_conditioning"].get<bool>();
  c.seed = stream_seed(t["seed"].get<std::uint64_t>(), 0x696e6974ull);
  c.validate();
  return c;
}

SamplerConfig RunConfig::sampler() const {
  const json& s = j_["sample"];
  SamplerConfig c;
  c.r = s["r"].get<double>();
  c.s = s["s"].get<double>();
  c.window.l = s["l"].get<int>();
  c.window.m = s["m"].get<int>();
  c.tg_steps = s["tg_steps"].get<int>();
  c.grad_scale = s["grad_scale"].get<double>();
  const std::string variance = s["variance"].get<std::string>();
  if (variance == "posterior") {
    c.variance = VarianceKind::Posterior;
  } else if (variance == "beta") {
    c.variance = VarianceKind::Beta;
  } else {
    throw ConfigError("sample.variance must be 'posterior' or 'beta'");
  }
  c.seed = s["seed"].get<std::uint64_t>();
  c.validate();
  return c;
}

EvalOptions RunConfig::eval() const {
  const json& e = j_["eval"];
  EvalOptions o;
  o.trials = e["trials"].get<int>();
  o.pair_count = e["pair_count"].get<int>();
  o.rate = e["rate"].get<double>();
  o.threads = e["threads"].get<int>();
  o.seed = e["seed"].get<std::uint64_t>();
  o.num_samples = j_["sample"]["num_samples"].get<int>();
  o.sampler = sampler();
  o.strategies.clear();
  for (const auto& s : e["strategies"]) {
    if (!s.is_string()) throw ConfigError("eval.strategies must list strategy names");
    o.strategies.push_back(parse_strategy(s.get<std::string>()));
  }
  o.validate();
  return o;
}

std::vector<double> RunConfig::ablation_rates() const {
  std::vector<double> rates;
  for (const auto& r : j_["eval"]["rates"]) {
    if (!r.is_number()) throw ConfigError("eval.rates must be numbers");
    rates.push_back(r.get<double>());
  }
  return rates;
}

}  // namespace kfdiff
