#include "kfdiff/motion_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace kfdiff {

using json = nlohmann::json;

// ---- labels ----------------------------------------------------------------

std::string_view to_string(Action a) {
  switch (a) {
    case Action::Walk: return "walk";
    case Action::Wave: return "wave";
    case Action::Jump: return "jump";
    case Action::Bend: return "bend";
    case Action::Stand: return "stand";
  }
  return "stand";
}

std::string_view to_string(Modifier m) { return m == Modifier::Slow ? "slow" : "fast"; }

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::Forward: return "forward";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "forward";
}

Action parse_action(std::string_view s) {
  for (Action a : kActions)
    if (to_string(a) == s) return a;
  throw InputError("unknown action label: " + std::string(s));
}

Modifier parse_modifier(std::string_view s) {
  if (s == "slow") return Modifier::Slow;
  if (s == "fast") return Modifier::Fast;
  throw InputError("unknown modifier label: " + std::string(s));
}

Direction parse_direction(std::string_view s) {
  if (s == "forward") return Direction::Forward;
  if (s == "left") return Direction::Left;
  if (s == "right") return Direction::Right;
  throw InputError("unknown direction label: " + std::string(s));
}

// ---- vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary()
    : words_{"<pad>", "<unk>",  "a",       "person", "walks",   "waves", "jumps", "bends", "stands",
             "slowly", "quickly", "forward", "to",     "the",     "left",  "right", "facing"} {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 2 || words_.size() > 64) throw ConfigError("vocabulary size must be in [2, 64]");
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = std::find(words_.begin(), words_.end(), word);
    ids.push_back(it == words_.end() ? kUnknown : static_cast<int>(it - words_.begin()));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '<' || ch == '>') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

std::string Vocabulary::decode(std::span<const int> tokens) const {
  std::string out;
  for (int id : tokens) {
    if (id < 0 || id >= size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    if (id == kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += words_[id];
  }
  return out;
}

std::string prompt_text(Action a, Modifier m, Direction d) {
  std::string verb;
  switch (a) {
    case Action::Walk: verb = "walks"; break;
    case Action::Wave: verb = "waves"; break;
    case Action::Jump: verb = "jumps"; break;
    case Action::Bend: verb = "bends"; break;
    case Action::Stand: verb = "stands"; break;
  }
  const std::string adverb = m == Modifier::Slow ? "slowly" : "quickly";
  const bool travels = a == Action::Walk || a == Action::Jump;
  std::string where;
  switch (d) {
    case Direction::Forward: where = travels ? "forward" : "facing forward"; break;
    case Direction::Left: where = travels ? "to the left" : "facing left"; break;
    case Direction::Right: where = travels ? "to the right" : "facing right"; break;
  }
  return "a person " + verb + " " + adverb + " " + where;
}

Prompt make_prompt(Action a, Modifier m, Direction d, const Vocabulary& vocab) {
  Prompt p;
  p.text = prompt_text(a, m, d);
  p.tokens = vocab.encode(p.text);
  p.action = a;
  p.modifier = m;
  p.direction = d;
  return p;
}

// ---- generator ---------------------------------------------------------------

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Vec3 {
  double x, y, z;
};

// Body-frame placement: forward/lateral offsets from the root ground point.
struct BodyFrame {
  double root_x, root_z, heading;

  Vec3 place(double fwd, double lat, double y) const {
    const double fx = std::sin(heading), fz = std::cos(heading);
    const double sx = std::cos(heading), sz = -std::sin(heading);
    return {root_x + fwd * fx + lat * sx, y, root_z + fwd * fz + lat * sz};
  }
};

double heading_for(Direction d) {
  switch (d) {
    case Direction::Forward: return 0.0;
    case Direction::Left: return kPi / 2;
    case Direction::Right: return -kPi / 2;
  }
  return 0.0;
}

double frac(double v) { return v - std::floor(v); }

}  // namespace

MotionSequence synthesize_motion(const Prompt& prompt, int frames, std::uint64_t seed,
                                 double noise_scale, const ChannelLayout& layout) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double phase = uniform(0.0, 2 * kPi);
  const double amp = uniform(0.8, 1.2);
  const double speed_jitter = uniform(0.85, 1.15);
  const double heading = heading_for(prompt.direction) + uniform(-0.25, 0.25);
  const double x0 = uniform(-0.5, 0.5), z0 = uniform(-0.5, 0.5);
  const double tempo = (prompt.modifier == Modifier::Slow ? 0.6 : 1.5) * uniform(0.9, 1.1);

  const int dim = layout.dim();
  MotionSequence seq;
  seq.fps = CorpusSpec::kFps;
  seq.frames = MatrixF(frames, dim);
  std::vector<double> root_x(frames), root_z(frames);

  const double fps = seq.fps;
  const double fwd_x = std::sin(heading), fwd_z = std::cos(heading);

  for (int i = 0; i < frames; ++i) {
    const double tau = i / fps;
    std::array<Vec3, 5> joint{};
    std::array<double, 2> contact{1.0, 1.0};
    double travel = 0.0;
    switch (prompt.action) {
      case Action::Walk: {
        const double freq = 1.0 * tempo;
        const double speed = 1.2 * tempo * speed_jitter;
        const double stride = speed / freq;
        const double cyc = freq * tau + phase / (2 * kPi);
        travel = speed * tau;
        const BodyFrame body{x0 + travel * fwd_x, z0 + travel * fwd_z, heading};
        joint[0] = body.place(0.0, 0.0, 1.0 + 0.03 * std::cos(4 * kPi * cyc));
        joint[1] = body.place(0.0, 0.0, 1.7 + 0.03 * std::cos(4 * kPi * cyc));
        joint[2] = body.place(0.2 * amp * std::sin(2 * kPi * cyc), 0.25, 1.0);
        for (int f = 0; f < 2; ++f) {
          const double u0 = phase / (2 * kPi) + 0.5 * f;
          const double u = cyc + 0.5 * f;
          const double uf = frac(u);
          const bool stance = uf < 0.5;
          const double swing = stance ? 0.0 : 2.0 * (uf - 0.5);
          // stance foot stays planted in world space while the root advances
          const double foot_world = stride * (std::floor(u) + swing - u0 + 0.25);
          const double rel = foot_world - travel;
          const double lift = stance ? 0.0 : 0.15 * amp * std::sin(kPi * swing);
          joint[3 + f] = body.place(rel, f == 0 ? -0.12 : 0.12, lift);
          contact[f] = stance ? 1.0 : 0.0;
        }
        break;
      }
      case Action::Wave: {
        const double w = 2 * kPi * 1.5 * tempo;
        const BodyFrame body{x0, z0, heading};
        const double sway = 0.02 * std::sin(0.5 * w * tau + phase);
        joint[0] = body.place(0.0, sway, 1.0);
        joint[1] = body.place(0.0, sway, 1.7);
        joint[2] = body.place(0.05, 0.35 + 0.25 * amp * std::sin(w * tau + phase),
                              1.6 + 0.08 * amp * std::sin(2 * w * tau + phase));
        joint[3] = body.place(0.0, -0.12, 0.0);
        joint[4] = body.place(0.0, 0.12, 0.0);
        break;
      }
      case Action::Jump: {
        const double freq = 1.0 * tempo;
        const double cyc = freq * tau + phase / (2 * kPi);
        const double uf = frac(cyc);
        const bool air = uf >= 0.3 && uf < 0.8;
        const double air_phase = air ? (uf - 0.3) / 0.5 : (uf < 0.3 ? 0.0 : 1.0);
        const double hop = 0.4 * speed_jitter;
        travel = hop * (std::floor(cyc) - std::floor(phase / (2 * kPi)) + air_phase);
        const BodyFrame body{x0 + travel * fwd_x, z0 + travel * fwd_z, heading};
        const double height = air ? 0.35 * amp * std::sin(kPi * air_phase) : 0.0;
        const double crouch = air ? 0.0 : 0.12 * std::sin(kPi * (uf < 0.3 ? uf / 0.3 : (uf - 0.8) / 0.2));
        joint[0] = body.place(0.0, 0.0, 1.0 + height - crouch);
        joint[1] = body.place(0.0, 0.0, 1.7 + height - crouch);
        joint[2] = body.place(0.05, 0.25, 1.05 + height - crouch + (air ? 0.3 * amp : 0.0));
        joint[3] = body.place(0.0, -0.12, height);
        joint[4] = body.place(0.0, 0.12, height);
        contact = air ? std::array<double, 2>{0.0, 0.0} : std::array<double, 2>{1.0, 1.0};
        break;
      }
      case Action::Bend: {
        const double w = 2 * kPi * 0.7 * tempo;
        const double b = 0.5 * (1.0 - std::cos(w * tau + phase));
        const BodyFrame body{x0, z0, heading};
        joint[0] = body.place(-0.05 * b, 0.0, 1.0 - 0.05 * b);
        joint[1] = body.place(0.4 * amp * b, 0.0, 1.7 - 0.6 * amp * b);
        joint[2] = body.place(0.3 * amp * b, 0.25, 1.0 - 0.6 * amp * b);
        joint[3] = body.place(0.0, -0.12, 0.0);
        joint[4] = body.place(0.0, 0.12, 0.0);
        break;
      }
      case Action::Stand: {
        const double w = 2 * kPi * 0.3 * tempo;
        const BodyFrame body{x0, z0, heading};
        const double sway = 0.02 * amp * std::sin(w * tau + phase);
        joint[0] = body.place(0.0, sway, 1.0);
        joint[1] = body.place(0.0, 1.2 * sway, 1.7);
        joint[2] = body.place(0.0, 0.25 + sway, 1.0);
        joint[3] = body.place(0.0, -0.12, 0.0);
        joint[4] = body.place(0.0, 0.12, 0.0);
        break;
      }
    }
    root_x[i] = x0 + travel * fwd_x;
    root_z[i] = z0 + travel * fwd_z;
    for (int j = 0; j < layout.joints; ++j) {
      seq.frames(i, 3 * j + 0) = static_cast<float>(joint[j].x);
      seq.frames(i, 3 * j + 1) = static_cast<float>(joint[j].y);
      seq.frames(i, 3 * j + 2) = static_cast<float>(joint[j].z);
    }
    for (int f = 0; f < layout.contact_count(); ++f)
      seq.frames(i, layout.contact_begin() + f) = static_cast<float>(contact[f]);
  }
  const int rv = layout.root_velocity_begin();
  for (int i = 0; i < frames; ++i) {
    const int a = i == 0 ? 0 : i - 1;
    const int b = i == 0 ? std::min(1, frames - 1) : i;
    seq.frames(i, rv) = static_cast<float>(root_x[b] - root_x[a]);
    seq.frames(i, rv + 1) = static_cast<float>(root_z[b] - root_z[a]);
  }
  if (noise_scale > 0) {
    std::normal_distribution<double> noise(0.0, noise_scale);
    for (int i = 0; i < frames; ++i)
      for (int c = 0; c < layout.position_channels(); ++c)
        seq.frames(i, c) = static_cast<float>(seq.frames(i, c) + noise(rng));
  }
  return seq;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  if (spec.size < 1) throw ConfigError("corpus size must be >= 1");
  if (spec.n_max < CorpusSpec::kMinFrames)
    throw ConfigError("N_max must be >= " + std::to_string(CorpusSpec::kMinFrames));
  if (!(spec.noise_scale >= 0) || !std::isfinite(spec.noise_scale))
    throw ConfigError("noise_scale must be finite and >= 0");

  Corpus corpus;
  corpus.spec = spec;
  corpus.records.reserve(spec.size);
  for (int i = 0; i < spec.size; ++i) {
    std::mt19937_64 rng(stream_seed(spec.seed, static_cast<std::uint64_t>(i)));
    const auto action = kActions[rng() % kActions.size()];
    const auto modifier = static_cast<Modifier>(rng() % 2);
    const auto direction = static_cast<Direction>(rng() % 3);
    const int n = CorpusSpec::kMinFrames + static_cast<int>(rng() % (spec.n_max - CorpusSpec::kMinFrames + 1));
    CorpusRecord rec;
    rec.id = i;
    rec.prompt = make_prompt(action, modifier, direction, corpus.vocab);
    rec.motion = synthesize_motion(rec.prompt, n, rng(), spec.noise_scale, corpus.layout);
    rec.motion.prompt_id = i;
    corpus.records.push_back(std::move(rec));
  }
  corpus.stats = compute_stats(corpus.records, corpus.dim());
  return corpus;
}

CorpusStats compute_stats(std::span<const CorpusRecord> records, int dim) {
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double count = 0;
  for (const auto& r : records) {
    if (static_cast<int>(r.motion.frames.cols()) != dim) throw ShapeError("compute_stats: channel count");
    for (std::size_t i = 0; i < r.motion.frames.rows(); ++i)
      for (int c = 0; c < dim; ++c) sum[c] += r.motion.frames(i, c);
    count += static_cast<double>(r.motion.frames.rows());
  }
  if (count == 0) throw InputError("compute_stats: empty corpus");
  CorpusStats stats;
  stats.mean.resize(dim);
  stats.std.resize(dim);
  for (int c = 0; c < dim; ++c) stats.mean[c] = static_cast<float>(sum[c] / count);
  for (const auto& r : records)
    for (std::size_t i = 0; i < r.motion.frames.rows(); ++i)
      for (int c = 0; c < dim; ++c) {
        const double d = r.motion.frames(i, c) - static_cast<double>(stats.mean[c]);
        sq[c] += d * d;
      }
  for (int c = 0; c < dim; ++c)
    stats.std[c] = std::max(static_cast<float>(std::sqrt(sq[c] / count)), CorpusStats::kMinStd);
  return stats;
}

// ---- keyframes -------------------------------------------------------------

std::size_t keyframe_count(std::size_t n, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("keyframe rate must lie in [0, 1]");
  if (n == 0) throw PreconditionError("keyframe mask needs at least one frame");
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(k, 1, n);
}

KeyframeMask sample_keyframe_mask(std::size_t n, double rate, std::uint64_t seed) {
  const std::size_t k = keyframe_count(n, rate);
  std::mt19937_64 rng(seed);
  std::vector<int> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return KeyframeMask::from_indices(n, std::move(pool));
}

KeyframeMask KeyframeMask::from_indices(std::size_t n, std::vector<int> indices) {
  KeyframeMask m;
  m.rows.assign(n, 0);
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) throw RangeError("keyframe index out of range");
    m.rows[i] = 1;
  }
  m.keyframe_indices = std::move(indices);
  return m;
}

MatrixF KeyframeMask::as_matrix(int dim) const {
  MatrixF m(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i])
      for (int c = 0; c < dim; ++c) m(i, c) = 1.0f;
  return m;
}

MatrixF extract_keyframes(const MatrixF& frames, const KeyframeMask& mask) {
  if (mask.frames() != frames.rows()) throw ShapeError("extract_keyframes: frame count mismatch");
  MatrixF out(frames.rows(), frames.cols());
  for (int i : mask.keyframe_indices)
    std::copy(frames.row(i).begin(), frames.row(i).end(), out.row(i).begin());
  return out;
}

// ---- normalization -----------------------------------------------------------

MatrixF normalize(const MatrixF& frames, const CorpusStats& stats) {
  if (stats.mean.size() != frames.cols() || stats.std.size() != frames.cols())
    throw ShapeError("normalize: stats width " + std::to_string(stats.mean.size()) + " vs " +
                     std::to_string(frames.cols()) + " channels");
  MatrixF out(frames.rows(), frames.cols());
  for (std::size_t i = 0; i < frames.rows(); ++i)
    for (std::size_t c = 0; c < frames.cols(); ++c)
      out(i, c) = static_cast<float>((static_cast<double>(frames(i, c)) - stats.mean[c]) /
                                     std::max(stats.std[c], CorpusStats::kMinStd));
  return out;
}

MatrixF denormalize(const MatrixF& frames, const CorpusStats& stats) {
  if (stats.mean.size() != frames.cols() || stats.std.size() != frames.cols())
    throw ShapeError("denormalize: stats width mismatch");
  MatrixF out(frames.rows(), frames.cols());
  for (std::size_t i = 0; i < frames.rows(); ++i)
    for (std::size_t c = 0; c < frames.cols(); ++c)
      out(i, c) = static_cast<float>(static_cast<double>(frames(i, c)) *
                                         std::max(stats.std[c], CorpusStats::kMinStd) +
                                     stats.mean[c]);
  return out;
}

// ---- file format -------------------------------------------------------------

namespace {

json layout_json(const ChannelLayout& l) {
  return json{{"joints", l.joints},
              {"foot_joints", l.foot_joints},
              {"hand_joint", l.hand_joint},
              {"contact_channels", {l.contact_begin(), l.contact_begin() + 1}},
              {"root_velocity_channels", {l.root_velocity_begin(), l.root_velocity_begin() + 1}}};
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus: " + path.string());
  json header{{"version", kCorpusVersion},
              {"D", corpus.dim()},
              {"N_max", corpus.spec.n_max},
              {"size", corpus.spec.size},
              {"seed", corpus.spec.seed},
              {"noise_scale", corpus.spec.noise_scale},
              {"vocab", corpus.vocab.words()},
              {"layout", layout_json(corpus.layout)},
              {"stats", {{"mean", corpus.stats.mean}, {"std", corpus.stats.std}}}};
  out << header.dump() << '\n';
  for (const auto& r : corpus.records) {
    json frames = json::array();
    for (std::size_t i = 0; i < r.motion.frames.rows(); ++i) {
      const auto row = r.motion.frames.row(i);
      frames.push_back(std::vector<float>(row.begin(), row.end()));
    }
    json rec{{"id", r.id},
             {"prompt_text", r.prompt.text},
             {"prompt_tokens", r.prompt.tokens},
             {"action", to_string(r.prompt.action)},
             {"modifier", to_string(r.prompt.modifier)},
             {"direction", to_string(r.prompt.direction)},
             {"fps", r.motion.fps},
             {"frames", std::move(frames)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing corpus: " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("corpus not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("corpus is empty: " + path.string());
  Corpus corpus;
  try {
    const json header = json::parse(line);
    const int version = header.at("version").get<int>();
    if (version != kCorpusVersion)
      throw VersionError("corpus version " + std::to_string(version) + " not supported (expected " +
                         std::to_string(kCorpusVersion) + ")");
    corpus.spec.n_max = header.at("N_max").get<int>();
    corpus.spec.size = header.value("size", 0);
    corpus.spec.seed = header.value("seed", std::uint64_t{0});
    corpus.spec.noise_scale = header.value("noise_scale", 0.0);
    corpus.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    const auto& layout = header.at("layout");
    corpus.layout.joints = layout.at("joints").get<int>();
    corpus.layout.foot_joints = layout.at("foot_joints").get<std::array<int, 2>>();
    corpus.layout.hand_joint = layout.at("hand_joint").get<int>();
    if (header.at("D").get<int>() != corpus.dim()) throw ShapeError("corpus header D does not match layout");
    corpus.stats.mean = header.at("stats").at("mean").get<std::vector<float>>();
    corpus.stats.std = header.at("stats").at("std").get<std::vector<float>>();
    if (static_cast<int>(corpus.stats.mean.size()) != corpus.dim() ||
        static_cast<int>(corpus.stats.std.size()) != corpus.dim())
      throw ShapeError("corpus stats width does not match D");
    const int dim = corpus.dim();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      CorpusRecord r;
      r.id = rec.at("id").get<int>();
      r.prompt.text = rec.at("prompt_text").get<std::string>();
      r.prompt.tokens = rec.at("prompt_tokens").get<std::vector<int>>();
      r.prompt.action = parse_action(rec.at("action").get<std::string>());
      r.prompt.modifier = parse_modifier(rec.at("modifier").get<std::string>());
      r.prompt.direction = parse_direction(rec.at("direction").get<std::string>());
      r.motion.fps = rec.at("fps").get<int>();
      r.motion.prompt_id = r.id;
      const auto& frames = rec.at("frames");
      r.motion.frames = MatrixF(frames.size(), dim);
      for (std::size_t i = 0; i < frames.size(); ++i) {
        if (static_cast<int>(frames[i].size()) != dim)
          throw ShapeError("record " + std::to_string(r.id) + ": frame width != D");
        for (int c = 0; c < dim; ++c) {
          const float v = frames[i][c].get<float>();
          if (!std::isfinite(v)) throw InputError("record " + std::to_string(r.id) + ": non-finite value");
          r.motion.frames(i, c) = v;
        }
      }
      corpus.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed corpus file: ") + e.what());
  }
  corpus.spec.size = static_cast<int>(corpus.records.size());
  return corpus;
}

}  // namespace kfdiff
