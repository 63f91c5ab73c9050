#include "kfdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "kfdiff/errors.hpp"

namespace kfdiff {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

json to_json(const DenoiserConfig& c) {
  return json{{"dim", c.dim},         {"width", c.width},       {"layers", c.layers},
              {"heads", c.heads},     {"ff_width", c.ff_width}, {"vocab", c.vocab},
              {"dilation", c.dilation}, {"keyframe_encoder", c.keyframe_encoder}, {"seed", c.seed}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.dim = j.at("dim").get<int>();
  c.width = j.at("width").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_width = j.at("ff_width").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.dilation = j.at("dilation").get<std::vector<int>>();
  c.keyframe_encoder = j.at("keyframe_encoder").get<bool>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

namespace {

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p += ".bin";
  return p;
}

}  // namespace

void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path) {
  const auto& params = b.model.parameters();
  json tensors = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"offset", offset},
                       {"dtype", "float32-le"}});
    offset += p.value.size() * sizeof(float);
  }
  const std::filesystem::path blob = blob_path(path);
  json manifest{{"version", kCheckpointVersion},
                {"blob", blob.filename().string()},
                {"blob_bytes", offset},
                {"model", to_json(b.model.config())},
                {"diffusion", {{"schedule", "cosine"}, {"T", b.diffusion_steps}}},
                {"stats", {{"mean", b.stats.mean}, {"std", b.stats.std}}},
                {"layout",
                 {{"joints", b.layout.joints}, {"foot_joints", b.layout.foot_joints}, {"hand_joint", b.layout.hand_joint}}},
                {"vocab", b.vocab.words()},
                {"run_config", b.run_config},
                {"tensors", tensors}};

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream bin(blob, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + blob.string());
  for (std::size_t i = 0; i < params.size(); ++i)
    bin.write(reinterpret_cast<const char*>(params[i].value.data()),
              static_cast<std::streamsize>(params[i].value.size() * sizeof(float)));
  if (!bin) throw IoError("write failed: " + blob.string());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("checkpoint not found: " + path.string());
  json m;
  try {
    std::ifstream in(path);
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  try {
    const int version = m.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    const DenoiserConfig cfg = denoiser_config_from_json(m.at("model"));
    const std::string schedule = m.at("diffusion").at("schedule").get<std::string>();
    if (schedule != "cosine") throw ConfigError("unsupported noise schedule: " + schedule);

    ChannelLayout layout;
    layout.joints = m.at("layout").at("joints").get<int>();
    layout.foot_joints = m.at("layout").at("foot_joints").get<std::array<int, 2>>();
    layout.hand_joint = m.at("layout").at("hand_joint").get<int>();

    ModelBundle b{Denoiser<float>(cfg),
                  m.at("diffusion").at("T").get<int>(),
                  CorpusStats{m.at("stats").at("mean").get<std::vector<float>>(),
                              m.at("stats").at("std").get<std::vector<float>>()},
                  layout,
                  Vocabulary(m.at("vocab").get<std::vector<std::string>>()),
                  m.value("run_config", json::object())};
    if (b.layout.dim() != cfg.dim || static_cast<int>(b.stats.mean.size()) != cfg.dim ||
        static_cast<int>(b.stats.std.size()) != cfg.dim)
      throw ShapeError("checkpoint layout/stats do not match model dim " + std::to_string(cfg.dim));
    if (b.vocab.size() != cfg.vocab) throw ShapeError("checkpoint vocabulary size does not match model");

    std::filesystem::path blob = path.parent_path() / m.at("blob").get<std::string>();
    if (!std::filesystem::exists(blob)) throw MissingFileError("checkpoint blob not found: " + blob.string());
    const std::size_t bytes = std::filesystem::file_size(blob);
    if (bytes != m.at("blob_bytes").get<std::size_t>()) throw InputError("checkpoint blob size mismatch");
    std::ifstream bin(blob, std::ios::binary);
    std::vector<char> raw(bytes);
    bin.read(raw.data(), static_cast<std::streamsize>(bytes));
    if (!bin) throw IoError("cannot read " + blob.string());

    auto& params = b.model.parameters();
    const auto& tensors = m.at("tensors");
    if (tensors.size() != params.size())
      throw ShapeError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                       std::to_string(params.size()));
    for (const auto& t : tensors) {
      const std::string name = t.at("name").get<std::string>();
      if (!params.contains(name)) throw ShapeError("unknown tensor in checkpoint: " + name);
      if (t.at("dtype").get<std::string>() != "float32-le") throw InputError("unsupported dtype for " + name);
      auto& p = params.at(name);
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols())
        throw ShapeError("tensor " + name + " shape mismatch, expected " + shape_str(p.value.rows(), p.value.cols()));
      const std::size_t off = t.at("offset").get<std::size_t>();
      const std::size_t len = p.value.size() * sizeof(float);
      if (off + len > bytes) throw InputError("tensor " + name + " exceeds blob");
      std::memcpy(p.value.data(), raw.data() + off, len);
    }
    return b;
  } catch (const json::exception& e) {
    throw InputError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace kfdiff
