#pragma once

#include <filesystem>
#include <string>

#include "kfdiff/denoiser.hpp"
#include "kfdiff/diffusion.hpp"
#include "kfdiff/motion_data.hpp"
#include <json.hpp>

namespace kfdiff {

inline constexpr int kCheckpointVersion = 1;

// Everything needed to sample from a trained model.
struct ModelBundle {
  Denoiser<float> model;
  int diffusion_steps = 100;
  CorpusStats stats;
  ChannelLayout layout;
  Vocabulary vocab;
  nlohmann::json run_config = nlohmann::json::object();

  DiffusionSchedule schedule() const { return DiffusionSchedule::cosine(diffusion_steps); }
};

nlohmann::json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// Writes `path` (JSON manifest) and `path` + ".bin" (little-endian float32
// tensors at the offsets listed in the manifest).
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace kfdiff
