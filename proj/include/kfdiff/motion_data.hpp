#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kfdiff/matrix.hpp"

namespace kfdiff {

inline constexpr int kCorpusVersion = 1;

// Channel layout of one pose frame: world-space joint positions, then
// foot-contact indicators, then the root ground velocity (x, z).
struct ChannelLayout {
  int joints = 5;
  std::array<int, 2> foot_joints{3, 4};
  int hand_joint = 2;

  int position_channels() const { return 3 * joints; }
  int contact_begin() const { return position_channels(); }
  int contact_count() const { return static_cast<int>(foot_joints.size()); }
  int root_velocity_begin() const { return contact_begin() + contact_count(); }
  int dim() const { return root_velocity_begin() + 2; }
};

enum class Action { Walk, Wave, Jump, Bend, Stand };
enum class Modifier { Slow, Fast };
enum class Direction { Forward, Left, Right };

inline constexpr std::array<Action, 5> kActions{Action::Walk, Action::Wave, Action::Jump, Action::Bend,
                                                Action::Stand};

std::string_view to_string(Action a);
std::string_view to_string(Modifier m);
std::string_view to_string(Direction d);
Action parse_action(std::string_view s);
Modifier parse_modifier(std::string_view s);
Direction parse_direction(std::string_view s);

// Fixed word list for the prompt template grammar. Id 0 is padding, id 1
// stands in for any word outside the list.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> tokens) const;
  const std::vector<std::string>& words() const { return words_; }
  int size() const { return static_cast<int>(words_.size()); }

  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

 private:
  std::vector<std::string> words_;
};

struct Prompt {
  std::string text;
  std::vector<int> tokens;
  Action action = Action::Stand;
  Modifier modifier = Modifier::Slow;
  Direction direction = Direction::Forward;
};

std::string prompt_text(Action a, Modifier m, Direction d);
Prompt make_prompt(Action a, Modifier m, Direction d, const Vocabulary& vocab);

struct MotionSequence {
  MatrixF frames;  // N x D
  int fps = 20;
  int prompt_id = 0;

  std::size_t length() const { return frames.rows(); }
};

struct CorpusRecord {
  int id = 0;
  Prompt prompt;
  MotionSequence motion;
};

struct CorpusSpec {
  int size = 500;
  int n_max = 64;
  std::uint64_t seed = 0;
  double noise_scale = 0.01;

  static constexpr int kMinFrames = 16;
  static constexpr int kFps = 20;
};

struct CorpusStats {
  std::vector<float> mean;
  std::vector<float> std;

  static constexpr float kMinStd = 1e-6f;
};

struct Corpus {
  CorpusSpec spec;
  ChannelLayout layout;
  Vocabulary vocab;
  CorpusStats stats;
  std::vector<CorpusRecord> records;

  int dim() const { return layout.dim(); }
};

// Row-constant keyframe selection for one sequence.
struct KeyframeMask {
  std::vector<char> rows;            // 1 = keyframe row
  std::vector<int> keyframe_indices;  // sorted

  std::size_t frames() const { return rows.size(); }
  std::size_t count() const { return keyframe_indices.size(); }
  MatrixF as_matrix(int dim) const;  // N x D binary M

  static KeyframeMask from_indices(std::size_t n, std::vector<int> indices);
};

// Derives an independent stream seed for item `index` of a run seeded with `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

Corpus generate_corpus(const CorpusSpec& spec);
MotionSequence synthesize_motion(const Prompt& prompt, int frames, std::uint64_t seed,
                                 double noise_scale, const ChannelLayout& layout = {});

CorpusStats compute_stats(std::span<const CorpusRecord> records, int dim);

// K = max(1, round_half_up(rate * n)) distinct rows, uniform without replacement.
KeyframeMask sample_keyframe_mask(std::size_t n, double rate, std::uint64_t seed);
std::size_t keyframe_count(std::size_t n, double rate);

MatrixF normalize(const MatrixF& frames, const CorpusStats& stats);
MatrixF denormalize(const MatrixF& frames, const CorpusStats& stats);

// X ⊙ M: keyframe rows kept, other rows zeroed.
MatrixF extract_keyframes(const MatrixF& frames, const KeyframeMask& mask);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace kfdiff
