#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfdiff/denoiser.hpp"
#include "kfdiff/diffusion.hpp"
#include "kfdiff/motion_data.hpp"

namespace kfdiff {

// Orthonormal DCT-II basis restricted to the first m frequencies, and the
// projector P = D D^T onto that low-frequency subspace.
struct DctBasis {
  MatrixD basis;      // L x m, columns orthonormal
  MatrixD projector;  // L x L, symmetric idempotent
};

DctBasis dct_basis(int length, int m);

// Window of half-width l around each keyframe, smoothed onto m DCT bases.
struct TransitionWindow {
  int l = 4;
  int m = 3;

  void validate() const;
};

// x: assembled N x D sequence (keyframe rows hold the keyframes). Windows are
// clipped at the sequence ends; normalization is 1 / ((2l+1) K).
double transition_loss(const MatrixD& x, std::span<const int> keyframes, const TransitionWindow& w);
// Gradient of transition_loss w.r.t. x with keyframe rows zeroed.
MatrixD transition_grad(const MatrixD& x, std::span<const int> keyframes, const TransitionWindow& w);

// mean - r * sigma2 * grad L_tr, the gradient taken on x0_hat with its
// keyframe rows replaced by the keyframes.
MatrixF transition_guided_mean(const MatrixF& mean, const MatrixF& x0_hat, const MatrixF& keyframes,
                               std::span<const int> keyframe_rows, double r, double sigma2,
                               const TransitionWindow& w);

// (1 - s) * uncond + s * cond; s = 0 and s = 1 reproduce the inputs exactly.
MatrixF cfg_combine(const MatrixF& cond, const MatrixF& uncond, double s);
MatrixD cfg_combine(const MatrixD& cond, const MatrixD& uncond, double s);

enum class Strategy { DiffKfc, DiffKfcNoTg, Inpaint, Gradient, TextOnly };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct SamplerConfig {
  double r = 100.0;   // transition guidance scale
  double s = 2.5;     // classifier-free guidance scale
  TransitionWindow window;
  // Transition guidance applies at steps t <= tg_steps; 0 means every step.
  int tg_steps = 0;
  double grad_scale = 100.0;  // gradient-baseline scale
  VarianceKind variance = VarianceKind::Posterior;
  std::uint64_t seed = 0;

  void validate() const;
};

// Conditioning for one generation in normalized space. `keyframes` is N x D
// with the keyframe rows filled; other rows are ignored.
struct SampleRequest {
  std::vector<int> tokens;
  std::size_t frames = 0;
  MatrixF keyframes;
  KeyframeMask mask;
};

// Reverse chains; each returns the final normalized N x D state. All of them
// draw the step noise from the same stream, so equal seeds share noise.
MatrixF sample_text(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                    const DiffusionSchedule& sched);
MatrixF sample_diffkfc(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                       const DiffusionSchedule& sched, bool drop_keyframes = false);
// Overwrites keyframe rows of every intermediate state with q_sample of the
// keyframes (overwrite noise from a separate stream); t-1 = 0 copies them.
MatrixF baseline_inpaint_sample(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                                const DiffusionSchedule& sched, bool overwrite = true);
// Steers the mean along -grad_X sum_{keyframe rows} ||x0_hat - keyframe||^2.
MatrixF baseline_gradient_sample(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                                 const DiffusionSchedule& sched);

// Dispatches on strategy. DiffKfcNoTg runs the DiffKFC chain with r = 0.
MatrixF sample_strategy(Strategy strategy, Denoiser<float>& model, const SampleRequest& req,
                        const SamplerConfig& cfg, const DiffusionSchedule& sched);

}  // namespace kfdiff
