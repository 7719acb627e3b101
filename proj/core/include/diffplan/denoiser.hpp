#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffplan/rng.hpp"
#include "diffplan/schedule.hpp"
#include "diffplan/types.hpp"

namespace diffplan {

// Shape of the noise-prediction network: an MLP over the flattened noisy
// action sequence, the flattened state history and a sinusoidal embedding of
// the diffusion step.
struct NetConfig {
  int plan_horizon = 12;    // H, action rows per sequence
  int action_dim = 2;       // A
  int obs_horizon = 2;      // T_o, state rows of conditioning
  int state_dim = 4;        // S
  int time_embed_dim = 32;  // E, even
  std::vector<int> hidden = {256, 256, 256};

  int input_dim() const {
    return plan_horizon * action_dim + obs_horizon * state_dim +
           time_embed_dim;
  }
  int output_dim() const { return plan_horizon * action_dim; }
  bool operator==(const NetConfig&) const = default;
};

struct DenoiserParams {
  NetConfig cfg;
  std::vector<Mat> weights;  // weights[l] is (in_l x out_l)
  std::vector<Vec> biases;

  size_t layer_count() const { return weights.size(); }
  size_t param_count() const;
  bool finite() const;
};

// One gradient array per parameter array, shape-congruent with the params.
struct GradientBundle {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  static GradientBundle zeros_like(const DenoiserParams& p);
  void add_scaled(const GradientBundle& other, double scale);
  bool finite() const;
  double max_abs() const;
};

// Fan-in scaled uniform init; the final layer is zeroed so an untrained
// model predicts zero noise.
DenoiserParams init_params(const NetConfig& cfg, RngStream& rng);

// Sinusoidal embedding of diffusion step k, length cfg.time_embed_dim.
Vec time_embedding(int k, int dim);

// Flattens (a_k, s_hist, time_embed(k)) into one network input row.
// Row-major flattening: matrix entry (r, c) lands at index r * cols + c.
Eigen::RowVectorXd pack_input(const NetConfig& cfg, const Mat& a_k,
                              const Mat& s_hist, int k);

// Per-layer activations retained by a forward pass for the backward pass.
struct ForwardCache {
  std::vector<Mat> pre;   // pre-activation per hidden layer
  std::vector<Mat> post;  // post-activation; post[0] is the input batch
};

// Batched forward pass, one sample per row. Pass a cache to enable backward.
Mat forward(const DenoiserParams& params, const Mat& inputs,
            ForwardCache* cache = nullptr);

// Backpropagates an output cotangent through a cached forward pass and
// returns parameter gradients.
GradientBundle backward(const DenoiserParams& params, const ForwardCache& cache,
                        const Mat& d_output);

// eps_theta(a_k, s, k): deterministic noise prediction, same shape as a_k.
ActionSequence predict_noise(const DenoiserParams& params,
                             const ActionSequence& a_k,
                             const StateHistory& s_hist, int k);

// One training example for the denoising objective.
struct NoiseSample {
  ActionSequence a_k;
  StateHistory s_hist;
  int k = 1;
  ActionSequence target;  // the noise that produced a_k
};

// Mean over the batch of the squared noise-prediction error (summed over
// coordinates), plus its gradient. Gradients match central finite
// differences to 1e-4 relative error at 64-bit precision.
std::pair<double, GradientBundle> loss_and_grad(
    const DenoiserParams& params, std::span<const NoiseSample> batch);

// Internal row-level variant shared by every squared-error loss path.
std::pair<double, GradientBundle> loss_and_grad_rows(
    const DenoiserParams& params, const Mat& inputs, const Mat& targets);

struct AdamState {
  std::vector<Mat> m_w, v_w;
  std::vector<Vec> m_b, v_b;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros_like(const DenoiserParams& p);
};

// Standard Adam recurrence with bias correction. Rejects non-finite
// gradients by throwing UpdateRejected.
void adam_update(DenoiserParams& params, AdamState& moments,
                 const GradientBundle& grads, double lr);

// Checkpoint: a plain-text header line followed by raw little-endian 64-bit
// floats (see docs/formats.md for the exact layout).
struct Checkpoint {
  DenoiserParams params;
  int K = 100;
  ScheduleKind schedule = ScheduleKind::kCosine;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffplan
