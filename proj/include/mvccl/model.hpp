#pragma once

// Two-view classifier: shared convolutional backbone, global consistency
// module (GCM), local co-occurrence module (LCM, cross-view attention), the
// self-attention (SA) ablation baseline and the concatenation-fusion head.
//
// Feature maps are H×W×D (channels last). Token matrices are the same
// buffer viewed as (H·W)×D.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvccl/image.hpp"
#include "mvccl/model_config.hpp"
#include "mvccl/ops.hpp"
#include "mvccl/tensor.hpp"

namespace mvccl {

/// y = x·W + b, W stored in×out. x may be a vector [in] or tokens [n×in].
template <typename T>
struct DenseLayer {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// in → hidden (relu) → out, no output nonlinearity.
template <typename T>
struct Mlp2 {
  DenseLayer<T> hidden;
  DenseLayer<T> output;
};

/// W_q, W_k, W_v, each D×D'.
template <typename T>
struct AttentionWeights {
  Tensor<T> w_q;
  Tensor<T> w_k;
  Tensor<T> w_v;
};

/// f^A(Q, K, V) = mlp(mha(Q, K, V)).
template <typename T>
struct AttentionBlock {
  AttentionWeights<T> attention;
  Mlp2<T> mlp;
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;
  Tensor<T> bias;
};

/// Everything learnable. Optional members exist only when their module is
/// enabled, so enumerate() lists exactly the parameters the config uses.
template <typename T>
struct ModelParams {
  std::vector<ConvLayer<T>> stages;
  ConvLayer<T> projection;
  std::optional<Mlp2<T>> map_aux_to_main;
  std::optional<Mlp2<T>> map_main_to_aux;
  std::optional<AttentionBlock<T>> lcm_main;  // main tokens query auxiliary tokens
  std::optional<AttentionBlock<T>> lcm_aux;   // auxiliary tokens query main tokens
  std::optional<AttentionBlock<T>> sa;
  Mlp2<T> classifier;

  /// Stable, duplicate-free flat enumeration (optimizer and checkpoint order).
  std::vector<NamedTensor<T>> enumerate() const;
};

template <typename T>
struct GcmOutput {
  Tensor<T> z_g;
  Tensor<T> g_m;
  Tensor<T> g_a;
  Tensor<T> g_tilde_m;
  Tensor<T> g_tilde_a;
};

template <typename T>
struct LocalOutput {
  Tensor<T> z_m;
  Tensor<T> z_a;
  Tensor<T> u_tilde_m;
  Tensor<T> u_tilde_a;
  std::vector<Tensor<T>> attention;  // per direction, per head
};

template <typename T>
struct ForwardOutput {
  Tensor<T> y_hat;
  Tensor<T> classifier_input;
  // Undefined when the producing module is disabled.
  Tensor<T> z_g;
  Tensor<T> z_m;
  Tensor<T> z_a;
  Tensor<T> g_m;
  Tensor<T> g_a;
  Tensor<T> g_tilde_m;
  Tensor<T> g_tilde_a;
  std::vector<Tensor<T>> attention;
};

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const DenseLayer<T>& layer);

template <typename T>
Tensor<T> mlp2(const Tensor<T>& x, const Mlp2<T>& mlp);

/// Multi-head scaled dot-product attention. W_* columns are split into
/// `heads` contiguous slices; head h computes
/// softmax((Q W_q^h)(K W_k^h)ᵀ / scale_divisor)(V W_v^h) and the heads are
/// concatenated back to width D'. Softmax weights per head are appended to
/// `attention_maps` when non-null.
template <typename T>
Tensor<T> mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionWeights<T>& weights,
              std::size_t heads, double scale_divisor, std::vector<Tensor<T>>* attention_maps = nullptr);

template <typename T>
Tensor<T> attention_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionBlock<T>& block,
                          std::size_t heads, double scale_divisor, std::vector<Tensor<T>>* attention_maps = nullptr);

/// x1·x2 / max(‖x1‖‖x2‖, ε)
template <typename T>
Tensor<T> cosine(const Tensor<T>& x1, const Tensor<T>& x2, double epsilon);

/// −½ (c(g̃_m, g_m) + c(g̃_a, g_a)); no stop-gradient on either argument.
template <typename T>
Tensor<T> consistency_loss(const Tensor<T>& g_m, const Tensor<T>& g_a, const Tensor<T>& g_tilde_m,
                           const Tensor<T>& g_tilde_a, double epsilon);

inline constexpr double kBceClamp = 1e-7;

/// Binary cross-entropy with y_hat clamped to [1e-7, 1 − 1e-7].
template <typename T>
Tensor<T> bce_loss(int label, const Tensor<T>& y_hat);

/// Image → 1×H×W tensor (no grad).
template <typename T>
Tensor<T> image_tensor(const Image& image);

template <typename T>
class MvcclModel {
 public:
  /// He/LeCun fan-in initialisation from a seeded generator.
  MvcclModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  std::vector<NamedTensor<T>> parameters() const { return params_.enumerate(); }

  /// x: 1×H×W → Ĥ×Ŵ×D.
  Tensor<T> backbone_forward(const Tensor<T>& x) const;
  GcmOutput<T> gcm_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const;
  LocalOutput<T> lcm_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const;
  LocalOutput<T> sa_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const;
  /// Concatenates `features` in order, then MLP and sigmoid.
  Tensor<T> fusion_classify(const std::vector<Tensor<T>>& features) const;

  ForwardOutput<T> forward(const Tensor<T>& x_m, const Tensor<T>& x_a) const;
  ForwardOutput<T> forward(const ViewPair& pair) const;

  double attention_divisor() const;

 private:
  void check_feature_maps(const Tensor<T>& u_m, const Tensor<T>& u_a) const;

  ModelConfig config_;
  ModelParams<T> params_;
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double mean_bce = 0.0;
  double mean_sim = 0.0;  // 0 when GCM is disabled
  std::vector<double> scores;
};

/// mean over the batch of ℓ_bce + λ·ℓ_sim (ℓ_sim only when GCM is enabled).
template <typename T>
LossTerms<T> total_loss(const MvcclModel<T>& model, std::span<const ViewPair> batch);

extern template class MvcclModel<float>;
extern template class MvcclModel<double>;

}  // namespace mvccl
