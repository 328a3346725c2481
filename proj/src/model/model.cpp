#include "mvccl/model.hpp"

#include <cmath>
#include <random>

#include "mvccl/errors.hpp"

namespace mvccl {

namespace {

template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng_));
    return Tensor<T>::from_data(std::move(shape), std::move(values), true);
  }

  static Tensor<T> zeros(Shape shape) { return Tensor<T>::zeros(std::move(shape), true); }

  ConvLayer<T> conv(std::size_t in, std::size_t out, std::size_t k) {
    return {normal({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k))), zeros({out})};
  }

  DenseLayer<T> dense(std::size_t in, std::size_t out, bool feeds_relu) {
    const double gain = feeds_relu ? 2.0 : 1.0;
    return {normal({in, out}, std::sqrt(gain / static_cast<double>(in))), zeros({out})};
  }

  Mlp2<T> mlp(std::size_t in, std::size_t hidden, std::size_t out) {
    Mlp2<T> m;
    m.hidden = dense(in, hidden, true);
    m.output = dense(hidden, out, false);
    return m;
  }

  AttentionBlock<T> attention(std::size_t width, std::size_t projected) {
    AttentionBlock<T> block;
    const double stddev = std::sqrt(1.0 / static_cast<double>(width));
    block.attention.w_q = normal({width, projected}, stddev);
    block.attention.w_k = normal({width, projected}, stddev);
    block.attention.w_v = normal({width, projected}, stddev);
    block.mlp = mlp(projected, projected, projected);
    return block;
  }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
void append_mlp(std::vector<NamedTensor<T>>& out, const std::string& prefix, const Mlp2<T>& m) {
  out.push_back({prefix + ".fc1.weight", m.hidden.weight});
  out.push_back({prefix + ".fc1.bias", m.hidden.bias});
  out.push_back({prefix + ".fc2.weight", m.output.weight});
  out.push_back({prefix + ".fc2.bias", m.output.bias});
}

template <typename T>
void append_attention(std::vector<NamedTensor<T>>& out, const std::string& prefix, const AttentionBlock<T>& b) {
  out.push_back({prefix + ".w_q", b.attention.w_q});
  out.push_back({prefix + ".w_k", b.attention.w_k});
  out.push_back({prefix + ".w_v", b.attention.w_v});
  append_mlp(out, prefix + ".mlp", b.mlp);
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::enumerate() const {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string prefix = "backbone.stage" + std::to_string(i);
    out.push_back({prefix + ".kernel", stages[i].kernel});
    out.push_back({prefix + ".bias", stages[i].bias});
  }
  out.push_back({"backbone.proj.kernel", projection.kernel});
  out.push_back({"backbone.proj.bias", projection.bias});
  if (map_aux_to_main) append_mlp(out, "gcm.a2m", *map_aux_to_main);
  if (map_main_to_aux) append_mlp(out, "gcm.m2a", *map_main_to_aux);
  if (lcm_main) append_attention(out, "lcm.main", *lcm_main);
  if (lcm_aux) append_attention(out, "lcm.aux", *lcm_aux);
  if (sa) append_attention(out, "sa", *sa);
  append_mlp(out, "classifier", classifier);
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const DenseLayer<T>& layer) {
  if (x.rank() == 1) {
    const auto y = add(matmul(reshape(x, {1, x.dim(0)}), layer.weight), layer.bias);
    return reshape(y, {layer.weight.dim(1)});
  }
  return add(matmul(x, layer.weight), layer.bias);
}

template <typename T>
Tensor<T> mlp2(const Tensor<T>& x, const Mlp2<T>& mlp) {
  return dense(relu(dense(x, mlp.hidden)), mlp.output);
}

template <typename T>
Tensor<T> mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionWeights<T>& weights,
              std::size_t heads, double scale_divisor, std::vector<Tensor<T>>* attention_maps) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("mha expects token matrices, got " + to_string(q.shape()) + ", " + to_string(k.shape()) +
                         ", " + to_string(v.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("mha: keys " + to_string(k.shape()) + " and values " + to_string(v.shape()) +
                         " have different token counts");
  }
  const std::size_t projected = weights.w_q.dim(1);
  if (heads == 0 || projected % heads != 0) {
    throw ConfigError("mha: " + std::to_string(heads) + " heads do not divide width " + std::to_string(projected));
  }
  const Tensor<T> qp = matmul(q, weights.w_q);
  const Tensor<T> kp = matmul(k, weights.w_k);
  const Tensor<T> vp = matmul(v, weights.w_v);
  const std::size_t head_width = projected / heads;
  const T inv_divisor = static_cast<T>(1.0 / scale_divisor);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const bool whole = heads == 1;
    const auto qh = whole ? qp : slice_lastdim(qp, h * head_width, (h + 1) * head_width);
    const auto kh = whole ? kp : slice_lastdim(kp, h * head_width, (h + 1) * head_width);
    const auto vh = whole ? vp : slice_lastdim(vp, h * head_width, (h + 1) * head_width);
    const auto weights_h = softmax_rows(scale(matmul(qh, transpose(kh)), inv_divisor));
    if (attention_maps) attention_maps->push_back(weights_h);
    outputs.push_back(matmul(weights_h, vh));
  }
  return heads == 1 ? outputs.front() : concat_lastdim(outputs);
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionBlock<T>& block,
                          std::size_t heads, double scale_divisor, std::vector<Tensor<T>>* attention_maps) {
  return mlp2(mha(q, k, v, block.attention, heads, scale_divisor, attention_maps), block.mlp);
}

template <typename T>
Tensor<T> cosine(const Tensor<T>& x1, const Tensor<T>& x2, double epsilon) {
  if (x1.shape() != x2.shape()) {
    throw DimensionError("cosine: " + to_string(x1.shape()) + " vs " + to_string(x2.shape()));
  }
  const auto dot = sum(mul(x1, x2));
  const auto norms = mul(l2_norm(x1), l2_norm(x2));
  const auto denom = clamp(norms, static_cast<T>(epsilon), std::numeric_limits<T>::max());
  return div(dot, denom);
}

template <typename T>
Tensor<T> consistency_loss(const Tensor<T>& g_m, const Tensor<T>& g_a, const Tensor<T>& g_tilde_m,
                           const Tensor<T>& g_tilde_a, double epsilon) {
  return scale(add(cosine(g_tilde_m, g_m, epsilon), cosine(g_tilde_a, g_a, epsilon)), T(-0.5));
}

template <typename T>
Tensor<T> bce_loss(int label, const Tensor<T>& y_hat) {
  if (label != 0 && label != 1) throw DataError("label must be 0 or 1, got " + std::to_string(label));
  const auto p = clamp(y_hat, static_cast<T>(kBceClamp), static_cast<T>(1.0 - kBceClamp));
  // −log p for positives, −log(1 − p) for negatives.
  if (label == 1) return scale(log(p), T(-1));
  return scale(log(add_scalar(scale(p, T(-1)), T(1))), T(-1));
}

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  std::vector<T> values(image.pixels.begin(), image.pixels.end());
  return Tensor<T>::from_data({1, image.height, image.width}, std::move(values));
}

template <typename T>
MvcclModel<T>::MvcclModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer<T> init(seed);
  std::size_t channels = 1;
  for (std::size_t s = 0; s < config_.backbone_stages; ++s) {
    const std::size_t out = config_.stage_width(s);
    params_.stages.push_back(init.conv(channels, out, 3));
    channels = out;
  }
  const std::size_t d = config_.feature_width;
  const std::size_t d_prime = config_.attention_width;
  params_.projection = init.conv(channels, d, 1);
  if (config_.enabled.gcm) {
    params_.map_aux_to_main = init.mlp(d, d, d);
    params_.map_main_to_aux = init.mlp(d, d, d);
  }
  if (config_.enabled.lcm) {
    params_.lcm_main = init.attention(d, d_prime);
    params_.lcm_aux = init.attention(d, d_prime);
  }
  if (config_.enabled.sa) params_.sa = init.attention(d, d_prime);
  params_.classifier.hidden = init.dense(config_.classifier_input_width(), config_.classifier_hidden, true);
  params_.classifier.output = init.dense(config_.classifier_hidden, 1, false);
}

template <typename T>
double MvcclModel<T>::attention_divisor() const {
  if (config_.attention_scale == AttentionScale::sqrt_input_width) {
    return std::sqrt(static_cast<double>(config_.feature_width));
  }
  return std::sqrt(static_cast<double>(config_.attention_width / config_.heads));
}

template <typename T>
Tensor<T> MvcclModel<T>::backbone_forward(const Tensor<T>& x) const {
  const Shape expected{1, config_.input_height, config_.input_width};
  if (x.shape() != expected) {
    throw DimensionError("backbone input " + to_string(x.shape()) + " does not match configured " +
                         to_string(expected));
  }
  Tensor<T> h = x;
  for (const auto& stage : params_.stages) h = relu(conv2d(h, stage.kernel, stage.bias, 2, 1));
  h = conv2d(h, params_.projection.kernel, params_.projection.bias, 1, 0);
  return chw_to_hwc(h);
}

template <typename T>
void MvcclModel<T>::check_feature_maps(const Tensor<T>& u_m, const Tensor<T>& u_a) const {
  if (u_m.shape() != u_a.shape() || u_m.rank() != 3 || u_m.dim(2) != config_.feature_width) {
    throw DimensionError("feature maps " + to_string(u_m.shape()) + " and " + to_string(u_a.shape()) +
                         " must match and have " + std::to_string(config_.feature_width) + " channels");
  }
}

template <typename T>
GcmOutput<T> MvcclModel<T>::gcm_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const {
  check_feature_maps(u_m, u_a);
  if (!params_.map_aux_to_main) throw ConfigError("gcm_forward called with GCM disabled");
  GcmOutput<T> out;
  out.g_m = pool_global(u_m, PoolMode::max);
  out.g_a = pool_global(u_a, PoolMode::max);
  out.g_tilde_m = mlp2(out.g_a, *params_.map_aux_to_main);
  out.g_tilde_a = mlp2(out.g_m, *params_.map_main_to_aux);
  out.z_g = add(out.g_m, out.g_tilde_m);
  return out;
}

template <typename T>
LocalOutput<T> MvcclModel<T>::lcm_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const {
  check_feature_maps(u_m, u_a);
  if (!params_.lcm_main) throw ConfigError("lcm_forward called with LCM disabled");
  const Shape tokens{u_m.dim(0) * u_m.dim(1), u_m.dim(2)};
  const auto tokens_m = reshape(u_m, tokens);
  const auto tokens_a = reshape(u_a, tokens);
  LocalOutput<T> out;
  const double divisor = attention_divisor();
  out.u_tilde_m = attention_block(tokens_m, tokens_a, tokens_a, *params_.lcm_main, config_.heads, divisor, &out.attention);
  out.u_tilde_a = attention_block(tokens_a, tokens_m, tokens_m, *params_.lcm_aux, config_.heads, divisor, &out.attention);
  out.z_m = pool_global(out.u_tilde_m, PoolMode::avg);
  out.z_a = pool_global(out.u_tilde_a, PoolMode::avg);
  return out;
}

template <typename T>
LocalOutput<T> MvcclModel<T>::sa_forward(const Tensor<T>& u_m, const Tensor<T>& u_a) const {
  check_feature_maps(u_m, u_a);
  if (!params_.sa) throw ConfigError("sa_forward called with SA disabled");
  const std::size_t n = u_m.dim(0) * u_m.dim(1);
  const Shape tokens{n, u_m.dim(2)};
  const auto joint = concat_rows<T>({reshape(u_m, tokens), reshape(u_a, tokens)});
  LocalOutput<T> out;
  const auto mixed = attention_block(joint, joint, joint, *params_.sa, config_.heads, attention_divisor(), &out.attention);
  out.u_tilde_m = slice_rows(mixed, 0, n);
  out.u_tilde_a = slice_rows(mixed, n, 2 * n);
  out.z_m = pool_global(out.u_tilde_m, PoolMode::avg);
  out.z_a = pool_global(out.u_tilde_a, PoolMode::avg);
  return out;
}

template <typename T>
Tensor<T> MvcclModel<T>::fusion_classify(const std::vector<Tensor<T>>& features) const {
  if (features.empty()) throw ConfigError("fusion_classify: empty feature set");
  const auto joint = concat_lastdim(features);
  if (joint.rank() != 1 || joint.dim(0) != config_.classifier_input_width()) {
    throw DimensionError("classifier input " + to_string(joint.shape()) + " does not match configured width " +
                         std::to_string(config_.classifier_input_width()));
  }
  return reshape(sigmoid(mlp2(joint, params_.classifier)), {});
}

template <typename T>
ForwardOutput<T> MvcclModel<T>::forward(const Tensor<T>& x_m, const Tensor<T>& x_a) const {
  const auto u_m = backbone_forward(x_m);
  const auto u_a = backbone_forward(x_a);
  ForwardOutput<T> out;
  std::vector<Tensor<T>> features;
  if (config_.enabled.gcm) {
    auto gcm = gcm_forward(u_m, u_a);
    out.z_g = gcm.z_g;
    out.g_m = gcm.g_m;
    out.g_a = gcm.g_a;
    out.g_tilde_m = gcm.g_tilde_m;
    out.g_tilde_a = gcm.g_tilde_a;
    features.push_back(out.z_g);
  } else if (config_.enabled.fusion) {
    out.g_m = pool_global(u_m, PoolMode::max);
    out.g_a = pool_global(u_a, PoolMode::max);
    features.push_back(out.g_m);
    features.push_back(out.g_a);
  }
  if (config_.has_local_branch()) {
    auto local = config_.enabled.lcm ? lcm_forward(u_m, u_a) : sa_forward(u_m, u_a);
    out.z_m = local.z_m;
    out.z_a = local.z_a;
    out.attention = std::move(local.attention);
    features.push_back(out.z_m);
    features.push_back(out.z_a);
  }
  out.classifier_input = concat_lastdim(features);
  out.y_hat = fusion_classify(features);
  return out;
}

template <typename T>
ForwardOutput<T> MvcclModel<T>::forward(const ViewPair& pair) const {
  return forward(image_tensor<T>(pair.main), image_tensor<T>(pair.aux));
}

template <typename T>
LossTerms<T> total_loss(const MvcclModel<T>& model, std::span<const ViewPair> batch) {
  if (batch.empty()) throw UsageError("total_loss on an empty batch");
  const bool with_sim = model.config().enabled.gcm;
  const auto lambda = static_cast<T>(model.config().lambda_sim);
  LossTerms<T> terms;
  Tensor<T> accumulated;
  for (const auto& pair : batch) {
    const auto out = model.forward(pair);
    Tensor<T> example = bce_loss(pair.label, out.y_hat);
    terms.mean_bce += static_cast<double>(example.item());
    if (with_sim) {
      const auto sim = consistency_loss(out.g_m, out.g_a, out.g_tilde_m, out.g_tilde_a, model.config().epsilon);
      terms.mean_sim += static_cast<double>(sim.item());
      example = add(example, scale(sim, lambda));
    }
    terms.scores.push_back(static_cast<double>(out.y_hat.item()));
    accumulated = accumulated.defined() ? add(accumulated, example) : example;
  }
  const double n = static_cast<double>(batch.size());
  terms.total = scale(accumulated, static_cast<T>(1.0 / n));
  terms.mean_bce /= n;
  terms.mean_sim /= n;
  return terms;
}

#define MVCCL_INSTANTIATE_MODEL(T)                                                                                  \
  template struct ModelParams<T>;                                                                                   \
  template class MvcclModel<T>;                                                                                     \
  template Tensor<T> dense(const Tensor<T>&, const DenseLayer<T>&);                                                 \
  template Tensor<T> mlp2(const Tensor<T>&, const Mlp2<T>&);                                                        \
  template Tensor<T> mha(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionWeights<T>&,          \
                         std::size_t, double, std::vector<Tensor<T>>*);                                             \
  template Tensor<T> attention_block(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionBlock<T>&, \
                                     std::size_t, double, std::vector<Tensor<T>>*);                                 \
  template Tensor<T> cosine(const Tensor<T>&, const Tensor<T>&, double);                                            \
  template Tensor<T> consistency_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                      double);                                                                      \
  template Tensor<T> bce_loss(int, const Tensor<T>&);                                                               \
  template Tensor<T> image_tensor(const Image&);                                                                    \
  template LossTerms<T> total_loss(const MvcclModel<T>&, std::span<const ViewPair>);

MVCCL_INSTANTIATE_MODEL(float)
MVCCL_INSTANTIATE_MODEL(double)

#undef MVCCL_INSTANTIATE_MODEL

}  // namespace mvccl
