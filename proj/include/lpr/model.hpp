#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lpr/range_image.hpp"
#include "lpr/tensor.hpp"

namespace lpr {

/// One vertical compression stage of the range image encoder. Kernel width
/// is always 1; that is what makes column-shift equivariance exact.
struct RieLayerSpec {
  int kernel_h = 0;
  int stride_h = 0;
  int out_channels = 0;
};

struct ModelConfig {
  int h = 64;
  int w = 900;
  int d_model = 256;  // encoder output channels, c
  int n_head = 4;
  int d_ffn = 1024;
  int num_tm_blocks = 1;
  int d_inter = 1024;
  int d_output = 256;
  int K = 64;  // NetVLAD clusters
  std::vector<RieLayerSpec> rie_layers;

  /// Throws std::invalid_argument unless the height chain reaches exactly 1,
  /// the last layer emits d_model channels, and d_model divides by n_head.
  void validate() const;

  int c() const { return d_model; }
  /// Channel count entering transformer block b (doubles per block).
  int block_channels(int b) const { return d_model << b; }
  /// Channel count after the last block, before the final projection.
  int tm_out_channels() const { return d_model << num_tm_blocks; }
};

/// Stock layer tables for the two supported input heights (64 and 32 rows).
ModelConfig default_model_config(int h, int w);
/// Small config for gradient checks: h=8, w=36, c=16, K=4, one block.
ModelConfig tiny_model_config();

ModelConfig config_from_key_values(const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> config_to_key_values(const ModelConfig& config);

template <typename S>
struct ModelParamsT {
  struct RieLayer {
    Tensor<S> kernel;  // [cout, cin, kh, 1]
    Tensor<S> bias;    // [cout]
    int stride_h = 1;
  };
  struct TmBlock {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections, [cb,cb]/[cb]
    Tensor<S> ln1_gain, ln1_bias;              // [2cb]
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // 2cb -> d_ffn -> 2cb
    Tensor<S> ln2_gain, ln2_bias;              // [2cb]
  };
  struct Gdg {
    Tensor<S> assign_w, assign_b;  // [c, K], [K]
    Tensor<S> centers;             // [K, c]
    Tensor<S> mlp1_w, mlp1_b;      // [K*c, d_inter]
    Tensor<S> mlp2_w, mlp2_b;      // [d_inter, d_output]
  };

  std::vector<RieLayer> rie;
  std::vector<TmBlock> blocks;
  Tensor<S> final_w, final_b;  // [c * 2^B, c]; absent when num_tm_blocks == 0
  Gdg gdg;

  /// Every learnable leaf in fixed order; checkpoint and optimizer order.
  std::vector<std::pair<std::string, Tensor<S>>> registry;
};

using ModelParams = ModelParamsT<float>;

template <typename S>
ModelParamsT<S> init_params(const ModelConfig& config, std::uint64_t seed);

/// Deep-copies into another scalar type (float64 shadow mode).
template <typename To, typename From>
ModelParamsT<To> convert_params(const ModelConfig& config, const ModelParamsT<From>& params);

template <typename S>
Tensor<S> image_to_tensor(const RangeImage& image);

template <typename S>
Tensor<S> rie_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                      const Tensor<S>& img);  // [1,h,w] -> [w,c]

template <typename S>
Tensor<S> mhsa_forward(const typename ModelParamsT<S>::TmBlock& block, int n_head,
                       const Tensor<S>& f);  // [w,cb] -> [w,cb]

template <typename S>
Tensor<S> tm_block_forward(const typename ModelParamsT<S>::TmBlock& block, int n_head,
                           const Tensor<S>& f);  // [w,cb] -> [w,2cb]

template <typename S>
Tensor<S> tm_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                     const Tensor<S>& f);  // [w,c] -> [w,c]

template <typename S>
Tensor<S> gdg_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                      const Tensor<S>& s);  // [w,c] -> [1,d_output], unit norm

template <typename S>
Tensor<S> model_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                        const Tensor<S>& img);

/// Inference wrapper: projective input in, plain descriptor out.
std::vector<float> compute_descriptor(const ModelConfig& config, const ModelParams& params,
                                      const RangeImage& image);

/// Checkpoint = LPRW tensor file + "<path>.meta" config sidecar.
void save_model(const std::string& path, const ModelConfig& config, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_model(const std::string& path);

// --- template definitions ---

namespace detail {

template <typename S>
void register_param(ModelParamsT<S>& params, std::string name, Tensor<S>& slot,
                    Shape shape, std::vector<S> data) {
  slot = Tensor<S>::leaf(std::move(shape), std::move(data), true);
  params.registry.emplace_back(std::move(name), slot);
}

}  // namespace detail

template <typename S>
ModelParamsT<S> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_normal = [&](std::size_t n, double sigma) {
    std::vector<S> v(n);
    for (auto& x : v) x = static_cast<S>(normal(rng) * sigma);
    return v;
  };
  auto zeros = [](std::size_t n) { return std::vector<S>(n, S(0)); };
  auto ones = [](std::size_t n) { return std::vector<S>(n, S(1)); };

  ModelParamsT<S> params;
  int cin = 1;
  for (std::size_t i = 0; i < config.rie_layers.size(); ++i) {
    const auto& spec = config.rie_layers[i];
    typename ModelParamsT<S>::RieLayer layer;
    layer.stride_h = spec.stride_h;
    const std::size_t kn =
        static_cast<std::size_t>(spec.out_channels) * cin * spec.kernel_h;
    detail::register_param(params, "rie." + std::to_string(i) + ".kernel", layer.kernel,
                           {spec.out_channels, cin, spec.kernel_h, 1},
                           fill_normal(kn, std::sqrt(2.0 / (cin * spec.kernel_h))));
    detail::register_param(params, "rie." + std::to_string(i) + ".bias", layer.bias,
                           {spec.out_channels}, zeros(spec.out_channels));
    params.rie.push_back(layer);
    cin = spec.out_channels;
  }

  for (int b = 0; b < config.num_tm_blocks; ++b) {
    const int cb = config.block_channels(b);
    const int c2 = 2 * cb;
    typename ModelParamsT<S>::TmBlock block;
    const std::string p = "tm." + std::to_string(b) + ".";
    const double attn_sigma = std::sqrt(1.0 / cb);
    auto reg_linear = [&](const char* base, Tensor<S>& w, Tensor<S>& bias, int in, int out,
                          double sigma) {
      detail::register_param(params, p + base + std::string(".weight"), w, {in, out},
                             fill_normal(static_cast<std::size_t>(in) * out, sigma));
      detail::register_param(params, p + base + std::string(".bias"), bias, {out},
                             zeros(out));
    };
    reg_linear("attn.q", block.wq, block.bq, cb, cb, attn_sigma);
    reg_linear("attn.k", block.wk, block.bk, cb, cb, attn_sigma);
    reg_linear("attn.v", block.wv, block.bv, cb, cb, attn_sigma);
    reg_linear("attn.out", block.wo, block.bo, cb, cb, attn_sigma);
    detail::register_param(params, p + "ln1.gain", block.ln1_gain, {c2}, ones(c2));
    detail::register_param(params, p + "ln1.bias", block.ln1_bias, {c2}, zeros(c2));
    reg_linear("ffn.1", block.ffn_w1, block.ffn_b1, c2, config.d_ffn,
               std::sqrt(2.0 / c2));
    reg_linear("ffn.2", block.ffn_w2, block.ffn_b2, config.d_ffn, c2,
               std::sqrt(1.0 / config.d_ffn));
    detail::register_param(params, p + "ln2.gain", block.ln2_gain, {c2}, ones(c2));
    detail::register_param(params, p + "ln2.bias", block.ln2_bias, {c2}, zeros(c2));
    params.blocks.push_back(block);
  }
  if (config.num_tm_blocks > 0) {
    const int cin_proj = config.tm_out_channels();
    detail::register_param(
        params, "tm.proj.weight", params.final_w, {cin_proj, config.d_model},
        fill_normal(static_cast<std::size_t>(cin_proj) * config.d_model,
                    std::sqrt(1.0 / cin_proj)));
    detail::register_param(params, "tm.proj.bias", params.final_b, {config.d_model},
                           zeros(config.d_model));
  }

  const int c = config.d_model;
  detail::register_param(params, "gdg.assign.weight", params.gdg.assign_w,
                         {c, config.K},
                         fill_normal(static_cast<std::size_t>(c) * config.K,
                                     std::sqrt(1.0 / c)));
  detail::register_param(params, "gdg.assign.bias", params.gdg.assign_b, {config.K},
                         zeros(config.K));
  {
    // Unit-norm cluster centers.
    std::vector<S> centers(static_cast<std::size_t>(config.K) * c);
    for (int k = 0; k < config.K; ++k) {
      double ss = 0.0;
      for (int j = 0; j < c; ++j) {
        const double v = normal(rng);
        centers[static_cast<std::size_t>(k) * c + j] = static_cast<S>(v);
        ss += v * v;
      }
      const double inv = 1.0 / std::sqrt(ss + 1e-10);
      for (int j = 0; j < c; ++j) {
        centers[static_cast<std::size_t>(k) * c + j] =
            static_cast<S>(centers[static_cast<std::size_t>(k) * c + j] * inv);
      }
    }
    detail::register_param(params, "gdg.centers", params.gdg.centers, {config.K, c},
                           std::move(centers));
  }
  const int kc = config.K * c;
  detail::register_param(params, "gdg.mlp1.weight", params.gdg.mlp1_w,
                         {kc, config.d_inter},
                         fill_normal(static_cast<std::size_t>(kc) * config.d_inter,
                                     std::sqrt(2.0 / kc)));
  detail::register_param(params, "gdg.mlp1.bias", params.gdg.mlp1_b, {config.d_inter},
                         zeros(config.d_inter));
  detail::register_param(params, "gdg.mlp2.weight", params.gdg.mlp2_w,
                         {config.d_inter, config.d_output},
                         fill_normal(static_cast<std::size_t>(config.d_inter) *
                                         config.d_output,
                                     std::sqrt(1.0 / config.d_inter)));
  detail::register_param(params, "gdg.mlp2.bias", params.gdg.mlp2_b, {config.d_output},
                         zeros(config.d_output));
  return params;
}

template <typename To, typename From>
ModelParamsT<To> convert_params(const ModelConfig& config, const ModelParamsT<From>& params) {
  ModelParamsT<To> out = init_params<To>(config, 0);
  if (out.registry.size() != params.registry.size()) {
    throw std::logic_error("convert_params: registry size mismatch");
  }
  for (std::size_t i = 0; i < out.registry.size(); ++i) {
    const auto& src = params.registry[i].second;
    auto& dst = out.registry[i].second;
    if (src.shape() != dst.shape()) {
      throw std::logic_error("convert_params: shape mismatch at " + params.registry[i].first);
    }
    auto& data = dst.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) data[j] = static_cast<To>(src.data()[j]);
  }
  return out;
}

template <typename S>
Tensor<S> image_to_tensor(const RangeImage& image) {
  std::vector<S> data(image.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(image.data[i]);
  return Tensor<S>::constant({1, image.h, image.w}, std::move(data));
}

template <typename S>
Tensor<S> rie_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                      const Tensor<S>& img) {
  if (img.rank() != 3 || img.dim(0) != 1 || img.dim(1) != config.h ||
      img.dim(2) != config.w) {
    throw std::invalid_argument("rie_forward: image " + shape_str(img.shape()) +
                                " does not match config [1," + std::to_string(config.h) +
                                "," + std::to_string(config.w) + "]");
  }
  Tensor<S> x = img;
  for (const auto& layer : params.rie) {
    x = relu(add_channel_bias(conv2d_valid(x, layer.kernel, layer.stride_h, 1),
                              layer.bias));
  }
  // [c,1,w] -> [w,c]
  return transpose2d(reshape(x, {config.d_model, config.w}));
}

template <typename S>
Tensor<S> mhsa_forward(const typename ModelParamsT<S>::TmBlock& block, int n_head,
                       const Tensor<S>& f) {
  const int cb = f.dim(1);
  const int dk = cb / n_head;
  auto q = add_rowvec(matmul(f, block.wq), block.bq);
  auto k = add_rowvec(matmul(f, block.wk), block.bk);
  auto v = add_rowvec(matmul(f, block.wv), block.bv);
  auto qs = split_cols(q, n_head);
  auto ks = split_cols(k, n_head);
  auto vs = split_cols(v, n_head);
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  std::vector<Tensor<S>> heads;
  for (int h = 0; h < n_head; ++h) {
    auto scores = mul_scalar(matmul_nt(qs[h], ks[h]), scale);
    heads.push_back(matmul(softmax_rows(scores), vs[h]));
  }
  return add_rowvec(matmul(concat(heads, 1), block.wo), block.bo);
}

template <typename S>
Tensor<S> tm_block_forward(const typename ModelParamsT<S>::TmBlock& block, int n_head,
                           const Tensor<S>& f) {
  auto a = mhsa_forward<S>(block, n_head, f);
  auto joined = concat<S>({f, a}, 1);
  auto l = add_rowvec(mul_rowvec(layer_norm_rows(joined), block.ln1_gain), block.ln1_bias);
  auto hidden = relu(add_rowvec(matmul(l, block.ffn_w1), block.ffn_b1));
  auto ffn = add_rowvec(matmul(hidden, block.ffn_w2), block.ffn_b2);
  return add_rowvec(mul_rowvec(layer_norm_rows(add(ffn, l)), block.ln2_gain),
                    block.ln2_bias);
}

template <typename S>
Tensor<S> tm_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                     const Tensor<S>& f) {
  Tensor<S> x = f;
  for (const auto& block : params.blocks) {
    x = tm_block_forward<S>(block, config.n_head, x);
  }
  if (!params.blocks.empty()) {
    x = add_rowvec(matmul(x, params.final_w), params.final_b);
  }
  return x;
}

template <typename S>
Tensor<S> gdg_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                      const Tensor<S>& s) {
  const int c = config.d_model;
  auto logits = add_rowvec(matmul(s, params.gdg.assign_w), params.gdg.assign_b);
  auto assign = softmax_rows(logits);  // [w,K]
  auto vlad = vlad_aggregate(assign, s, params.gdg.centers);
  auto intra = l2_normalize_rows(vlad);
  auto flat = l2_normalize_rows(reshape(intra, {1, config.K * c}));
  auto hidden = relu(add_rowvec(matmul(flat, params.gdg.mlp1_w), params.gdg.mlp1_b));
  auto out = add_rowvec(matmul(hidden, params.gdg.mlp2_w), params.gdg.mlp2_b);
  return l2_normalize_rows(out);
}

template <typename S>
Tensor<S> model_forward(const ModelConfig& config, const ModelParamsT<S>& params,
                        const Tensor<S>& img) {
  return gdg_forward(config, params, tm_forward(config, params, rie_forward(config, params, img)));
}

}  // namespace lpr
