#include "lpr/model.hpp"

#include <charconv>
#include <stdexcept>

#include "lpr/io.hpp"

namespace lpr {

void ModelConfig::validate() const {
  if (h <= 0 || w <= 0) throw std::invalid_argument("model config: h and w must be positive");
  if (d_model <= 0 || n_head <= 0 || d_model % n_head != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_head " + std::to_string(n_head));
  }
  if (d_ffn <= 0 || d_inter <= 0 || d_output <= 0 || K <= 0) {
    throw std::invalid_argument("model config: dims must be positive");
  }
  if (num_tm_blocks < 0) throw std::invalid_argument("model config: negative block count");
  if (rie_layers.empty()) throw std::invalid_argument("model config: empty encoder layer spec");
  int height = h;
  for (const auto& layer : rie_layers) {
    if (layer.kernel_h <= 0 || layer.stride_h <= 0 || layer.out_channels <= 0) {
      throw std::invalid_argument("model config: bad encoder layer");
    }
    if (layer.kernel_h > height) {
      throw std::invalid_argument("model config: encoder kernel height " +
                                  std::to_string(layer.kernel_h) + " exceeds running height " +
                                  std::to_string(height));
    }
    height = (height - layer.kernel_h) / layer.stride_h + 1;
  }
  if (height != 1) {
    throw std::invalid_argument("model config: encoder layers reduce height to " +
                                std::to_string(height) + ", not 1");
  }
  if (rie_layers.back().out_channels != d_model) {
    throw std::invalid_argument("model config: last encoder layer emits " +
                                std::to_string(rie_layers.back().out_channels) +
                                " channels, d_model is " + std::to_string(d_model));
  }
}

ModelConfig default_model_config(int h, int w) {
  ModelConfig config;
  config.h = h;
  config.w = w;
  if (h == 64) {
    config.rie_layers = {{5, 2, 16}, {3, 2, 32}, {3, 2, 64}, {3, 2, 128}, {2, 1, 256}};
  } else if (h == 32) {
    config.rie_layers = {{5, 2, 32}, {3, 2, 64}, {3, 2, 128}, {2, 1, 256}};
  } else {
    throw std::invalid_argument("default_model_config: no layer table for h=" +
                                std::to_string(h));
  }
  config.validate();
  return config;
}

ModelConfig tiny_model_config() {
  ModelConfig config;
  config.h = 8;
  config.w = 36;
  config.d_model = 16;
  config.n_head = 4;
  config.d_ffn = 32;
  config.num_tm_blocks = 1;
  config.d_inter = 32;
  config.d_output = 16;
  config.K = 4;
  config.rie_layers = {{3, 2, 8}, {3, 1, 16}};
  config.validate();
  return config;
}

std::vector<std::pair<std::string, std::string>> config_to_key_values(const ModelConfig& config) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("h", std::to_string(config.h));
  kv.emplace_back("w", std::to_string(config.w));
  kv.emplace_back("d_model", std::to_string(config.d_model));
  kv.emplace_back("n_head", std::to_string(config.n_head));
  kv.emplace_back("d_ffn", std::to_string(config.d_ffn));
  kv.emplace_back("num_tm_blocks", std::to_string(config.num_tm_blocks));
  kv.emplace_back("d_inter", std::to_string(config.d_inter));
  kv.emplace_back("d_output", std::to_string(config.d_output));
  kv.emplace_back("K", std::to_string(config.K));
  std::string layers;
  for (const auto& layer : config.rie_layers) {
    if (!layers.empty()) layers += ",";
    layers += std::to_string(layer.kernel_h) + ":" + std::to_string(layer.stride_h) + ":" +
              std::to_string(layer.out_channels);
  }
  kv.emplace_back("rie_layers", layers);
  return kv;
}

namespace {

int parse_int_field(const std::vector<std::pair<std::string, std::string>>& kv,
                    const std::string& key) {
  const std::string* raw = find_key(kv, key);
  if (!raw) throw std::runtime_error("model config: missing key '" + key + "'");
  int value = 0;
  auto [ptr, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), value);
  if (ec != std::errc() || ptr != raw->data() + raw->size()) {
    throw std::runtime_error("model config: bad integer for '" + key + "': " + *raw);
  }
  return value;
}

}  // namespace

ModelConfig config_from_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig config;
  config.h = parse_int_field(kv, "h");
  config.w = parse_int_field(kv, "w");
  config.d_model = parse_int_field(kv, "d_model");
  config.n_head = parse_int_field(kv, "n_head");
  config.d_ffn = parse_int_field(kv, "d_ffn");
  config.num_tm_blocks = parse_int_field(kv, "num_tm_blocks");
  config.d_inter = parse_int_field(kv, "d_inter");
  config.d_output = parse_int_field(kv, "d_output");
  config.K = parse_int_field(kv, "K");
  const std::string* layers = find_key(kv, "rie_layers");
  if (!layers) throw std::runtime_error("model config: missing key 'rie_layers'");
  config.rie_layers.clear();
  const char* p = layers->data();
  const char* end = p + layers->size();
  while (p < end) {
    RieLayerSpec spec;
    auto read_int = [&](int& out, char sep) {
      auto [next, ec] = std::from_chars(p, end, out);
      if (ec != std::errc() || (sep != '\0' && (next >= end || *next != sep))) {
        throw std::runtime_error("model config: bad rie_layers entry: " + *layers);
      }
      p = next < end ? next + 1 : next;
    };
    read_int(spec.kernel_h, ':');
    read_int(spec.stride_h, ':');
    {
      auto [next, ec] = std::from_chars(p, end, spec.out_channels);
      if (ec != std::errc()) {
        throw std::runtime_error("model config: bad rie_layers entry: " + *layers);
      }
      p = next;
      if (p < end) {
        if (*p != ',') throw std::runtime_error("model config: bad rie_layers entry: " + *layers);
        ++p;
      }
    }
    config.rie_layers.push_back(spec);
  }
  config.validate();
  return config;
}

std::vector<float> compute_descriptor(const ModelConfig& config, const ModelParams& params,
                                      const RangeImage& image) {
  auto out = model_forward(config, params, image_to_tensor<float>(image));
  return out.data();
}

void save_model(const std::string& path, const ModelConfig& config, const ModelParams& params) {
  config.validate();
  std::vector<TensorBlob> blobs;
  blobs.reserve(params.registry.size());
  for (const auto& [name, tensor] : params.registry) {
    TensorBlob blob;
    blob.name = name;
    blob.dims.assign(tensor.shape().begin(), tensor.shape().end());
    blob.data = tensor.data();
    blobs.push_back(std::move(blob));
  }
  save_checkpoint(path, blobs);
  save_key_values(path + ".meta", config_to_key_values(config));
}

std::pair<ModelConfig, ModelParams> load_model(const std::string& path) {
  ModelConfig config = config_from_key_values(load_key_values(path + ".meta"));
  ModelParams params = init_params<float>(config, 0);
  auto blobs = load_checkpoint(path);
  if (blobs.size() != params.registry.size()) {
    throw std::runtime_error(path + ": checkpoint holds " + std::to_string(blobs.size()) +
                             " tensors, config needs " +
                             std::to_string(params.registry.size()));
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    auto& [name, tensor] = params.registry[i];
    const auto& blob = blobs[i];
    if (blob.name != name) {
      throw std::runtime_error(path + ": tensor " + std::to_string(i) + " is '" + blob.name +
                               "', expected '" + name + "'");
    }
    Shape blob_shape(blob.dims.begin(), blob.dims.end());
    if (blob_shape != tensor.shape()) {
      throw std::runtime_error(path + ": tensor '" + name + "' has shape " +
                               shape_str(blob_shape) + ", expected " +
                               shape_str(tensor.shape()));
    }
    tensor.mutable_data() = blob.data;
  }
  return {std::move(config), std::move(params)};
}

}  // namespace lpr
