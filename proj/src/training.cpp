#include "lpr/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "lpr/io.hpp"

namespace lpr {

void TrainConfig::validate() const {
  if (k_p < 1 || k_n < 1) throw std::invalid_argument("train config: k_p and k_n must be >= 1");
  if (alpha <= 0.0) throw std::invalid_argument("train config: alpha must be > 0");
  if (learning_rate < 0.0) throw std::invalid_argument("train config: negative learning rate");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
}

void OverlapTable::set(int i, int j, float value) {
  if (value < 0.0f || value > 1.0f) {
    throw std::invalid_argument("overlap table: value " + std::to_string(value) +
                                " outside [0,1]");
  }
  entries_[key(i, j)] = value;
}

float OverlapTable::lookup(int i, int j) const {
  auto it = entries_.find(key(i, j));
  return it == entries_.end() ? 0.0f : it->second;
}

std::vector<std::tuple<int, int, float>> OverlapTable::sorted_entries() const {
  std::vector<std::tuple<int, int, float>> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) {
    out.emplace_back(static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffffu), v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

OverlapTable build_overlap_table(const std::vector<ScanWithPose>& scans,
                                 const ProjectionConfig& cfg, double delta,
                                 double candidate_radius, int threads) {
  if (scans.size() < 2) {
    throw std::invalid_argument("overlap table: need at least 2 scans, got " +
                                std::to_string(scans.size()));
  }
  if (threads < 1) threads = 1;
  const int n = static_cast<int>(scans.size());

  // Query-side images are pose-independent; project each scan once. A scan that
  // projects empty poisons only its own pairs, recorded per-pair below.
  std::vector<std::optional<RangeImage>> query_images(scans.size());
  for (std::size_t i = 0; i < scans.size(); ++i) {
    try {
      query_images[i] = project_cloud(scans[i].cloud, cfg);
    } catch (const std::runtime_error&) {
    }
  }

  struct Row {
    std::vector<std::pair<int, float>> values;
    int warnings = 0;
  };
  std::vector<Row> rows(scans.size());
  auto compute_rows = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      for (int j = 0; j < n; ++j) {
        const double dist =
            (scans[i].pose.translation - scans[j].pose.translation).norm();
        if (dist > candidate_radius) continue;
        float value = 0.0f;
        try {
          if (!query_images[i]) throw std::runtime_error("empty range image");
          value = static_cast<float>(compute_overlap(
              *query_images[i],
              reproject(scans[j].cloud, scans[j].pose, scans[i].pose, cfg), delta));
        } catch (const std::runtime_error&) {
          ++rows[i].warnings;  // projection left the view or had no overlap basis
        }
        rows[i].values.emplace_back(j, value);
      }
    }
  };

  if (threads == 1) {
    compute_rows(0, n);
  } else {
    std::vector<std::thread> workers;
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int begin = t * chunk;
      const int end = std::min(n, begin + chunk);
      if (begin < end) workers.emplace_back(compute_rows, begin, end);
    }
    for (auto& w : workers) w.join();
  }

  OverlapTable table;
  table.scan_count = n;
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, value] : rows[i].values) table.set(i, j, value);
    table.warning_count += rows[i].warnings;
  }
  return table;
}

void save_overlap_table(const std::string& path, const OverlapTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "i,j,overlap\n";
  for (const auto& [i, j, value] : table.sorted_entries()) {
    out << i << "," << j << "," << format_double(value) << "\n";
  }
  if (!out.good()) throw std::runtime_error(path + ": write failed");
}

OverlapTable load_overlap_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "i,j,overlap") {
    throw std::runtime_error(path + ": missing overlap table header");
  }
  OverlapTable table;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int i = 0, j = 0;
    double value = 0.0;
    const char* p = line.data();
    const char* end = p + line.size();
    auto eat_int = [&](int& out_val) {
      auto [next, ec] = std::from_chars(p, end, out_val);
      if (ec != std::errc() || next >= end || *next != ',') return false;
      p = next + 1;
      return true;
    };
    if (!eat_int(i) || !eat_int(j)) {
      throw std::runtime_error(path + ": bad row at line " + std::to_string(line_no));
    }
    try {
      value = std::stod(std::string(p, end));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": bad overlap at line " + std::to_string(line_no));
    }
    table.set(i, j, static_cast<float>(value));
    table.scan_count = std::max({table.scan_count, i + 1, j + 1});
  }
  return table;
}

std::optional<TrainingTuple> sample_tuple(const OverlapTable& table, int query_index,
                                          const TrainConfig& cfg, std::mt19937_64& rng) {
  std::vector<int> positives, negatives;
  for (int j = 0; j < table.scan_count; ++j) {
    if (j == query_index) continue;
    if (table.lookup(query_index, j) > kPositiveOverlap) {
      positives.push_back(j);
    } else {
      negatives.push_back(j);
    }
  }
  if (static_cast<int>(positives.size()) < cfg.k_p ||
      static_cast<int>(negatives.size()) < cfg.k_n) {
    return std::nullopt;  // query skipped
  }
  auto draw = [&rng](std::vector<int>& pool, int count) {
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
  };
  TrainingTuple tuple;
  tuple.query_index = query_index;
  tuple.positive_indices = draw(positives, cfg.k_p);
  tuple.negative_indices = draw(negatives, cfg.k_n);
  return tuple;
}

void save_loss_history(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "step,raw_loss,clamped_loss\n";
  for (const auto& record : history) {
    out << record.step << "," << format_double(record.raw) << ","
        << format_double(record.clamped) << "\n";
  }
  if (!out.good()) throw std::runtime_error(path + ": write failed");
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(std::vector<std::pair<std::string, Tensor<float>>>& registry) {
  if (m_.empty()) {
    m_.resize(registry.size());
    v_.resize(registry.size());
    for (std::size_t i = 0; i < registry.size(); ++i) {
      m_[i].assign(registry[i].second.numel(), 0.0);
      v_[i].assign(registry[i].second.numel(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < registry.size(); ++i) {
    auto& tensor = registry[i].second;
    auto& data = tensor.mutable_data();
    const auto& grad = tensor.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      data[j] = static_cast<float>(data[j] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

TrainResult train(const std::vector<ScanWithPose>& scans, const OverlapTable& table,
                  const ModelConfig& model_config, const ProjectionConfig& projection,
                  const TrainConfig& cfg, ModelParams params) {
  cfg.validate();
  model_config.validate();
  if (static_cast<int>(scans.size()) != table.scan_count) {
    throw std::invalid_argument("train: " + std::to_string(scans.size()) +
                                " scans vs overlap table over " +
                                std::to_string(table.scan_count));
  }
  if (projection.h != model_config.h || projection.w != model_config.w) {
    throw std::invalid_argument("train: projection " + std::to_string(projection.h) + "x" +
                                std::to_string(projection.w) + " vs model input " +
                                std::to_string(model_config.h) + "x" +
                                std::to_string(model_config.w));
  }

  std::vector<Tensor<float>> images;
  images.reserve(scans.size());
  for (const auto& scan : scans) {
    images.push_back(image_to_tensor<float>(project_cloud(scan.cloud, projection)));
  }

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.epochs) * scans.size() / cfg.batch + 1);
  AdamOptimizer adam(cfg.learning_rate);
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<int> order(scans.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<Tensor<float>> batch_clamped, batch_raw;
  auto flush_batch = [&]() {
    if (batch_clamped.empty()) return;
    const float inv = 1.0f / static_cast<float>(batch_clamped.size());
    auto mean_clamped = mul_scalar(sum_all(concat(batch_clamped, 0)), inv);
    auto mean_raw = mul_scalar(sum_all(concat(batch_raw, 0)), inv);
    const float raw_value = mean_raw.item();
    const float clamped_value = mean_clamped.item();
    if (std::isnan(raw_value) || std::isnan(clamped_value)) {
      throw DivergenceError("train: loss is NaN at step " +
                            std::to_string(result.steps + 1));
    }
    backward(mean_clamped);
    adam.step(params.registry);
    ++result.steps;
    result.history.push_back({result.steps, raw_value, clamped_value});
    batch_clamped.clear();
    batch_raw.clear();
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int query : order) {
      auto tuple = sample_tuple(table, query, cfg, rng);
      if (!tuple) {
        ++result.skipped_queries;
        continue;
      }
      auto vq = model_forward(model_config, params, images[query]);
      std::vector<Tensor<float>> vps, vns;
      for (int p : tuple->positive_indices) {
        vps.push_back(model_forward(model_config, params, images[p]));
      }
      for (int n : tuple->negative_indices) {
        vns.push_back(model_forward(model_config, params, images[n]));
      }
      auto loss = lazy_triplet_loss(vq, vps, vns, cfg.alpha);
      batch_clamped.push_back(loss.clamped);
      batch_raw.push_back(loss.raw);
      if (static_cast<int>(batch_clamped.size()) == cfg.batch) flush_batch();
    }
    flush_batch();  // partial batch at epoch end still becomes a step
  }
  if (result.steps == 0) {
    throw std::invalid_argument("train: no query ever yielded a tuple");
  }
  result.params = std::move(params);
  return result;
}

}  // namespace lpr
