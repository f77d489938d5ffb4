#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpr/model.hpp"
#include "lpr/range_image.hpp"
#include "lpr/tensor.hpp"
#include "lpr/world.hpp"

namespace lpr {

/// Overlap above this fraction marks a pair as a positive sample.
inline constexpr double kPositiveOverlap = 0.3;

/// Training loss went NaN; callers get a distinct type so they can report
/// divergence separately from ordinary runtime failures.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingTuple {
  int query_index = -1;
  std::vector<int> positive_indices;
  std::vector<int> negative_indices;
};

struct TrainConfig {
  int k_p = 6;
  int k_n = 6;
  double alpha = 0.5;
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch = 1;  // tuples folded into one optimizer step
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Sparse ordered-pair overlap map. Pairs beyond the candidate radius are
/// absent and read back as 0.
class OverlapTable {
 public:
  int scan_count = 0;
  int warning_count = 0;  // pairs whose overlap computation failed, stored as 0

  void set(int i, int j, float value);
  float lookup(int i, int j) const;
  std::size_t size() const { return entries_.size(); }
  /// Entries in ascending (i, j) order.
  std::vector<std::tuple<int, int, float>> sorted_entries() const;

 private:
  static std::uint64_t key(int i, int j) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
           static_cast<std::uint32_t>(j);
  }
  std::unordered_map<std::uint64_t, float> entries_;
};

/// Overlap for every ordered pair within candidate_radius of each other
/// (translation distance), including (i, i). Failed projections count
/// warnings and store 0. Pure per pair; `threads` splits the row range.
OverlapTable build_overlap_table(const std::vector<ScanWithPose>& scans,
                                 const ProjectionConfig& cfg, double delta,
                                 double candidate_radius, int threads = 1);

/// CSV "i,j,overlap" with a header line.
void save_overlap_table(const std::string& path, const OverlapTable& table);
OverlapTable load_overlap_table(const std::string& path);

/// Uniform sampling without replacement from the query's positive
/// (overlap > 0.3) and negative (<= 0.3) index sets. Returns nullopt when the
/// query lacks k_p positives or k_n negatives ("query skipped").
std::optional<TrainingTuple> sample_tuple(const OverlapTable& table, int query_index,
                                          const TrainConfig& cfg, std::mt19937_64& rng);

template <typename S>
struct TripletLossT {
  Tensor<S> clamped;  // optimized value, >= 0
  Tensor<S> raw;      // pre-clamp value, logged for diagnostics
};

/// L = max(0, k_p*(alpha + max_p d(q,p)) - sum_n d(q,n)), d = squared
/// Euclidean distance between descriptors.
template <typename S>
TripletLossT<S> lazy_triplet_loss(const Tensor<S>& vq, const std::vector<Tensor<S>>& vps,
                                  const std::vector<Tensor<S>>& vns, double alpha) {
  if (vps.empty() || vns.empty()) {
    throw std::invalid_argument("lazy_triplet_loss: empty positive or negative list");
  }
  auto sq_dist = [&](const Tensor<S>& a, const Tensor<S>& b) {
    auto diff = sub(a, b);
    return sum_all(mul(diff, diff));
  };
  std::vector<Tensor<S>> pos_d;
  pos_d.reserve(vps.size());
  for (const auto& vp : vps) pos_d.push_back(sq_dist(vq, vp));
  auto hardest = max_all(concat(pos_d, 0));
  std::vector<Tensor<S>> neg_d;
  neg_d.reserve(vns.size());
  for (const auto& vn : vns) neg_d.push_back(sq_dist(vq, vn));
  auto neg_sum = sum_all(concat(neg_d, 0));
  auto raw = sub(mul_scalar(add_scalar(hardest, static_cast<S>(alpha)),
                            static_cast<S>(vps.size())),
                 neg_sum);
  return {relu(raw), raw};
}

struct LossRecord {
  int step = 0;
  float raw = 0.0f;
  float clamped = 0.0f;
};

/// CSV "step,raw_loss,clamped_loss".
void save_loss_history(const std::string& path, const std::vector<LossRecord>& history);

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> history;
  int skipped_queries = 0;  // sample attempts rejected for lack of material
  int steps = 0;
};

/// Adam over the parameter registry; first/second moments kept in double.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
  void step(std::vector<std::pair<std::string, Tensor<float>>>& registry);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Epochs of shuffled per-query lazy-triplet steps; deterministic under
/// cfg.rng_seed, single-threaded. Throws on NaN loss and when no query ever
/// yields a tuple.
TrainResult train(const std::vector<ScanWithPose>& scans, const OverlapTable& table,
                  const ModelConfig& model_config, const ProjectionConfig& projection,
                  const TrainConfig& cfg, ModelParams params);

}  // namespace lpr
