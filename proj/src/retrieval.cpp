#include "lpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace lpr {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

std::ofstream open_for_writing(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::vector<float> row_copy(const DescriptorDatabase& db, int i) {
  const float* r = db.row(i);
  return std::vector<float>(r, r + db.dim);
}

bool is_true_match(const OverlapTable& table, int query_id, int reference_id) {
  return table.lookup(query_id, reference_id) > kPositiveOverlap;
}

}  // namespace

void validate_database(const DescriptorDatabase& db) {
  if (db.dim <= 0) throw std::invalid_argument("descriptor database: nonpositive dim");
  const std::size_t expect =
      static_cast<std::size_t>(db.records.size()) * static_cast<std::size_t>(db.dim);
  if (db.data.size() != expect) {
    throw std::invalid_argument("descriptor database: " + std::to_string(db.data.size()) +
                                " values for " + std::to_string(db.records.size()) +
                                " records of dim " + std::to_string(db.dim));
  }
  std::unordered_set<std::uint32_t> seen;
  seen.reserve(db.records.size());
  for (const auto& record : db.records) {
    if (!seen.insert(record.id).second) {
      throw std::invalid_argument("descriptor database: duplicate id " +
                                  std::to_string(record.id));
    }
  }
  for (int i = 0; i < db.size(); ++i) {
    const float* r = db.row(i);
    double sq = 0.0;
    for (int k = 0; k < db.dim; ++k) sq += static_cast<double>(r[k]) * static_cast<double>(r[k]);
    const double norm = std::sqrt(sq);
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw std::invalid_argument("descriptor database: row " + std::to_string(i) +
                                  " has norm " + std::to_string(norm));
    }
  }
}

DescriptorDatabase database_from_file(DescriptorFile file) {
  DescriptorDatabase db;
  db.dim = static_cast<int>(file.dim);
  db.data = std::move(file.data);
  db.records = std::move(file.records);
  validate_database(db);
  return db;
}

DescriptorFile database_to_file(const DescriptorDatabase& db) {
  DescriptorFile file;
  file.dim = static_cast<std::uint32_t>(db.dim);
  file.data = db.data;
  file.records = db.records;
  return file;
}

std::vector<Match> query(const DescriptorDatabase& db, const std::vector<float>& descriptor,
                         int top_k, std::optional<ExclusionWindow> exclusion) {
  if (db.size() == 0) throw std::invalid_argument("query: empty database");
  if (static_cast<int>(descriptor.size()) != db.dim) {
    throw std::invalid_argument("query: descriptor has " + std::to_string(descriptor.size()) +
                                " values, database dim is " + std::to_string(db.dim));
  }
  if (top_k < 1) throw std::invalid_argument("query: top_k must be at least 1");

  std::vector<Match> matches;
  matches.reserve(db.records.size());
  for (int i = 0; i < db.size(); ++i) {
    const int id = static_cast<int>(db.records[i].id);
    if (exclusion && exclusion->query_index - id <= exclusion->radius) continue;
    const float* r = db.row(i);
    double sq = 0.0;
    for (int k = 0; k < db.dim; ++k) {
      const double d = static_cast<double>(descriptor[k]) - static_cast<double>(r[k]);
      sq += d * d;
    }
    matches.push_back({id, std::sqrt(sq)});
  }
  if (matches.empty()) throw std::runtime_error("query: empty effective database");
  std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  if (static_cast<int>(matches.size()) > top_k) matches.resize(static_cast<std::size_t>(top_k));
  return matches;
}

EvalResult evaluate_loop_closing(const DescriptorDatabase& db, const OverlapTable& table,
                                 int exclusion_radius) {
  const int n = db.size();
  if (n < 200) {
    throw std::invalid_argument("evaluate_loop_closing: need at least 200 scans, got " +
                                std::to_string(n));
  }
  if (exclusion_radius < 0) {
    throw std::invalid_argument("evaluate_loop_closing: negative exclusion radius");
  }
  if (table.scan_count != n) {
    throw std::invalid_argument("evaluate_loop_closing: table covers " +
                                std::to_string(table.scan_count) + " scans, database has " +
                                std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(db.records[i].id) != i) {
      throw std::invalid_argument("evaluate_loop_closing: ids must be the scan indices 0..n-1");
    }
  }

  struct Prediction {
    double distance = 0.0;
    bool correct = false;
  };
  std::vector<Prediction> predictions;  // one per query with a nonempty window
  int npos = 0;                         // queries with at least one true loop
  int top1_hits = 0;
  int topn_hits = 0;
  for (int i = 0; i < n; ++i) {
    const int candidates = i - exclusion_radius;
    if (candidates <= 0) continue;
    bool has_true = false;
    for (int j = 0; j < candidates; ++j) {
      if (is_true_match(table, i, j)) {
        has_true = true;
        break;
      }
    }
    const int top_n = static_cast<int>(std::ceil(0.01 * candidates));
    auto ranked = query(db, row_copy(db, i), top_n, ExclusionWindow{i, exclusion_radius});
    const bool correct = is_true_match(table, i, ranked.front().id);
    predictions.push_back({ranked.front().distance, correct});
    if (!has_true) continue;
    ++npos;
    if (correct) ++top1_hits;
    for (const auto& match : ranked) {
      if (is_true_match(table, i, match.id)) {
        ++topn_hits;
        break;
      }
    }
  }
  if (npos == 0) throw std::runtime_error("evaluate_loop_closing: no evaluable queries");

  std::sort(predictions.begin(), predictions.end(),
            [](const Prediction& a, const Prediction& b) { return a.distance < b.distance; });

  EvalResult result;
  int cum_correct = 0;
  for (std::size_t k = 0; k < predictions.size();) {
    const double threshold = predictions[k].distance;
    while (k < predictions.size() && predictions[k].distance == threshold) {
      if (predictions[k].correct) ++cum_correct;
      ++k;
    }
    const double precision = static_cast<double>(cum_correct) / static_cast<double>(k);
    const double recall = static_cast<double>(cum_correct) / npos;
    result.pr_curve.push_back({threshold, precision, recall});
  }

  // Trapezoid over the sweep, anchored at recall 0 with the first precision.
  double prev_recall = 0.0;
  double prev_precision = result.pr_curve.front().precision;
  for (const auto& point : result.pr_curve) {
    result.auc += (point.recall - prev_recall) * (point.precision + prev_precision) / 2.0;
    const double denom = point.precision + point.recall;
    if (denom > 0.0) {
      result.f1max = std::max(result.f1max, 2.0 * point.precision * point.recall / denom);
    }
    prev_recall = point.recall;
    prev_precision = point.precision;
  }
  result.recall_at[1] = static_cast<double>(top1_hits) / npos;
  result.recall_at_one_percent = static_cast<double>(topn_hits) / npos;
  return result;
}

std::map<int, double> evaluate_place_recognition(const DescriptorDatabase& database,
                                                 const DescriptorDatabase& queries,
                                                 const OverlapTable& table) {
  if (database.size() == 0) {
    throw std::invalid_argument("evaluate_place_recognition: empty database");
  }
  if (queries.size() == 0) {
    throw std::invalid_argument("evaluate_place_recognition: empty query set");
  }
  if (queries.dim != database.dim) {
    throw std::invalid_argument("evaluate_place_recognition: query dim " +
                                std::to_string(queries.dim) + " vs database dim " +
                                std::to_string(database.dim));
  }

  std::vector<int> first_true_rank;  // 1-based; full retrieval always finds one
  for (int q = 0; q < queries.size(); ++q) {
    const int qid = static_cast<int>(queries.records[q].id);
    bool has_true = false;
    for (const auto& record : database.records) {
      if (is_true_match(table, qid, static_cast<int>(record.id))) {
        has_true = true;
        break;
      }
    }
    if (!has_true) continue;
    auto ranked = query(database, row_copy(queries, q), database.size());
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      if (is_true_match(table, qid, ranked[k].id)) {
        first_true_rank.push_back(static_cast<int>(k) + 1);
        break;
      }
    }
  }
  if (first_true_rank.empty()) {
    throw std::runtime_error("evaluate_place_recognition: no evaluable queries");
  }

  std::map<int, double> recall_at;
  for (int n = 1; n <= 25; ++n) {
    int hits = 0;
    for (int rank : first_true_rank) {
      if (rank <= n) ++hits;
    }
    recall_at[n] = static_cast<double>(hits) / static_cast<double>(first_true_rank.size());
  }
  return recall_at;
}

std::vector<YawSweepPoint> yaw_sweep_eval(const ModelConfig& config, const ModelParams& params,
                                          const ProjectionConfig& projection,
                                          const DescriptorDatabase& database,
                                          const std::vector<PointCloud>& query_clouds,
                                          const std::vector<int>& query_ids,
                                          const OverlapTable& table) {
  if (database.size() == 0) throw std::invalid_argument("yaw_sweep_eval: empty database");
  if (query_clouds.size() != query_ids.size()) {
    throw std::invalid_argument("yaw_sweep_eval: " + std::to_string(query_clouds.size()) +
                                " clouds for " + std::to_string(query_ids.size()) + " ids");
  }
  if (config.d_output != database.dim) {
    throw std::invalid_argument("yaw_sweep_eval: model emits dim " +
                                std::to_string(config.d_output) + ", database dim is " +
                                std::to_string(database.dim));
  }
  if (projection.h != config.h || projection.w != config.w) {
    throw std::invalid_argument("yaw_sweep_eval: projection " + std::to_string(projection.h) +
                                "x" + std::to_string(projection.w) + " does not match model " +
                                std::to_string(config.h) + "x" + std::to_string(config.w));
  }

  // Ground truth fixes the evaluable set, so every angle shares the denominator.
  std::vector<std::size_t> evaluable;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    for (const auto& record : database.records) {
      if (is_true_match(table, query_ids[q], static_cast<int>(record.id))) {
        evaluable.push_back(q);
        break;
      }
    }
  }
  if (evaluable.empty()) throw std::runtime_error("yaw_sweep_eval: no evaluable queries");

  std::vector<YawSweepPoint> sweep;
  for (int angle = 0; angle < 360; angle += 30) {
    const Pose rotation = yaw_rotation(deg2rad(angle));
    int hits = 0;
    for (std::size_t q : evaluable) {
      const auto image = project_cloud(apply_pose(query_clouds[q], rotation), projection);
      const auto descriptor = compute_descriptor(config, params, image);
      const auto top = query(database, descriptor, 1);
      if (is_true_match(table, query_ids[q], top.front().id)) ++hits;
    }
    sweep.push_back(
        {static_cast<double>(angle), static_cast<double>(hits) / static_cast<double>(evaluable.size())});
  }
  return sweep;
}

void save_pr_curve(const std::filesystem::path& path, const EvalResult& result) {
  auto out = open_for_writing(path);
  out << "threshold,precision,recall\n";
  for (const auto& point : result.pr_curve) {
    out << format_double(point.threshold) << ',' << format_double(point.precision) << ','
        << format_double(point.recall) << '\n';
  }
}

void save_recall_at(const std::filesystem::path& path, const std::map<int, double>& recall_at) {
  auto out = open_for_writing(path);
  out << "n,recall\n";
  for (const auto& [n, recall] : recall_at) {
    out << n << ',' << format_double(recall) << '\n';
  }
}

void save_yaw_sweep(const std::filesystem::path& path, const std::vector<YawSweepPoint>& sweep) {
  auto out = open_for_writing(path);
  out << "angle_deg,recall_at_1\n";
  for (const auto& point : sweep) {
    out << format_double(point.angle_deg) << ',' << format_double(point.recall_at_1) << '\n';
  }
}

}  // namespace lpr
