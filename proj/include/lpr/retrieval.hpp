#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "lpr/io.hpp"
#include "lpr/model.hpp"
#include "lpr/range_image.hpp"
#include "lpr/training.hpp"

namespace lpr {

/// validate_database accepts rows whose norm is within this of 1.
inline constexpr double kUnitNormTolerance = 1e-4;

/// In-memory descriptor index. Rows are unit-norm, ids unique; loop-closing
/// evaluation additionally expects ids 0..n-1 in scan order.
struct DescriptorDatabase {
  int dim = 0;
  std::vector<float> data;                // size() x dim, row-major
  std::vector<DescriptorRecord> records;  // aligned with rows

  int size() const { return static_cast<int>(records.size()); }
  const float* row(int i) const {
    return data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim);
  }
};

/// Throws std::invalid_argument on storage/record size mismatch, a row whose
/// norm strays from 1 by more than kUnitNormTolerance, or a duplicate id.
void validate_database(const DescriptorDatabase& db);

/// File adapters; database_from_file validates on the way in.
DescriptorDatabase database_from_file(DescriptorFile file);
DescriptorFile database_to_file(const DescriptorDatabase& db);

struct Match {
  int id = -1;
  double distance = 0.0;
};

/// Keeps only entries more than `radius` indices older than the query:
/// candidates satisfy query_index - id > radius.
struct ExclusionWindow {
  int query_index = 0;
  int radius = 100;
};

/// Exact brute-force scan: Euclidean distance ascending, ties broken by lower
/// id, top_k beyond the candidate count truncates. Throws std::runtime_error
/// when the exclusion window leaves no candidates.
std::vector<Match> query(const DescriptorDatabase& db, const std::vector<float>& descriptor,
                         int top_k, std::optional<ExclusionWindow> exclusion = std::nullopt);

struct PrPoint {
  double threshold = 0.0;  // top-1 distance cutoff that produced this point
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalResult {
  double auc = 0.0;
  double f1max = 0.0;
  double recall_at_one_percent = 0.0;  // filled by loop-closing evaluation
  std::map<int, double> recall_at;     // N -> fraction of queries answered in top N
  std::vector<PrPoint> pr_curve;       // one point per distinct top-1 distance
};

/// Streaming loop-closure evaluation: scan i queries the entries more than
/// `exclusion_radius` indices older, mirroring incremental insertion. A top-1
/// answer counts as correct when its overlap with the query exceeds
/// kPositiveOverlap; the PR curve sweeps every distinct top-1 distance, AUC is
/// its trapezoidal area anchored at recall 0, and recall@1 / recall@1% are
/// taken over queries that have at least one true loop. recall@1% uses
/// N = ceil(0.01 x effective database size) per query. Requires ids 0..n-1,
/// table.scan_count == n, and n >= 200; throws std::runtime_error
/// "no evaluable queries" when no query has a true loop.
EvalResult evaluate_loop_closing(const DescriptorDatabase& db, const OverlapTable& table,
                                 int exclusion_radius = 100);

/// recall@N for N in 1..25 over queries with at least one true reference
/// (overlap above kPositiveOverlap) in the database; queries without one are
/// skipped. Throws std::runtime_error "no evaluable queries" if none remain.
std::map<int, double> evaluate_place_recognition(const DescriptorDatabase& database,
                                                 const DescriptorDatabase& queries,
                                                 const OverlapTable& table);

struct YawSweepPoint {
  double angle_deg = 0.0;
  double recall_at_1 = 0.0;
};

/// Rotates each query cloud about yaw in 30 degree steps (0..330), reprojects,
/// re-extracts its descriptor, and reports recall@1 against the unrotated
/// database per angle. Ground truth and the evaluable query set come from the
/// table as in evaluate_place_recognition.
std::vector<YawSweepPoint> yaw_sweep_eval(const ModelConfig& config, const ModelParams& params,
                                          const ProjectionConfig& projection,
                                          const DescriptorDatabase& database,
                                          const std::vector<PointCloud>& query_clouds,
                                          const std::vector<int>& query_ids,
                                          const OverlapTable& table);

/// Metrics CSVs. Values are written with format_double and round-trip exactly.
void save_pr_curve(const std::filesystem::path& path, const EvalResult& result);
void save_recall_at(const std::filesystem::path& path, const std::map<int, double>& recall_at);
void save_yaw_sweep(const std::filesystem::path& path, const std::vector<YawSweepPoint>& sweep);

}  // namespace lpr
