#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lpr/io.hpp"
#include "lpr/model.hpp"
#include "lpr/range_image.hpp"
#include "lpr/retrieval.hpp"
#include "lpr/training.hpp"
#include "lpr/world.hpp"

namespace lpr {

/// Default file names each command either writes to --out or finds in --data.
struct RunPaths {
  std::string data;        // scan directory from generate
  std::string out;         // artifact directory
  std::string table;       // overlap table CSV
  std::string checkpoint;  // trained model
  std::string db;          // descriptor database
  std::string queries;     // query descriptor database (place-recognition mode)
};

/// One experiment described as flat key=value text. The model always shares
/// the projection grid, so there are no model.h / model.w keys; unknown keys
/// and out-of-range values are rejected at parse time, naming the key.
struct RunConfig {
  ProjectionConfig projection;
  ModelConfig model;
  TrainConfig train;
  WorldParams world;
  TrajectorySpec trajectory;
  ScanParams scan;
  RunPaths paths;
  std::uint64_t init_seed = 0;    // model parameter initialization
  double overlap_delta = 0.0;     // 0 means default_overlap_delta(scan.beams)
  double overlap_radius = 100.0;  // candidate radius for table building, meters
  int exclusion_radius = 100;     // loop-closing stream window, indices

  double delta() const;
};

RunConfig parse_run_config(const KeyValues& kv);
RunConfig load_run_config(const std::filesystem::path& path);

/// scan_000017.lprc style name shared by generate and the loaders.
std::string scan_file_name(int index);

/// poses.txt plus one scan file per pose line; a trailing scan file with no
/// pose is an error, so the directory content is always fully accounted for.
std::vector<ScanWithPose> load_scan_dir(const std::filesystem::path& dir);

/// Simulates a world and trajectory, then writes scan_*.lprc, poses.txt and
/// manifest.txt. Nothing is written until the whole sequence exists in memory.
void cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::optional<std::uint64_t> seed_override = std::nullopt);

/// Trains from a generated directory. Loads table_path if present, otherwise
/// builds the overlap table and caches it there. Writes model.ckpt (+ .meta)
/// and loss.csv to out_dir; a failed save leaves no partial artifacts.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
               const std::filesystem::path& out_dir,
               const std::filesystem::path& table_path,
               std::optional<std::uint64_t> seed_override = std::nullopt,
               int threads = 1);

struct ExtractReport {
  int scan_count = 0;
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
};

/// Projects and embeds scans [start, start+count) (count < 0 means the rest)
/// into out_dir/descriptors.lprd with record ids equal to scan indices.
/// The timing report goes to stdout only; artifacts stay deterministic.
ExtractReport cmd_extract(const std::filesystem::path& checkpoint,
                          const std::optional<RunConfig>& cfg,
                          const std::filesystem::path& data_dir, int start, int count,
                          const std::filesystem::path& out_dir, int threads = 1);

/// Loop-closing stream protocol; writes pr_curve.csv and recall_at.csv.
EvalResult cmd_evaluate_stream(const std::filesystem::path& db_path,
                               const std::filesystem::path& table_path,
                               const std::filesystem::path& out_dir,
                               int exclusion_radius);

/// Query-vs-database protocol; writes recall_at.csv and optionally a
/// self-contained recall_at.svg line chart.
std::map<int, double> cmd_evaluate_place(const std::filesystem::path& db_path,
                                         const std::filesystem::path& queries_path,
                                         const std::filesystem::path& table_path,
                                         const std::filesystem::path& out_dir,
                                         bool emit_svg);

/// Runs a command body and maps what it throws to the process exit code:
/// 0 success, 1 validation (invalid_argument), 2 runtime failure,
/// 3 divergence. Failures are reported on stderr.
int run_command(const std::function<void()>& body);

/// Re-extracts query scans under 12 yaw rotations; writes yaw_sweep.csv.
std::vector<YawSweepPoint> cmd_sweep_yaw(const std::filesystem::path& checkpoint,
                                         const std::optional<RunConfig>& cfg,
                                         const std::filesystem::path& db_path,
                                         const std::filesystem::path& data_dir,
                                         int start, int count,
                                         const std::filesystem::path& table_path,
                                         const std::filesystem::path& out_dir);

}  // namespace lpr
