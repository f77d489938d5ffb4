#include "lpr/commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string_view>
#include <system_error>
#include <thread>
#include <utility>

namespace lpr {
namespace {

bool debug_enabled() {
  const char* level = std::getenv("LPR_LOG");
  return level != nullptr && std::string_view(level) == "debug";
}

/// Progress goes to stderr; stdout carries only command reports.
void log_info(const std::string& msg) { std::cerr << "[lpr] " << msg << "\n"; }

void log_debug(const std::string& msg) {
  if (debug_enabled()) std::cerr << "[lpr:debug] " << msg << "\n";
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw std::invalid_argument("config: key '" + key + "': expected " + expected +
                              ", got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "an integer");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "an unsigned integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "a finite number");
  }
  return out;
}

std::vector<RieLayerSpec> parse_rie(const std::string& key, const std::string& value) {
  std::vector<RieLayerSpec> layers;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    const std::size_t comma = std::min(value.find(',', pos), value.size());
    const char* cur = value.data() + pos;
    const char* stop = value.data() + comma;
    int fields[3] = {0, 0, 0};
    for (int f = 0; f < 3; ++f) {
      const auto [ptr, ec] = std::from_chars(cur, stop, fields[f]);
      if (ec != std::errc()) bad_value(key, value, "kh:sh:cout triples");
      cur = ptr;
      if (f < 2) {
        if (cur == stop || *cur != ':') bad_value(key, value, "kh:sh:cout triples");
        ++cur;
      }
    }
    if (cur != stop) bad_value(key, value, "kh:sh:cout triples");
    layers.push_back({fields[0], fields[1], fields[2]});
    if (comma == value.size()) break;
    pos = comma + 1;
  }
  if (layers.empty()) bad_value(key, value, "kh:sh:cout triples");
  return layers;
}

TrajectoryPattern parse_pattern_key(const std::string& key, const std::string& value) {
  try {
    return parse_pattern(value);
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: key '" + key + "': " + e.what());
  }
}

[[noreturn]] void fail_config(const std::string& what) {
  throw std::invalid_argument("config: " + what);
}

/// Validates a [start, start+count) slice of `total` scans; count < 0 takes
/// the rest. Returns the resolved count.
int slice_count(const char* cmd, int total, int start, int count) {
  if (start < 0 || start >= total) {
    throw std::invalid_argument(std::string(cmd) + ": start " + std::to_string(start) +
                                " outside 0.." + std::to_string(total - 1));
  }
  const int m = count < 0 ? total - start : count;
  if (m < 1 || start + m > total) {
    throw std::invalid_argument(std::string(cmd) + ": range [" + std::to_string(start) +
                                ", " + std::to_string(start + m) + ") exceeds " +
                                std::to_string(total) + " scans");
  }
  return m;
}

const char* revisit_label(TrajectoryPattern pattern) {
  switch (pattern) {
    case TrajectoryPattern::kLoop: return "Forward";
    case TrajectoryPattern::kReverseLoop: return "Reverse";
    case TrajectoryPattern::kLinear: return "None";
  }
  return "None";
}

/// Loads a checkpoint and resolves the projection it expects. A config may
/// refine fov and range but must agree with the model on the grid.
std::pair<std::pair<ModelConfig, ModelParams>, ProjectionConfig> load_checkpoint_with_projection(
    const std::filesystem::path& checkpoint, const std::optional<RunConfig>& cfg,
    const char* cmd) {
  auto loaded = load_model(checkpoint.string());
  ProjectionConfig pc;
  pc.h = loaded.first.h;
  pc.w = loaded.first.w;
  if (cfg) {
    if (cfg->projection.h != loaded.first.h || cfg->projection.w != loaded.first.w) {
      throw std::invalid_argument(
          std::string(cmd) + ": checkpoint expects a " + std::to_string(loaded.first.h) +
          "x" + std::to_string(loaded.first.w) + " range image, config projection is " +
          std::to_string(cfg->projection.h) + "x" + std::to_string(cfg->projection.w));
    }
    pc = cfg->projection;
  }
  return {std::move(loaded), pc};
}

void write_recall_svg(const std::filesystem::path& path,
                      const std::map<int, double>& recall_at) {
  if (recall_at.empty()) {
    throw std::invalid_argument("write_recall_svg: empty recall map");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  const double x0 = 46.0, x1 = 464.0, y0 = 284.0, y1 = 18.0;  // frame, y axis up
  const int n_max = recall_at.rbegin()->first;
  const auto x_of = [&](double n) {
    return x0 + (x1 - x0) * (n - 1.0) / std::max(1.0, static_cast<double>(n_max - 1));
  };
  const auto y_of = [&](double r) { return y0 + (y1 - y0) * r; };
  char buf[192];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 480 320\" "
         "font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (const double grid : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n",
                  x0, y_of(grid), x1, y_of(grid), x0 - 6.0, y_of(grid) + 4.0, grid);
    out << buf;
  }
  for (const int n : {1, 5, 10, 15, 20, 25}) {
    if (n > n_max) continue;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%d</text>\n",
                  x_of(n), y0 + 16.0, n);
    out << buf;
  }
  out << "<polyline fill=\"none\" stroke=\"#2b6cb0\" stroke-width=\"2\" points=\"";
  for (const auto& [n, recall] : recall_at) {
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", x_of(n), y_of(recall));
    out << buf;
  }
  out << "\"/>\n";
  for (const auto& [n, recall] : recall_at) {
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"2.5\" fill=\"#2b6cb0\"/>\n",
                  x_of(n), y_of(recall));
    out << buf;
  }
  out << "<text x=\"255\" y=\"312\" text-anchor=\"middle\">N</text>\n"
         "<text x=\"14\" y=\"150\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 14 150)\">recall@N</text>\n"
         "</svg>\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace

double RunConfig::delta() const {
  return overlap_delta > 0.0 ? overlap_delta : default_overlap_delta(scan.beams);
}

RunConfig parse_run_config(const KeyValues& kv) {
  RunConfig cfg;
  KeyValues model_kv;  // applied after the grid is known
  for (const auto& [key, value] : kv) {
    if (key.rfind("model.", 0) == 0) {
      model_kv.emplace_back(key, value);
    } else if (key == "projection.h") {
      cfg.projection.h = parse_int(key, value);
    } else if (key == "projection.w") {
      cfg.projection.w = parse_int(key, value);
    } else if (key == "projection.fov_up_deg") {
      cfg.projection.fov_up_deg = parse_double(key, value);
    } else if (key == "projection.fov_down_deg") {
      cfg.projection.fov_down_deg = parse_double(key, value);
    } else if (key == "projection.max_range") {
      cfg.projection.max_range = parse_double(key, value);
    } else if (key == "train.k_p") {
      cfg.train.k_p = parse_int(key, value);
    } else if (key == "train.k_n") {
      cfg.train.k_n = parse_int(key, value);
    } else if (key == "train.alpha") {
      cfg.train.alpha = parse_double(key, value);
    } else if (key == "train.learning_rate") {
      cfg.train.learning_rate = parse_double(key, value);
    } else if (key == "train.epochs") {
      cfg.train.epochs = parse_int(key, value);
    } else if (key == "train.batch") {
      cfg.train.batch = parse_int(key, value);
    } else if (key == "train.rng_seed") {
      cfg.train.rng_seed = parse_u64(key, value);
    } else if (key == "world.seed") {
      cfg.world.seed = parse_u64(key, value);
    } else if (key == "world.cylinder_count") {
      cfg.world.cylinder_count = parse_int(key, value);
    } else if (key == "world.box_count") {
      cfg.world.box_count = parse_int(key, value);
    } else if (key == "world.extent") {
      cfg.world.extent = parse_double(key, value);
    } else if (key == "world.ground_height") {
      cfg.world.ground_height = parse_double(key, value);
    } else if (key == "world.min_clearance") {
      cfg.world.min_clearance = parse_double(key, value);
    } else if (key == "world.path_radius") {
      cfg.world.path_radius = parse_double(key, value);
    } else if (key == "trajectory.pattern") {
      cfg.trajectory.pattern = parse_pattern_key(key, value);
    } else if (key == "trajectory.steps") {
      cfg.trajectory.steps = parse_int(key, value);
    } else if (key == "trajectory.step_length") {
      cfg.trajectory.step_length = parse_double(key, value);
    } else if (key == "trajectory.revisit_start") {
      cfg.trajectory.revisit_start = parse_int(key, value);
    } else if (key == "trajectory.lateral_offset") {
      cfg.trajectory.lateral_offset = parse_double(key, value);
    } else if (key == "trajectory.yaw_jitter") {
      cfg.trajectory.yaw_jitter = parse_double(key, value);
    } else if (key == "trajectory.sensor_height") {
      cfg.trajectory.sensor_height = parse_double(key, value);
    } else if (key == "scan.beams") {
      cfg.scan.beams = parse_int(key, value);
    } else if (key == "scan.horizontal_samples") {
      cfg.scan.horizontal_samples = parse_int(key, value);
    } else if (key == "scan.fov_up_deg") {
      cfg.scan.fov_up_deg = parse_double(key, value);
    } else if (key == "scan.fov_down_deg") {
      cfg.scan.fov_down_deg = parse_double(key, value);
    } else if (key == "scan.max_range") {
      cfg.scan.max_range = parse_double(key, value);
    } else if (key == "scan.noise_sigma") {
      cfg.scan.noise_sigma = parse_double(key, value);
    } else if (key == "overlap.delta") {
      cfg.overlap_delta = parse_double(key, value);
    } else if (key == "overlap.radius") {
      cfg.overlap_radius = parse_double(key, value);
    } else if (key == "eval.exclusion_radius") {
      cfg.exclusion_radius = parse_int(key, value);
    } else if (key == "paths.data") {
      cfg.paths.data = value;
    } else if (key == "paths.out") {
      cfg.paths.out = value;
    } else if (key == "paths.table") {
      cfg.paths.table = value;
    } else if (key == "paths.checkpoint") {
      cfg.paths.checkpoint = value;
    } else if (key == "paths.db") {
      cfg.paths.db = value;
    } else if (key == "paths.queries") {
      cfg.paths.queries = value;
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }

  if (cfg.projection.h < 1 || cfg.projection.w < 1) {
    fail_config("projection.h and projection.w must be positive");
  }
  // Stock encoder tables exist for the full-size heights; any other grid
  // must spell out its own layer chain.
  if (cfg.projection.h == 64 || cfg.projection.h == 32) {
    cfg.model = default_model_config(cfg.projection.h, cfg.projection.w);
  } else {
    cfg.model = ModelConfig{};
    cfg.model.rie_layers.clear();
    cfg.model.h = cfg.projection.h;
    cfg.model.w = cfg.projection.w;
  }
  for (const auto& [key, value] : model_kv) {
    if (key == "model.d_model") {
      cfg.model.d_model = parse_int(key, value);
    } else if (key == "model.n_head") {
      cfg.model.n_head = parse_int(key, value);
    } else if (key == "model.d_ffn") {
      cfg.model.d_ffn = parse_int(key, value);
    } else if (key == "model.num_tm_blocks") {
      cfg.model.num_tm_blocks = parse_int(key, value);
    } else if (key == "model.d_inter") {
      cfg.model.d_inter = parse_int(key, value);
    } else if (key == "model.d_output") {
      cfg.model.d_output = parse_int(key, value);
    } else if (key == "model.K") {
      cfg.model.K = parse_int(key, value);
    } else if (key == "model.rie_layers") {
      cfg.model.rie_layers = parse_rie(key, value);
    } else if (key == "model.init_seed") {
      cfg.init_seed = parse_u64(key, value);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  if (cfg.model.rie_layers.empty()) {
    fail_config("model.rie_layers is required for projection.h=" +
                std::to_string(cfg.projection.h));
  }

  if (cfg.projection.max_range <= 0.0) fail_config("projection.max_range must be positive");
  if (cfg.projection.fov_up_deg + cfg.projection.fov_down_deg <= 0.0) {
    fail_config("projection field of view is empty");
  }
  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    fail_config(e.what());
  }
  if (cfg.world.cylinder_count < 0 || cfg.world.box_count < 0) {
    fail_config("world landmark counts must be non-negative");
  }
  if (cfg.world.extent <= 0.0) fail_config("world.extent must be positive");
  if (cfg.trajectory.steps < 1) fail_config("trajectory.steps must be positive");
  if (cfg.trajectory.step_length <= 0.0) fail_config("trajectory.step_length must be positive");
  if (cfg.scan.beams < 8) fail_config("scan.beams must be at least 8");
  if (cfg.scan.horizontal_samples < 90) {
    fail_config("scan.horizontal_samples must be at least 90");
  }
  if (cfg.scan.max_range <= 0.0) fail_config("scan.max_range must be positive");
  if (cfg.scan.noise_sigma < 0.0) fail_config("scan.noise_sigma must be non-negative");
  if (cfg.overlap_delta < 0.0) fail_config("overlap.delta must be non-negative");
  if (cfg.overlap_radius <= 0.0) fail_config("overlap.radius must be positive");
  if (cfg.exclusion_radius < 0) fail_config("eval.exclusion_radius must be non-negative");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(load_key_values(path));
}

std::string scan_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scan_%06d.lprc", index);
  return buf;
}

std::vector<ScanWithPose> load_scan_dir(const std::filesystem::path& dir) {
  const auto poses = load_poses(dir / "poses.txt");
  if (poses.empty()) {
    throw std::runtime_error((dir / "poses.txt").string() + ": no poses");
  }
  std::vector<ScanWithPose> scans(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    scans[i].pose = poses[i];
    scans[i].cloud = load_point_cloud(dir / scan_file_name(static_cast<int>(i)));
  }
  if (std::filesystem::exists(dir / scan_file_name(static_cast<int>(poses.size())))) {
    throw std::runtime_error(dir.string() + ": more scan files than pose lines");
  }
  log_debug("loaded " + std::to_string(scans.size()) + " scans from " + dir.string());
  return scans;
}

void cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::optional<std::uint64_t> seed_override) {
  WorldParams world_params = cfg.world;
  if (seed_override) world_params.seed = *seed_override;
  const auto world = make_random_world(world_params);
  const auto scans = generate_trajectory(world, cfg.trajectory, cfg.scan);

  std::filesystem::create_directories(out_dir);
  std::vector<Pose> poses;
  poses.reserve(scans.size());
  for (std::size_t i = 0; i < scans.size(); ++i) {
    save_point_cloud(out_dir / scan_file_name(static_cast<int>(i)), scans[i].cloud);
    poses.push_back(scans[i].pose);
  }
  save_poses(out_dir / "poses.txt", poses);
  const KeyValues manifest = {
      {"pattern", pattern_name(cfg.trajectory.pattern)},
      {"steps", std::to_string(cfg.trajectory.steps)},
      {"revisit_start", std::to_string(cfg.trajectory.first_pass_steps())},
      {"scan_count", std::to_string(scans.size())},
      {"world_seed", std::to_string(world_params.seed)},
      {"first_pass", "Forward"},
      {"revisit", revisit_label(cfg.trajectory.pattern)},
  };
  save_key_values(out_dir / "manifest.txt", manifest);
  log_info("generate: wrote " + std::to_string(scans.size()) + " scans to " +
           out_dir.string());
}

void cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
               const std::filesystem::path& out_dir,
               const std::filesystem::path& table_path,
               std::optional<std::uint64_t> seed_override, int threads) {
  const auto scans = load_scan_dir(data_dir);

  OverlapTable table;
  if (std::filesystem::exists(table_path)) {
    log_info("train: loading overlap table " + table_path.string());
    table = load_overlap_table(table_path.string());
  } else {
    log_info("train: building overlap table for " + std::to_string(scans.size()) +
             " scans");
    table = build_overlap_table(scans, cfg.projection, cfg.delta(), cfg.overlap_radius,
                                threads);
    save_overlap_table(table_path.string(), table);
  }
  if (table.warning_count > 0) {
    log_info("train: " + std::to_string(table.warning_count) +
             " pair overlaps failed and count as 0");
  }

  auto params = init_params<float>(cfg.model, seed_override.value_or(cfg.init_seed));
  auto result = train(scans, table, cfg.model, cfg.projection, cfg.train,
                      std::move(params));

  std::filesystem::create_directories(out_dir);
  const auto checkpoint = out_dir / "model.ckpt";
  try {
    save_model(checkpoint.string(), cfg.model, result.params);
    save_loss_history((out_dir / "loss.csv").string(), result.history);
  } catch (...) {
    // Leave no partial artifacts behind.
    std::error_code ec;
    std::filesystem::remove(checkpoint, ec);
    std::filesystem::remove(out_dir / "model.ckpt.meta", ec);
    std::filesystem::remove(out_dir / "loss.csv", ec);
    throw;
  }
  char line[160];
  std::snprintf(line, sizeof(line), "train: %d steps, %d skipped queries, final loss %.6f",
                result.steps, result.skipped_queries, result.history.back().clamped);
  std::cout << line << "\n";
}

ExtractReport cmd_extract(const std::filesystem::path& checkpoint,
                          const std::optional<RunConfig>& cfg,
                          const std::filesystem::path& data_dir, int start, int count,
                          const std::filesystem::path& out_dir, int threads) {
  const auto [loaded, pc] = load_checkpoint_with_projection(checkpoint, cfg, "extract");
  const ModelConfig& model_config = loaded.first;
  const ModelParams& params = loaded.second;
  const auto scans = load_scan_dir(data_dir);
  const int m = slice_count("extract", static_cast<int>(scans.size()), start, count);

  DescriptorDatabase db;
  db.dim = model_config.d_output;
  db.data.resize(static_cast<std::size_t>(m) * db.dim);
  db.records.resize(m);
  std::vector<double> elapsed_ms(m);

  std::mutex error_mutex;
  std::exception_ptr error;
  const auto run_range = [&](int lo, int hi) {
    try {
      for (int k = lo; k < hi; ++k) {
        const int idx = start + k;
        const auto t0 = std::chrono::steady_clock::now();
        const RangeImage image = project_cloud(scans[idx].cloud, pc);
        const std::vector<float> descriptor = compute_descriptor(model_config, params, image);
        const auto t1 = std::chrono::steady_clock::now();
        elapsed_ms[k] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        std::copy(descriptor.begin(), descriptor.end(),
                  db.data.begin() + static_cast<std::size_t>(k) * db.dim);
        db.records[k].id = static_cast<std::uint32_t>(idx);
        db.records[k].timestamp = static_cast<double>(idx);
        db.records[k].pose = scans[idx].pose;
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  const int workers = std::clamp(threads, 1, m);
  if (workers == 1) {
    run_range(0, m);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      const int lo = static_cast<int>(static_cast<std::int64_t>(m) * t / workers);
      const int hi = static_cast<int>(static_cast<std::int64_t>(m) * (t + 1) / workers);
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& worker : pool) worker.join();
  }
  if (error) std::rethrow_exception(error);

  validate_database(db);
  std::filesystem::create_directories(out_dir);
  save_descriptor_file(out_dir / "descriptors.lprd", database_to_file(db));

  ExtractReport report;
  report.scan_count = m;
  double sum = 0.0;
  for (const double v : elapsed_ms) sum += v;
  report.mean_ms = sum / m;
  double var = 0.0;
  for (const double v : elapsed_ms) {
    var += (v - report.mean_ms) * (v - report.mean_ms);
  }
  report.stddev_ms = std::sqrt(var / m);
  char line[160];
  std::snprintf(line, sizeof(line), "extract: %d scans, %.3f ms/scan (stddev %.3f)",
                report.scan_count, report.mean_ms, report.stddev_ms);
  std::cout << line << "\n";
  return report;
}

EvalResult cmd_evaluate_stream(const std::filesystem::path& db_path,
                               const std::filesystem::path& table_path,
                               const std::filesystem::path& out_dir,
                               int exclusion_radius) {
  const auto db = database_from_file(load_descriptor_file(db_path));
  const auto table = load_overlap_table(table_path.string());
  const auto result = evaluate_loop_closing(db, table, exclusion_radius);

  std::filesystem::create_directories(out_dir);
  save_pr_curve(out_dir / "pr_curve.csv", result);
  save_recall_at(out_dir / "recall_at.csv", result.recall_at);
  char line[160];
  std::snprintf(line, sizeof(line),
                "evaluate: auc %.4f, f1max %.4f, recall@1 %.4f, recall@1%% %.4f",
                result.auc, result.f1max, result.recall_at.at(1),
                result.recall_at_one_percent);
  std::cout << line << "\n";
  return result;
}

std::map<int, double> cmd_evaluate_place(const std::filesystem::path& db_path,
                                         const std::filesystem::path& queries_path,
                                         const std::filesystem::path& table_path,
                                         const std::filesystem::path& out_dir,
                                         bool emit_svg) {
  const auto db = database_from_file(load_descriptor_file(db_path));
  const auto queries = database_from_file(load_descriptor_file(queries_path));
  const auto table = load_overlap_table(table_path.string());
  const auto recall = evaluate_place_recognition(db, queries, table);

  std::filesystem::create_directories(out_dir);
  save_recall_at(out_dir / "recall_at.csv", recall);
  if (emit_svg) write_recall_svg(out_dir / "recall_at.svg", recall);
  char line[160];
  std::snprintf(line, sizeof(line), "evaluate: recall@1 %.4f, recall@5 %.4f, recall@25 %.4f",
                recall.at(1), recall.at(5), recall.at(25));
  std::cout << line << "\n";
  return recall;
}

int run_command(const std::function<void()>& body) {
  try {
    body();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

std::vector<YawSweepPoint> cmd_sweep_yaw(const std::filesystem::path& checkpoint,
                                         const std::optional<RunConfig>& cfg,
                                         const std::filesystem::path& db_path,
                                         const std::filesystem::path& data_dir,
                                         int start, int count,
                                         const std::filesystem::path& table_path,
                                         const std::filesystem::path& out_dir) {
  const auto [loaded, pc] = load_checkpoint_with_projection(checkpoint, cfg, "sweep-yaw");
  const auto db = database_from_file(load_descriptor_file(db_path));
  const auto scans = load_scan_dir(data_dir);
  const int m = slice_count("sweep-yaw", static_cast<int>(scans.size()), start, count);
  std::vector<PointCloud> clouds(m);
  std::vector<int> ids(m);
  for (int k = 0; k < m; ++k) {
    clouds[k] = scans[start + k].cloud;
    ids[k] = start + k;
  }
  const auto table = load_overlap_table(table_path.string());
  const auto sweep = yaw_sweep_eval(loaded.first, loaded.second, pc, db, clouds, ids, table);

  std::filesystem::create_directories(out_dir);
  save_yaw_sweep(out_dir / "yaw_sweep.csv", sweep);
  double lo = 1.0, hi = 0.0;
  for (const auto& point : sweep) {
    lo = std::min(lo, point.recall_at_1);
    hi = std::max(hi, point.recall_at_1);
  }
  char line[160];
  std::snprintf(line, sizeof(line),
                "sweep-yaw: recall@1 in [%.4f, %.4f] over %zu angles", lo, hi, sweep.size());
  std::cout << line << "\n";
  return sweep;
}

}  // namespace lpr
