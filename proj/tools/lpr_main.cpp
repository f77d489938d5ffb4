#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "lpr/commands.hpp"

namespace {

/// Flag wins, then the config's paths.* entry; anything still missing is a
/// usage error, named after both spellings.
std::string resolve_path(const CLI::Option* opt, const std::string& flag_value,
                         const std::string& cfg_value, const char* flag_name,
                         const char* key_name) {
  if (opt->count() > 0) return flag_value;
  if (!cfg_value.empty()) return cfg_value;
  throw std::invalid_argument(std::string("missing --") + flag_name +
                              " (no flag and no " + key_name + " in the config)");
}

std::optional<std::uint64_t> opt_seed(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() > 0) return value;
  return std::nullopt;
}

std::optional<lpr::RunConfig> maybe_config(const CLI::Option* opt,
                                           const std::string& path) {
  if (opt->count() == 0) return std::nullopt;
  return lpr::load_run_config(path);
}

const lpr::RunPaths& paths_of(const std::optional<lpr::RunConfig>& cfg) {
  static const lpr::RunPaths kEmpty{};
  return cfg ? cfg->paths : kEmpty;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR place recognition: simulate, train, extract, evaluate"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, table_path, checkpoint, db_path, queries_path;
  std::uint64_t seed = 0;
  int threads = 1;
  int start = 0;
  int count = -1;
  int radius = 100;
  bool stream = false;
  bool svg = false;

  auto* gen = app.add_subcommand("generate", "Simulate a world and write a scan sequence");
  gen->add_option("--config", config_path, "run config file")->required();
  auto* gen_out = gen->add_option("--out", out_dir, "output directory");
  auto* gen_seed = gen->add_option("--seed", seed, "override world.seed");

  auto* tr = app.add_subcommand("train", "Train a model on a generated sequence");
  tr->add_option("--config", config_path, "run config file")->required();
  auto* tr_data = tr->add_option("--data", data_dir, "directory written by generate");
  auto* tr_out = tr->add_option("--out", out_dir, "output directory");
  auto* tr_table =
      tr->add_option("--table", table_path, "overlap table CSV, built and cached if absent");
  auto* tr_seed = tr->add_option("--seed", seed, "override model.init_seed");
  tr->add_option("--threads", threads, "worker threads for table building");

  auto* ex = app.add_subcommand("extract", "Extract descriptors into a database file");
  auto* ex_ckpt = ex->add_option("--checkpoint", checkpoint, "trained model");
  auto* ex_cfg =
      ex->add_option("--config", config_path, "optional run config, grid must match the checkpoint");
  auto* ex_data = ex->add_option("--data", data_dir, "directory written by generate");
  auto* ex_out = ex->add_option("--out", out_dir, "output directory");
  ex->add_option("--start", start, "first scan index");
  ex->add_option("--count", count, "scan count, -1 means the rest");
  ex->add_option("--threads", threads, "extraction worker threads");

  auto* ev = app.add_subcommand("evaluate", "Score a descriptor database against ground truth");
  auto* ev_cfg = ev->add_option("--config", config_path, "optional run config");
  auto* ev_db = ev->add_option("--db", db_path, "descriptor database");
  auto* ev_queries =
      ev->add_option("--queries", queries_path, "query descriptors (place-recognition mode)");
  ev->add_flag("--stream", stream, "loop-closing stream mode over the database itself");
  auto* ev_table = ev->add_option("--table", table_path, "overlap table CSV");
  auto* ev_out = ev->add_option("--out", out_dir, "output directory");
  auto* ev_radius = ev->add_option("--radius", radius, "stream exclusion window, scan indices");
  ev->add_flag("--svg", svg, "also write a recall@N chart");

  auto* sw = app.add_subcommand("sweep-yaw", "Recall@1 with queries rotated through 12 yaw angles");
  auto* sw_ckpt = sw->add_option("--checkpoint", checkpoint, "trained model");
  auto* sw_cfg =
      sw->add_option("--config", config_path, "optional run config, grid must match the checkpoint");
  auto* sw_db = sw->add_option("--db", db_path, "descriptor database");
  auto* sw_data = sw->add_option("--data", data_dir, "directory written by generate");
  sw->add_option("--start", start, "first query scan index");
  sw->add_option("--count", count, "query count, -1 means the rest");
  auto* sw_table = sw->add_option("--table", table_path, "overlap table CSV");
  auto* sw_out = sw->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  return lpr::run_command([&] {
    if (gen->parsed()) {
      const auto cfg = lpr::load_run_config(config_path);
      const auto out = resolve_path(gen_out, out_dir, cfg.paths.out, "out", "paths.out");
      lpr::cmd_generate(cfg, out, opt_seed(gen_seed, seed));
    } else if (tr->parsed()) {
      const auto cfg = lpr::load_run_config(config_path);
      const auto data = resolve_path(tr_data, data_dir, cfg.paths.data, "data", "paths.data");
      const auto out = resolve_path(tr_out, out_dir, cfg.paths.out, "out", "paths.out");
      std::filesystem::path table;
      if (tr_table->count() > 0) {
        table = table_path;
      } else if (!cfg.paths.table.empty()) {
        table = cfg.paths.table;
      } else {
        table = std::filesystem::path(data) / "overlap_table.csv";
      }
      lpr::cmd_train(cfg, data, out, table, opt_seed(tr_seed, seed), threads);
    } else if (ex->parsed()) {
      const auto cfg = maybe_config(ex_cfg, config_path);
      const auto& paths = paths_of(cfg);
      lpr::cmd_extract(
          resolve_path(ex_ckpt, checkpoint, paths.checkpoint, "checkpoint", "paths.checkpoint"),
          cfg, resolve_path(ex_data, data_dir, paths.data, "data", "paths.data"), start, count,
          resolve_path(ex_out, out_dir, paths.out, "out", "paths.out"), threads);
    } else if (ev->parsed()) {
      const auto cfg = maybe_config(ev_cfg, config_path);
      const auto& paths = paths_of(cfg);
      const auto db = resolve_path(ev_db, db_path, paths.db, "db", "paths.db");
      const auto table = resolve_path(ev_table, table_path, paths.table, "table", "paths.table");
      const auto out = resolve_path(ev_out, out_dir, paths.out, "out", "paths.out");
      const std::string queries = ev_queries->count() > 0 ? queries_path : paths.queries;
      if (stream == !queries.empty()) {
        throw std::invalid_argument("evaluate: pass exactly one of --stream or --queries");
      }
      if (stream) {
        const int window =
            ev_radius->count() > 0 ? radius : (cfg ? cfg->exclusion_radius : radius);
        lpr::cmd_evaluate_stream(db, table, out, window);
      } else {
        lpr::cmd_evaluate_place(db, queries, table, out, svg);
      }
    } else if (sw->parsed()) {
      const auto cfg = maybe_config(sw_cfg, config_path);
      const auto& paths = paths_of(cfg);
      lpr::cmd_sweep_yaw(
          resolve_path(sw_ckpt, checkpoint, paths.checkpoint, "checkpoint", "paths.checkpoint"),
          cfg, resolve_path(sw_db, db_path, paths.db, "db", "paths.db"),
          resolve_path(sw_data, data_dir, paths.data, "data", "paths.data"), start, count,
          resolve_path(sw_table, table_path, paths.table, "table", "paths.table"),
          resolve_path(sw_out, out_dir, paths.out, "out", "paths.out"));
    }
  });
}
