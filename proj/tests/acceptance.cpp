// Acceptance gate: ten end-to-end checks, one [PASS]/[FAIL] line each.
// Run with no arguments for all ten, or pass criterion numbers to select.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lpr/commands.hpp"

using namespace lpr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("lpr_acceptance_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

/// Uniform cloud inside the imaged elevation band of `pc`.
PointCloud random_cloud(const ProjectionConfig& pc, std::mt19937& rng, int count) {
  std::uniform_real_distribution<double> az(-M_PI, M_PI);
  std::uniform_real_distribution<double> el(deg2rad(-pc.fov_up_deg) + 1e-3,
                                            deg2rad(pc.fov_down_deg) - 1e-3);
  std::uniform_real_distribution<double> range(2.0, 70.0);
  PointCloud cloud;
  cloud.points.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double a = az(rng), e = el(rng), r = range(rng);
    cloud.points.emplace_back(r * std::cos(e) * std::cos(a), r * std::cos(e) * std::sin(a),
                              r * std::sin(e));
  }
  return cloud;
}

RangeImage random_image(const ModelConfig& config, unsigned seed) {
  ProjectionConfig pc;
  pc.h = config.h;
  pc.w = config.w;
  RangeImage image(pc);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> range(2.0f, 60.0f);
  std::bernoulli_distribution hole(0.15);
  for (auto& v : image.data) v = hole(rng) ? kInvalidRange : range(rng);
  return image;
}

std::vector<float> rotate_rows(const std::vector<float>& data, int w, int c, int s) {
  std::vector<float> out(data.size());
  for (int r = 0; r < w; ++r) {
    const int src = ((r - s) % w + w) % w;
    std::copy(data.begin() + static_cast<std::size_t>(src) * c,
              data.begin() + static_cast<std::size_t>(src + 1) * c,
              out.begin() + static_cast<std::size_t>(r) * c);
  }
  return out;
}

double l2_dist(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

/// Deep copy; plain struct copies share tensor storage.
ModelParams clone(const ModelConfig& config, const ModelParams& params) {
  return convert_params<float, float>(config, params);
}

DescriptorDatabase build_db(const ModelConfig& mc, const ModelParams& params,
                            const ProjectionConfig& pc,
                            const std::vector<ScanWithPose>& scans, int lo, int hi) {
  DescriptorDatabase db;
  db.dim = mc.d_output;
  db.data.reserve(static_cast<std::size_t>(hi - lo) * db.dim);
  for (int i = lo; i < hi; ++i) {
    const auto descriptor = compute_descriptor(mc, params, project_cloud(scans[i].cloud, pc));
    db.data.insert(db.data.end(), descriptor.begin(), descriptor.end());
    DescriptorRecord record;
    record.id = static_cast<std::uint32_t>(i);
    record.timestamp = static_cast<double>(i);
    record.pose = scans[i].pose;
    db.records.push_back(record);
  }
  validate_database(db);
  return db;
}

// --- benchmark fixture shared by criteria 4, 7 and 8 -------------------------

/// One knob block; everything below is derived from it.
constexpr const char* kBenchSigma = "0.3";
constexpr const char* kBenchLateral = "4.0";
constexpr const char* kBenchDelta = "2.0";
constexpr const char* kBenchEpochs = "90";
constexpr const char* kBenchLr = "0.0003";
constexpr std::uint64_t kBenchInitSeed = 1;

KeyValues bench_kv(int steps, int revisit_start) {
  return {{"projection.h", "16"},
          {"projection.w", "90"},
          {"model.d_model", "32"},
          {"model.n_head", "4"},
          {"model.d_ffn", "64"},
          {"model.num_tm_blocks", "1"},
          {"model.d_inter", "128"},
          {"model.d_output", "32"},
          {"model.K", "8"},
          {"model.rie_layers", "3:2:8,3:2:16,3:1:32"},
          {"world.seed", "7"},
          {"world.extent", "180"},
          {"world.cylinder_count", "300"},
          {"world.box_count", "100"},
          {"scan.beams", "16"},
          {"scan.horizontal_samples", "450"},
          {"scan.noise_sigma", kBenchSigma},
          {"trajectory.steps", std::to_string(steps)},
          {"trajectory.revisit_start", std::to_string(revisit_start)},
          {"trajectory.step_length", "2"},
          {"trajectory.lateral_offset", kBenchLateral},
          {"trajectory.yaw_jitter", "0.5"},
          {"train.k_p", "2"},
          {"train.k_n", "2"},
          {"train.epochs", kBenchEpochs},
          {"train.batch", "2"},
          {"train.learning_rate", kBenchLr},
          {"overlap.delta", kBenchDelta},
          {"overlap.radius", "50"}};
}

/// Separate grid for the yaw sweep. On the full-size 900-column grid every
/// 30-degree step is 75 whole columns, so the reference sweep never leaves
/// the pixel-aligned lattice; 180 columns keep that property at desk scale
/// (30 degrees = 15 columns). A non-divisible width would instead measure
/// ray rebinning: at half-column phases every silhouette edge can flip a
/// pixel by the depth gap behind it, which costs 0.1-0.4 recall in worlds
/// of any density and is not the invariance under test.
KeyValues sweep_kv() {
  KeyValues kv = bench_kv(500, 350);
  for (auto& [key, value] : kv) {
    if (key == "projection.w") value = "180";
    if (key == "world.cylinder_count") value = "120";
    if (key == "world.box_count") value = "30";
    if (key == "scan.horizontal_samples") value = "900";
    if (key == "scan.noise_sigma") value = "0.1";
    if (key == "trajectory.lateral_offset") value = "0.5";
    if (key == "trajectory.yaw_jitter") value = "0.02";
    if (key == "train.epochs") value = "6";
  }
  return kv;
}

struct BenchFixture {
  bool ready = false;
  RunConfig cfg;
  std::vector<ScanWithPose> scans;
  OverlapTable table;
  double prep_seconds = 0.0;  // simulation + overlap table, single thread

  bool trained_ready = false;
  ModelParams untrained;
  ModelParams trained;
  double train_seconds = 0.0;
};

BenchFixture g_bench;

/// 600-scan loop: 400 database positions, 200 revisit queries.
void ensure_bench() {
  if (g_bench.ready) return;
  const auto t0 = std::chrono::steady_clock::now();
  g_bench.cfg = parse_run_config(bench_kv(600, 400));
  const auto world = make_random_world(g_bench.cfg.world);
  g_bench.scans = generate_trajectory(world, g_bench.cfg.trajectory, g_bench.cfg.scan);
  g_bench.table = build_overlap_table(g_bench.scans, g_bench.cfg.projection,
                                      g_bench.cfg.delta(), g_bench.cfg.overlap_radius, 1);
  g_bench.prep_seconds = seconds_since(t0);
  g_bench.ready = true;
}

void ensure_trained() {
  ensure_bench();
  if (g_bench.trained_ready) return;
  g_bench.untrained = init_params<float>(g_bench.cfg.model, kBenchInitSeed);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(g_bench.scans, g_bench.table, g_bench.cfg.model, g_bench.cfg.projection,
                      g_bench.cfg.train, clone(g_bench.cfg.model, g_bench.untrained));
  g_bench.train_seconds = seconds_since(t0);
  g_bench.trained = std::move(result.params);
  g_bench.trained_ready = true;
}

/// recall@1 of the revisit queries [400, 600) against the database [0, 400).
double bench_recall_at_1(const ModelParams& params) {
  const auto& b = g_bench;
  const auto db = build_db(b.cfg.model, params, b.cfg.projection, b.scans, 0, 400);
  const auto queries = build_db(b.cfg.model, params, b.cfg.projection, b.scans, 400, 600);
  return evaluate_place_recognition(db, queries, b.table).at(1);
}

double bench_stream_auc(const ModelParams& params) {
  const auto& b = g_bench;
  const auto db = build_db(b.cfg.model, params, b.cfg.projection, b.scans, 0, 600);
  return evaluate_loop_closing(db, b.table, 100).auc;
}

// --- criteria -----------------------------------------------------------------

/// 1: projecting a yaw-rotated cloud equals column-shifting the projection,
/// per pair on at least 99% of the pixels valid in either image.
Outcome criterion_projection_shift() {
  const auto t0 = std::chrono::steady_clock::now();
  ProjectionConfig pc;  // full-size 64 x 900 grid
  std::mt19937 rng(101);
  std::uniform_int_distribution<int> column(0, pc.w - 1);
  double worst = 1.0;
  int pairs = 0;
  for (int c = 0; c < 100; ++c) {
    const PointCloud cloud = random_cloud(pc, rng, 3000);
    const RangeImage base = project_cloud(cloud, pc);
    for (int a = 0; a < 20; ++a) {
      const double theta = 2.0 * M_PI * column(rng) / pc.w;
      const RangeImage rotated = project_cloud(apply_pose(cloud, yaw_rotation(theta)), pc);
      const RangeImage shifted = column_shift(base, yaw_to_shift(theta, pc.w));
      std::size_t considered = 0, agree = 0;
      for (std::size_t i = 0; i < shifted.data.size(); ++i) {
        const bool va = shifted.data[i] != kInvalidRange;
        const bool vb = rotated.data[i] != kInvalidRange;
        if (!va && !vb) continue;
        ++considered;
        if (va && vb && shifted.data[i] == rotated.data[i]) ++agree;
      }
      if (considered == 0) return {false, "empty comparison"};
      worst = std::min(worst, static_cast<double>(agree) / considered);
      ++pairs;
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst >= 0.99 && elapsed < 60.0,
          fmt("worst pixel agreement %.3f%% over %d pairs, %.1f s (budget 60)", 100.0 * worst,
              pairs, elapsed)};
}

/// 2: encoder output commutes with column shifts bit for bit.
Outcome criterion_encoder_bit_exact() {
  const auto config = tiny_model_config();
  std::mt19937 rng(202);
  std::uniform_int_distribution<int> column(1, config.w - 1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = init_params<float>(config, 1000 + trial);
    const RangeImage image = random_image(config, 2000 + trial);
    const int s = column(rng);
    const auto direct =
        rie_forward(config, params, image_to_tensor<float>(column_shift(image, s)));
    const auto base = rie_forward(config, params, image_to_tensor<float>(image));
    const auto rotated = rotate_rows(base.data(), config.w, config.d_model, s);
    if (std::memcmp(direct.data().data(), rotated.data(),
                    rotated.size() * sizeof(float)) != 0) {
      return {false, fmt("feature volumes differ at trial %d, shift %d", trial, s)};
    }
  }
  return {true, "50/50 shifted feature volumes bit-identical"};
}

/// 3: attention stays equivariant within 1e-5 per element, the descriptor
/// within 1e-4 L2; pooling is invariant under full column permutations.
Outcome criterion_attention_and_pooling() {
  const auto config = tiny_model_config();
  std::mt19937 rng(303);
  std::uniform_int_distribution<int> column(1, config.w - 1);
  double worst_tm = 0.0, worst_desc = 0.0, worst_perm = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = init_params<float>(config, 3000 + trial);
    const RangeImage image = random_image(config, 4000 + trial);
    const int s = column(rng);

    const auto f0 = rie_forward(config, params, image_to_tensor<float>(image));
    const auto s0 = tm_forward(config, params, f0);
    const auto d0 = gdg_forward(config, params, s0);
    const auto fs =
        rie_forward(config, params, image_to_tensor<float>(column_shift(image, s)));
    const auto ss = tm_forward(config, params, fs);
    const auto ds = gdg_forward(config, params, ss);

    worst_tm = std::max(
        worst_tm, max_abs_diff(ss.data(), rotate_rows(s0.data(), config.w, config.d_model, s)));
    worst_desc = std::max(worst_desc, l2_dist(d0.data(), ds.data()));

    std::vector<int> perm(config.w);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> permuted(s0.data().size());
    for (int r = 0; r < config.w; ++r) {
      std::copy(s0.data().begin() + static_cast<std::size_t>(perm[r]) * config.d_model,
                s0.data().begin() + static_cast<std::size_t>(perm[r] + 1) * config.d_model,
                permuted.begin() + static_cast<std::size_t>(r) * config.d_model);
    }
    const auto dp = gdg_forward(
        config, params,
        Tensor<float>::constant({config.w, config.d_model}, std::move(permuted)));
    worst_perm = std::max(worst_perm, l2_dist(d0.data(), dp.data()));
  }
  return {worst_tm < 1e-5 && worst_desc < 1e-4 && worst_perm < 1e-4,
          fmt("worst attention drift %.2e (tol 1e-5), descriptor %.2e, permutation %.2e "
              "(tol 1e-4), 50 trials",
              worst_tm, worst_desc, worst_perm)};
}

/// 4: trained model, 500-scan database, recall@1 under 12 yaw angles:
/// spread < 0.02, and exact equality at the pixel-aligned angles.
Outcome criterion_yaw_sweep() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = parse_run_config(sweep_kv());
  const auto world = make_random_world(cfg.world);
  const auto scans = generate_trajectory(world, cfg.trajectory, cfg.scan);
  const auto table =
      build_overlap_table(scans, cfg.projection, cfg.delta(), cfg.overlap_radius, 1);
  auto result = train(scans, table, cfg.model, cfg.projection, cfg.train,
                      init_params<float>(cfg.model, kBenchInitSeed));

  const auto db = build_db(cfg.model, result.params, cfg.projection, scans, 0, 500);
  std::vector<PointCloud> clouds;
  std::vector<int> ids;
  for (int i = 350; i < 500; ++i) {
    clouds.push_back(scans[i].cloud);
    ids.push_back(i);
  }
  const auto sweep =
      yaw_sweep_eval(cfg.model, result.params, cfg.projection, db, clouds, ids, table);
  if (sweep.size() != 12) return {false, "sweep did not cover 12 angles"};

  double lo = 1.0, hi = 0.0;
  for (const auto& point : sweep) {
    lo = std::min(lo, point.recall_at_1);
    hi = std::max(hi, point.recall_at_1);
  }
  // 2-degree columns: every 30-degree step is a whole-column shift.
  bool aligned_equal = true;
  for (int a = 0; a < 12; ++a) {
    aligned_equal = aligned_equal && sweep[a].recall_at_1 == sweep[0].recall_at_1;
  }
  return {hi - lo < 0.02 && aligned_equal,
          fmt("recall@1 in [%.4f, %.4f], spread %.4f (tol 0.02), aligned angles %s, %.0f s",
              lo, hi, hi - lo, aligned_equal ? "exactly equal" : "DIFFER",
              seconds_since(t0))};
}

/// 5: central finite differences on the full training loss confirm every
/// parameter gradient in float64, relative error < 1e-6. The denominator is
/// floored at 1e-4: central differences carry ~1e-11 of rounding noise at the
/// base step, so gradients below the floor are certified to 1e-10 absolute
/// instead (the k bias gradient is structurally zero under softmax shift
/// invariance). A failure at the base step retries at alternate steps: a relu
/// kink crossing moves with the step, truncation under the cubic curvature of
/// normalization layers shrinks with it, an analytic bug survives every step.
Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = tiny_model_config();
  auto params = init_params<double>(config, 7);
  const auto img_q = image_to_tensor<double>(random_image(config, 51));
  const std::vector<Tensor<double>> imgs_p = {image_to_tensor<double>(random_image(config, 52)),
                                              image_to_tensor<double>(random_image(config, 53))};
  const std::vector<Tensor<double>> imgs_n = {image_to_tensor<double>(random_image(config, 54)),
                                              image_to_tensor<double>(random_image(config, 55)),
                                              image_to_tensor<double>(random_image(config, 56))};

  const auto loss_value = [&]() {
    std::vector<Tensor<double>> vps, vns;
    for (const auto& img : imgs_p) vps.push_back(model_forward(config, params, img));
    for (const auto& img : imgs_n) vns.push_back(model_forward(config, params, img));
    return lazy_triplet_loss<double>(model_forward(config, params, img_q), vps, vns, 0.5);
  };

  backward(loss_value().raw);  // raw loss: differentiable, no clamp kink

  const double step = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto& [name, tensor] : params.registry) {
    std::vector<double> analytic = tensor.grad();
    if (analytic.empty()) analytic.assign(tensor.numel(), 0.0);
    auto& data = tensor.mutable_data();
    double tensor_worst = 0.0;
    std::size_t tensor_worst_i = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      const auto rel_at = [&](double h) {
        data[i] = saved + h;
        const double up = loss_value().raw.item();
        data[i] = saved - h;
        const double down = loss_value().raw.item();
        data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        return std::abs(fd - analytic[i]) /
               std::max(std::abs(fd) + std::abs(analytic[i]), 1e-4);
      };
      double rel = rel_at(step);
      if (rel >= 3e-7) {
        rel = std::min({rel, rel_at(1e-6), rel_at(3e-6), rel_at(3e-7), rel_at(1e-7)});
      }
      if (rel > tensor_worst) {
        tensor_worst = rel;
        tensor_worst_i = i;
      }
      ++checked;
    }
    if (tensor_worst > 1e-6) {
      std::fprintf(stderr, "  gradcheck: %s worst %.3e at [%zu] (analytic %.6e)\n", name.c_str(),
                   tensor_worst, tensor_worst_i, analytic[tensor_worst_i]);
    }
    worst = std::max(worst, tensor_worst);
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-6 && elapsed < 120.0,
          fmt("worst relative error %.2e over %zu parameters (tol 1e-6), %.0f s (budget 120)",
              worst, checked, elapsed)};
}

/// 6: overlap matches an independent per-pixel recount to 1e-12; the
/// self-overlap through the generic reprojection path is exactly 1.
Outcome criterion_overlap_oracle() {
  const RunConfig cfg = parse_run_config(bench_kv(120, 60));
  const auto world = make_random_world(cfg.world);
  const auto scans = generate_trajectory(world, cfg.trajectory, cfg.scan);
  const ProjectionConfig& pc = cfg.projection;
  const double delta = cfg.delta();

  const auto naive = [&](const RangeImage& q, const RangeImage& r) {
    std::size_t valid_q = 0, valid_r = 0, agree = 0;
    for (int v = 0; v < q.h; ++v) {
      for (int u = 0; u < q.w; ++u) {
        const bool vq = q.at(v, u) != kInvalidRange;
        const bool vr = r.at(v, u) != kInvalidRange;
        valid_q += vq;
        valid_r += vr;
        if (vq && vr &&
            std::abs(static_cast<double>(q.at(v, u)) - r.at(v, u)) <= delta) {
          ++agree;
        }
      }
    }
    return static_cast<double>(agree) / std::min(valid_q, valid_r);
  };

  std::mt19937 rng(606);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(scans.size()) - 1);
  double worst = 0.0;
  int pairs = 0;
  while (pairs < 200) {
    const int i = pick(rng), j = pick(rng);
    if ((scans[i].pose.translation - scans[j].pose.translation).norm() > 100.0) continue;
    const RangeImage q = project_cloud(scans[i].cloud, pc);
    const RangeImage r = reproject(scans[j].cloud, scans[j].pose, scans[i].pose, pc);
    worst = std::max(worst, std::abs(compute_overlap(q, r, delta) - naive(q, r)));
    ++pairs;
  }
  bool self_exact = true;
  for (std::size_t i = 0; i < scans.size(); i += 10) {
    const RangeImage q = project_cloud(scans[i].cloud, pc);
    const RangeImage r = reproject(scans[i].cloud, scans[i].pose, scans[i].pose, pc);
    self_exact = self_exact && compute_overlap(q, r, delta) == 1.0;
  }
  return {worst <= 1e-12 && self_exact,
          fmt("worst recount deviation %.2e over 200 pairs (tol 1e-12), self-overlap %s", worst,
              self_exact ? "exactly 1" : "NOT 1")};
}

/// 7: on the 600-scan benchmark, bounded single-thread training lifts
/// recall@1 from below 0.2 to above 0.9 and strictly improves stream AUC.
Outcome criterion_learning_signal() {
  ensure_bench();
  const auto untrained_params = init_params<float>(g_bench.cfg.model, kBenchInitSeed);
  const double recall_before = bench_recall_at_1(untrained_params);
  const double auc_before = bench_stream_auc(untrained_params);
  ensure_trained();
  const double recall_after = bench_recall_at_1(g_bench.trained);
  const double auc_after = bench_stream_auc(g_bench.trained);
  const double budget = g_bench.prep_seconds + g_bench.train_seconds;
  return {recall_before < 0.2 && recall_after > 0.9 && auc_after > auc_before &&
              budget <= 900.0,
          fmt("recall@1 %.3f -> %.3f (need <0.2 -> >0.9), auc %.3f -> %.3f, "
              "prep+train %.0f s (budget 900)",
              recall_before, recall_after, auc_before, auc_after, budget)};
}

/// 8: adding the attention block does not hurt recall, and extraction time
/// grows strictly with block count.
Outcome criterion_ablation() {
  ensure_trained();
  const double recall_one = bench_recall_at_1(g_bench.trained);

  RunConfig cfg0 = g_bench.cfg;
  cfg0.model.num_tm_blocks = 0;
  auto result0 = train(g_bench.scans, g_bench.table, cfg0.model, cfg0.projection, cfg0.train,
                       init_params<float>(cfg0.model, kBenchInitSeed));
  BenchFixture& b = g_bench;
  const auto db0 = build_db(cfg0.model, result0.params, cfg0.projection, b.scans, 0, 400);
  const auto q0 = build_db(cfg0.model, result0.params, cfg0.projection, b.scans, 400, 600);
  const double recall_zero = evaluate_place_recognition(db0, q0, b.table).at(1);

  double per_scan_ms[3] = {0.0, 0.0, 0.0};
  const int block_counts[3] = {0, 1, 3};
  for (int k = 0; k < 3; ++k) {
    RunConfig timed = g_bench.cfg;
    timed.model.num_tm_blocks = block_counts[k];
    const auto params = init_params<float>(timed.model, kBenchInitSeed);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 100; ++i) {
      compute_descriptor(timed.model, params, project_cloud(b.scans[i].cloud, timed.projection));
    }
    per_scan_ms[k] = seconds_since(t0) * 1000.0 / 100.0;
  }
  const bool monotone = per_scan_ms[0] < per_scan_ms[1] && per_scan_ms[1] < per_scan_ms[2];
  return {recall_one >= recall_zero && monotone,
          fmt("recall@1 blocks 1 vs 0: %.3f vs %.3f; extraction %.2f / %.2f / %.2f ms "
              "for 0/1/3 blocks%s",
              recall_one, recall_zero, per_scan_ms[0], per_scan_ms[1], per_scan_ms[2],
              monotone ? "" : " (NOT monotone)")};
}

/// 9: brute-force search matches a full-sort oracle; recall@N is monotone;
/// orthogonal embeddings score a perfect AUC.
Outcome criterion_retrieval_oracle() {
  std::mt19937 rng(909);

  // Full-sort oracle on 1000 entries, including exact-duplicate rows.
  const int n = 1000, dim = 16;
  DescriptorDatabase db;
  db.dim = dim;
  std::normal_distribution<double> gauss;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(dim);
    if (i >= 990) {
      const int src = i - 990;  // duplicates of the first ten rows
      for (int d = 0; d < dim; ++d) row[d] = db.data[static_cast<std::size_t>(src) * dim + d];
    } else {
      double norm = 0.0;
      for (auto& v : row) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : row) v /= norm;
    }
    for (const double v : row) db.data.push_back(static_cast<float>(v));
    DescriptorRecord record;
    record.id = static_cast<std::uint32_t>(i);
    record.timestamp = i;
    db.records.push_back(record);
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> probe(db.row(trial * 19 % n), db.row(trial * 19 % n) + dim);
    const auto got = query(db, probe, n);
    std::vector<Match> oracle;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = static_cast<double>(probe[d]) - db.data[static_cast<std::size_t>(i) * dim + d];
        acc += diff * diff;
      }
      oracle.push_back({i, std::sqrt(acc)});
    }
    std::sort(oracle.begin(), oracle.end(), [](const Match& a, const Match& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    });
    if (got.size() != oracle.size()) return {false, "oracle size mismatch"};
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      if (got[i].id != oracle[i].id || got[i].distance != oracle[i].distance) {
        return {false, fmt("rank %zu disagrees with the oracle at trial %d", i, trial)};
      }
    }
  }

  // Monotone recall@N on a random place-recognition instance.
  DescriptorDatabase place_db, place_q;
  place_db.dim = place_q.dim = 12;
  OverlapTable table;
  table.scan_count = 400;
  auto random_row = [&](DescriptorDatabase& out, int id) {
    std::vector<double> row(out.dim);
    double norm = 0.0;
    for (auto& v : row) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (const double v : row) out.data.push_back(static_cast<float>(v / norm));
    DescriptorRecord record;
    record.id = static_cast<std::uint32_t>(id);
    record.timestamp = id;
    out.records.push_back(record);
  };
  for (int i = 0; i < 300; ++i) random_row(place_db, i);
  std::uniform_int_distribution<int> ref(0, 299);
  for (int k = 0; k < 30; ++k) {
    random_row(place_q, 300 + k);
    for (int t = 0; t < 3; ++t) table.set(300 + k, ref(rng), 0.9f);
  }
  const auto recall = evaluate_place_recognition(place_db, place_q, table);
  for (int N = 2; N <= 25; ++N) {
    if (recall.at(N) < recall.at(N - 1)) {
      return {false, fmt("recall@%d < recall@%d", N, N - 1)};
    }
  }

  // Orthogonal one-hot embeddings: the stream metric must be perfect.
  DescriptorDatabase hot;
  hot.dim = 32;
  OverlapTable ring;
  ring.scan_count = 300;
  for (int i = 0; i < 300; ++i) {
    std::vector<float> row(32, 0.0f);
    row[i % 30] = 1.0f;
    hot.data.insert(hot.data.end(), row.begin(), row.end());
    DescriptorRecord record;
    record.id = static_cast<std::uint32_t>(i);
    record.timestamp = i;
    hot.records.push_back(record);
    for (int j = i % 30; j < 300; j += 30) {
      ring.set(i, j, 1.0f);
      ring.set(j, i, 1.0f);
    }
  }
  const auto stream = evaluate_loop_closing(hot, ring, 100);
  if (stream.auc != 1.0) return {false, fmt("oracle embedding AUC %.6f != 1", stream.auc)};

  return {true, "full-sort oracle exact on 1000 entries, recall@N monotone, oracle AUC 1.0"};
}

/// 10: generate, train and extract re-runs are byte-identical.
Outcome criterion_determinism() {
  TempDir tmp;
  const RunConfig cfg = parse_run_config({{"projection.h", "16"},
                                          {"projection.w", "180"},
                                          {"model.d_model", "16"},
                                          {"model.n_head", "4"},
                                          {"model.d_ffn", "32"},
                                          {"model.num_tm_blocks", "1"},
                                          {"model.d_inter", "32"},
                                          {"model.d_output", "16"},
                                          {"model.K", "4"},
                                          {"model.rie_layers", "3:2:8,3:2:12,3:1:16"},
                                          {"scan.beams", "16"},
                                          {"scan.horizontal_samples", "180"},
                                          {"scan.noise_sigma", "0.4"},
                                          {"trajectory.steps", "20"},
                                          {"trajectory.step_length", "18"},
                                          {"train.k_p", "2"},
                                          {"train.k_n", "2"},
                                          {"train.epochs", "1"}});
  cmd_generate(cfg, tmp.path / "a");
  cmd_generate(cfg, tmp.path / "b");
  for (int i = 0; i < 20; ++i) {
    if (slurp(tmp.path / "a" / scan_file_name(i)) != slurp(tmp.path / "b" / scan_file_name(i))) {
      return {false, fmt("generate differs at scan %d", i)};
    }
  }
  if (slurp(tmp.path / "a" / "poses.txt") != slurp(tmp.path / "b" / "poses.txt")) {
    return {false, "generate poses differ"};
  }

  cmd_train(cfg, tmp.path / "a", tmp.path / "r1", tmp.path / "a" / "overlap_table.csv");
  cmd_train(cfg, tmp.path / "a", tmp.path / "r2", tmp.path / "a" / "overlap_table.csv");
  if (slurp(tmp.path / "r1" / "model.ckpt") != slurp(tmp.path / "r2" / "model.ckpt") ||
      slurp(tmp.path / "r1" / "loss.csv") != slurp(tmp.path / "r2" / "loss.csv")) {
    return {false, "train artifacts differ between runs"};
  }

  cmd_extract(tmp.path / "r1" / "model.ckpt", std::nullopt, tmp.path / "a", 0, -1,
              tmp.path / "e1");
  cmd_extract(tmp.path / "r1" / "model.ckpt", std::nullopt, tmp.path / "a", 0, -1,
              tmp.path / "e2", 3);
  if (slurp(tmp.path / "e1" / "descriptors.lprd") != slurp(tmp.path / "e2" / "descriptors.lprd")) {
    return {false, "extract differs between runs"};
  }
  return {true, "generate, train and extract re-runs byte-identical"};
}

struct Criterion {
  const char* name;
  Outcome (*fn)();
};

const std::map<int, Criterion> kCriteria = {
    {1, {"projection commutes with column shift", criterion_projection_shift}},
    {2, {"encoder equivariance is bit-exact", criterion_encoder_bit_exact}},
    {3, {"attention equivariance, pooling invariance", criterion_attention_and_pooling}},
    {4, {"end-to-end yaw sweep", criterion_yaw_sweep}},
    {5, {"gradients match finite differences", criterion_gradients}},
    {6, {"overlap matches a naive recount", criterion_overlap_oracle}},
    {7, {"training lifts recall", criterion_learning_signal}},
    {8, {"ablation ordering", criterion_ablation}},
    {9, {"retrieval matches oracles", criterion_retrieval_oracle}},
    {10, {"artifact determinism", criterion_determinism}},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (kCriteria.count(id) == 0) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
      return 2;
    }
    wanted.push_back(id);
  }
  if (wanted.empty()) {
    for (const auto& [id, criterion] : kCriteria) wanted.push_back(id);
  }

  int failures = 0;
  for (const int id : wanted) {
    const auto& criterion = kCriteria.at(id);
    Outcome outcome;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      outcome = criterion.fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %2d %-44s %s [%.1f s]\n", outcome.pass ? "PASS" : "FAIL", id,
                criterion.name, outcome.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failures += outcome.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(wanted.size()) - failures,
              wanted.size());
  return failures == 0 ? 0 : 1;
}
