#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "acmt/diff/adam.hpp"
#include "acmt/diff/checkpoint.hpp"
#include "acmt/error.hpp"
#include "acmt/geometry.hpp"
#include "acmt/losses.hpp"
#include "acmt/mesh.hpp"
#include "acmt/mesh_io.hpp"
#include "acmt/network.hpp"
#include "acmt/rng.hpp"
#include "acmt/synthdata.hpp"

namespace acmt::train {

namespace fs = std::filesystem;
using diff::AdamState;
using diff::ParamStore;
using diff::Tape;
using diff::Var;
using net::Variant;

inline constexpr std::size_t kMeshInterpNeighbors = 3;

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch = 2;
  double lr = 1e-3;
  double lr_decay = 0.1;
  double decay_fraction = 0.6;  // lr drops once, at this fraction of the epochs
  loss::LossWeights weights;
  std::string preset = "toy";
  std::size_t n_points = 512;
  Variant variant = Variant::acmt;
  std::uint64_t seed = 0;
  std::size_t fold = 0;

  void validate() const {
    require(batch >= 1, ErrorCategory::usage, "batch size must be at least 1");
    require(lr > 0.0 && lr_decay > 0.0 && std::isfinite(lr * lr_decay), ErrorCategory::usage,
            "learning rates must be positive");
    require(decay_fraction >= 0.0 && decay_fraction <= 1.0, ErrorCategory::usage, "decay fraction must lie in [0, 1]");
    require(weights.alpha >= 0.0 && weights.beta >= 0.0, ErrorCategory::usage, "loss weights must be non-negative");
  }

  std::size_t decay_epoch() const {
    return static_cast<std::size_t>(std::floor(decay_fraction * static_cast<double>(epochs)));
  }

  double lr_at(std::size_t epoch) const { return epoch >= decay_epoch() ? lr * lr_decay : lr; }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch", batch},
            {"lr", lr},
            {"lr_decay", lr_decay},
            {"decay_fraction", decay_fraction},
            {"alpha", weights.alpha},
            {"beta", weights.beta},
            {"preset", preset},
            {"n_points", n_points},
            {"variant", net::variant_name(variant)},
            {"seed", seed},
            {"fold", fold}};
  }
};

// ---------------------------------------------------------------------------
// Case preparation

/// One case reduced to the model's point count and mapped to the unit ball.
struct PreparedCase {
  std::string id;
  net::CaseInputs inputs;
  loss::LossTarget target;
  NormTransform transform;
  PointSet facial_physical;
};

inline PreparedCase prepare_case(const synth::CaseData& c, std::size_t n_points) {
  require(n_points <= c.skin_samples.size() && n_points <= c.bone_samples.size(), ErrorCategory::precondition,
          "case " + c.id + " has fewer samples than the requested " + std::to_string(n_points) + " points");
  const auto fi = farthest_point_sample_canonical(c.skin_samples, n_points);
  const auto bi = farthest_point_sample_canonical(c.bone_samples, n_points);
  PointSet facial = c.skin_samples.subset(fi);
  PointSet bony = c.bone_samples.subset(bi);
  std::vector<Vec3> fd, bd;
  for (auto i : fi) fd.push_back(c.skin_sample_disp[i]);
  for (auto i : bi) bd.push_back(c.bone_sample_disp[i]);
  const DisplacementField facial_disp(std::move(fd), Units::physical);
  const DisplacementField bony_disp(std::move(bd), Units::physical);

  auto n = normalize_pair(facial, bony, bony_disp.applied_to(bony));
  const PointSet facial_post = n.transform.apply(facial_disp.applied_to(facial));
  DisplacementField bony_disp_n = DisplacementField::between(n.bony_pre, n.bony_post);
  loss::LossTarget target = loss::LossTarget::make(n.facial, facial_post);
  return PreparedCase{c.id, net::CaseInputs{std::move(n.facial), std::move(n.bony_pre), std::move(bony_disp_n)},
                      std::move(target), n.transform, std::move(facial)};
}

inline std::vector<PreparedCase> prepare_cases(const fs::path& dataset, const std::vector<std::string>& ids,
                                               std::size_t n_points, std::size_t jobs = 1) {
  std::vector<std::optional<PreparedCase>> slots(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      try {
        slots[i] = prepare_case(synth::load_case(dataset / ids[i]), n_points);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<PreparedCase> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLoss {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double shape = 0.0;
  double density = 0.0;
  double lpt = 0.0;
};

struct LossTerms {
  double total = 0.0, shape = 0.0, density = 0.0, lpt = 0.0;
};

/// Forward + hybrid loss on one case; with `backward_scale` > 0 the scaled loss is
/// back-propagated into the parameter gradients.
inline LossTerms case_loss(const net::ModelConfig& model, ParamStore& params, const PreparedCase& c,
                           const loss::LossWeights& weights, double backward_scale) {
  Tape tape(backward_scale > 0.0);
  const auto out = net::forward(tape, model, params, c.inputs);
  const auto h = loss::hybrid_loss(out.predicted, out.movement, c.target, weights);
  LossTerms t{h.total.value()[0], h.shape.value()[0], h.density.value()[0], h.lpt.value()[0]};
  if (backward_scale > 0.0 && std::isfinite(t.total)) tape.backward(diff::scale(h.total, backward_scale));
  return t;
}

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Mini-batch Adam over `cases`. Gradients are averaged over each batch; the case order is
/// reshuffled every epoch from the seed.
inline std::vector<EpochLoss> fit(const TrainConfig& cfg, const net::ModelConfig& model, ParamStore& params,
                                  AdamState& adam, const std::vector<PreparedCase>& cases,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  require(!cases.empty(), ErrorCategory::precondition, "no training cases");
  std::vector<EpochLoss> curve;
  std::vector<std::size_t> order(cases.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 1000 + epoch));
    rng.shuffle(order.begin(), order.end());
    const double lr = cfg.lr_at(epoch);
    EpochLoss e{epoch, lr, 0, 0, 0, 0};
    std::size_t batch_id = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch, ++batch_id) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      params.zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const auto& c = cases[order[k]];
        const std::string where =
            "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_id) + " (case " + c.id + ")";
        LossTerms t;
        try {
          t = case_loss(model, params, c, cfg.weights, 1.0 / static_cast<double>(end - b));
        } catch (const Error& e) {
          if (e.category() != ErrorCategory::numeric) throw;
          throw Error(ErrorCategory::numeric, std::string(e.what()) + " at " + where);
        }
        if (!std::isfinite(t.total)) throw Error(ErrorCategory::numeric, "non-finite loss at " + where);
        e.total += t.total;
        e.shape += t.shape;
        e.density += t.density;
        e.lpt += t.lpt;
      }
      diff::adam_step(params, adam, lr);
    }
    const double n = static_cast<double>(cases.size());
    e.total /= n;
    e.shape /= n;
    e.density /= n;
    e.lpt /= n;
    curve.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return curve;
}

/// Git blob hash (SHA-1 over "blob <size>\0" + content), as hex.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error(ErrorCategory::io, "SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string manifest_hash(const fs::path& dataset) {
  return git_blob_sha1(io::read_text_file(dataset / "manifest.json"));
}

inline std::string checkpoint_header(const net::ModelConfig& model, const TrainConfig& cfg, const std::string& data_hash) {
  return nlohmann::json{{"model", model.to_json()}, {"train", cfg.to_json()}, {"manifest_sha1", data_hash}}.dump();
}

inline std::string loss_csv(const std::vector<EpochLoss>& curve) {
  std::string s = "epoch,lr,total,shape,density,lpt\n";
  for (const auto& e : curve)
    s += std::to_string(e.epoch) + "," + io::format_double(e.lr) + "," + io::format_double(e.total) + "," +
         io::format_double(e.shape) + "," + io::format_double(e.density) + "," + io::format_double(e.lpt) + "\n";
  return s;
}

struct TrainResult {
  net::ModelConfig model;
  ParamStore params;
  std::vector<EpochLoss> curve;
};

/// Trains on every fold except cfg.fold. With a non-empty out_dir writes checkpoint.ckpt,
/// loss.csv and run.json there.
inline TrainResult train(const TrainConfig& cfg, const fs::path& dataset, const fs::path& out_dir,
                         const EpochCallback& on_epoch = {}, std::size_t jobs = 1) {
  cfg.validate();
  const auto manifest = synth::load_manifest(dataset);
  const auto ids = manifest.train_cases(cfg.fold);
  require(!ids.empty(), ErrorCategory::precondition, "fold " + std::to_string(cfg.fold) + " leaves no training cases");
  const auto model = net::ModelConfig::make(cfg.preset, cfg.n_points, cfg.variant, cfg.seed);
  const auto cases = prepare_cases(dataset, ids, cfg.n_points, jobs);

  TrainResult r{model, net::init_params(model), {}};
  AdamState adam = AdamState::for_params(r.params);
  r.curve = fit(cfg, model, r.params, adam, cases, on_epoch);

  if (!out_dir.empty()) {
    const std::string hash = manifest_hash(dataset);
    fs::create_directories(out_dir);
    diff::save_checkpoint(out_dir / "checkpoint.ckpt", checkpoint_header(model, cfg, hash), r.params, &adam);
    io::write_text_file(out_dir / "loss.csv", loss_csv(r.curve));
    nlohmann::json run{{"command", "train"},
                       {"config", cfg.to_json()},
                       {"model", model.to_json()},
                       {"seed", cfg.seed},
                       {"dataset", dataset.string()},
                       {"manifest_sha1", hash},
                       {"train_cases", ids}};
    io::write_text_file(out_dir / "run.json", run.dump(2) + "\n");
  }
  return r;
}

struct LoadedModel {
  net::ModelConfig model;
  ParamStore params;
};

inline LoadedModel load_model(const fs::path& checkpoint) {
  auto ck = diff::load_checkpoint(checkpoint);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(ck.header);
  } catch (const nlohmann::json::exception& e) {
    throw io::io_error(checkpoint, std::string("checkpoint header is not JSON: ") + e.what());
  }
  require(header.contains("model"), ErrorCategory::mismatch, "checkpoint header has no model description");
  LoadedModel m{net::ModelConfig::from_json(header["model"]), std::move(ck.params)};
  net::check_params(m.model, m.params);
  return m;
}

// ---------------------------------------------------------------------------
// Simulation

struct Simulation {
  TriMesh mesh;                // predicted post-operative skin
  DisplacementField movement;  // predicted movement at the sampled facial points (mm)
  double seconds = 0.0;        // prepare + forward + interpolation
};

inline Simulation simulate(const net::ModelConfig& model, ParamStore& params, const synth::CaseData& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedCase p = prepare_case(c, model.n_facial);
  Tape tape(false);
  const auto out = net::forward(tape, model, params, p.inputs);
  const auto& mv = out.movement.value();
  std::vector<Vec3> v(mv.rows());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = {mv(i, 0), mv(i, 1), mv(i, 2)};
  DisplacementField movement = denormalize_displacement(DisplacementField(std::move(v), Units::normalized), p.transform);
  const auto vd = idw_interpolate(p.facial_physical, movement, c.skin_mesh.vertex_set(), kMeshInterpNeighbors);
  std::vector<Vec3> verts(c.skin_mesh.vertex_count());
  for (std::size_t i = 0; i < verts.size(); ++i) verts[i] = c.skin_mesh.vertices()[i] + vd[i];
  Simulation s{c.skin_mesh.with_vertices(std::move(verts)), std::move(movement), 0.0};
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Directional deviation: every predicted vertex to the nearest point of the ground-truth surface.
struct CaseMetrics {
  std::string id;
  std::array<double, synth::kRegionCount> region{};  // area-weighted mean error per region (mm)
  double entire = 0.0;                                // area-weighted mean over all vertices (mm)
  double seconds = 0.0;
  std::vector<double> vertex_error;
};

inline CaseMetrics evaluate(const TriMesh& pred, const TriMesh& gt, const std::vector<std::uint32_t>& region_labels) {
  require(region_labels.size() == pred.vertex_count(), ErrorCategory::mismatch,
          "region labels (" + std::to_string(region_labels.size()) + ") do not match vertex count (" +
              std::to_string(pred.vertex_count()) + ")");
  require(!gt.faces().empty(), ErrorCategory::precondition, "ground-truth mesh has no faces");
  const auto area = vertex_areas(gt.vertex_count() == pred.vertex_count() ? gt : pred);
  CaseMetrics m;
  m.vertex_error.resize(pred.vertex_count());
  std::array<double, synth::kRegionCount> num{}, den{};
  double all_num = 0.0, all_den = 0.0;
  for (std::size_t i = 0; i < pred.vertex_count(); ++i) {
    require(region_labels[i] < synth::kRegionCount, ErrorCategory::precondition, "region label out of range");
    const double e = point_mesh_distance(pred.vertices()[i], gt);
    m.vertex_error[i] = e;
    num[region_labels[i]] += area[i] * e;
    den[region_labels[i]] += area[i];
    all_num += area[i] * e;
    all_den += area[i];
  }
  for (std::size_t r = 0; r < synth::kRegionCount; ++r) m.region[r] = den[r] > 0.0 ? num[r] / den[r] : 0.0;
  m.entire = all_den > 0.0 ? all_num / all_den : 0.0;
  return m;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return {mean, std::sqrt(v / static_cast<double>(xs.size()))};
}

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::array<MeanStd, synth::kRegionCount> region{};
  MeanStd entire;
  MeanStd seconds;

  static MetricsReport aggregate(std::vector<CaseMetrics> cases) {
    MetricsReport r;
    r.cases = std::move(cases);
    for (std::size_t k = 0; k < synth::kRegionCount; ++k) {
      std::vector<double> xs;
      for (const auto& c : r.cases) xs.push_back(c.region[k]);
      r.region[k] = mean_std(xs);
    }
    std::vector<double> e, t;
    for (const auto& c : r.cases) {
      e.push_back(c.entire);
      t.push_back(c.seconds);
    }
    r.entire = mean_std(e);
    r.seconds = mean_std(t);
    return r;
  }
};

inline const char* kMetricsNote =
    "# deviation error: directional, predicted vertex -> ground-truth surface (point-to-triangle), mm; "
    "regions and entire surface are area-weighted; std is the population std over cases (divisor n)\n";

inline std::string metrics_header() {
  std::string h = "case";
  for (std::size_t r = 0; r < synth::kRegionCount; ++r) h += std::string(",") + synth::region_name(r);
  return h + ",entire\n";
}

/// Per-case rows plus mean and std rows. Timings go to a separate file so this one is
/// reproducible byte for byte.
inline std::string metrics_csv(const MetricsReport& r) {
  std::string s = kMetricsNote + metrics_header();
  for (const auto& c : r.cases) {
    s += c.id;
    for (double x : c.region) s += "," + io::format_double(x);
    s += "," + io::format_double(c.entire) + "\n";
  }
  s += "mean";
  for (const auto& x : r.region) s += "," + io::format_double(x.mean);
  s += "," + io::format_double(r.entire.mean) + "\nstd";
  for (const auto& x : r.region) s += "," + io::format_double(x.std);
  s += "," + io::format_double(r.entire.std) + "\n";
  return s;
}

inline std::string timing_csv(const MetricsReport& r) {
  std::string s = "case,seconds\n";
  for (const auto& c : r.cases) s += c.id + "," + io::format_double(c.seconds) + "\n";
  return s + "mean," + io::format_double(r.seconds.mean) + "\n";
}

/// Error magnitude as blue (0) -> red (>= max_mm) vertex colours plus the raw value.
inline std::vector<io::VertexProperty> error_colors(const std::vector<double>& err, double max_mm) {
  io::VertexProperty e{"error", io::PlyType::float64, err}, r{"red", io::PlyType::uint8, {}},
      g{"green", io::PlyType::uint8, {}}, b{"blue", io::PlyType::uint8, {}};
  for (double x : err) {
    const double t = std::clamp(x / max_mm, 0.0, 1.0);
    r.values.push_back(std::round(255.0 * t));
    g.values.push_back(std::round(255.0 * (1.0 - std::abs(2.0 * t - 1.0))));
    b.values.push_back(std::round(255.0 * (1.0 - t)));
  }
  return {e, r, g, b};
}

/// Simulates and scores every case in `ids`. Parameters are shared read-only across workers.
inline MetricsReport evaluate_cases(const net::ModelConfig& model, ParamStore& params, const fs::path& dataset,
                                    const std::vector<std::string>& ids, std::size_t jobs = 1,
                                    const fs::path& mesh_dir = {}) {
  std::vector<CaseMetrics> out(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      try {
        const auto c = synth::load_case(dataset / ids[i]);
        const auto sim = simulate(model, params, c);
        out[i] = evaluate(sim.mesh, c.gt_skin_mesh(), c.region_labels);
        out[i].id = ids[i];
        out[i].seconds = sim.seconds;
        if (!mesh_dir.empty()) io::write_ply(mesh_dir / (ids[i] + "_error.ply"), sim.mesh, error_colors(out[i].vertex_error, 3.0));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (!mesh_dir.empty()) fs::create_directories(mesh_dir);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return MetricsReport::aggregate(std::move(out));
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRun {
  Variant variant;
  std::uint64_t seed;
  MetricsReport report;
  double final_loss = 0.0;
};

struct AblationResult {
  std::vector<AblationRun> runs;

  /// Mean over seeds of the per-seed mean entire-surface error.
  double entire(Variant v) const {
    double s = 0.0, n = 0.0;
    for (const auto& r : runs)
      if (r.variant == v) {
        s += r.report.entire.mean;
        n += 1.0;
      }
    return n > 0 ? s / n : 0.0;
  }

  double region(Variant v, std::size_t k) const {
    double s = 0.0, n = 0.0;
    for (const auto& r : runs)
      if (r.variant == v) {
        s += r.report.region[k].mean;
        n += 1.0;
      }
    return n > 0 ? s / n : 0.0;
  }

  const AblationRun& run(Variant v, std::uint64_t seed) const {
    for (const auto& r : runs)
      if (r.variant == v && r.seed == seed) return r;
    throw Error(ErrorCategory::precondition, "no ablation run for that variant/seed");
  }
};

inline constexpr std::array<Variant, 3> kAllVariants{Variant::acmt, Variant::closest, Variant::no_corr};

/// Trains and evaluates the three variants for every seed on the same fold. Writes
/// table.csv (variants x regions + entire), detail.csv and run.json into out_dir.
inline AblationResult run_ablation_suite(const fs::path& dataset, const TrainConfig& base,
                                         const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                         std::size_t jobs = 1,
                                         const std::function<void(const std::string&)>& log = {}) {
  base.validate();
  require(!seeds.empty(), ErrorCategory::usage, "ablation needs at least one seed");
  const auto manifest = synth::load_manifest(dataset);
  const auto train_ids = manifest.train_cases(base.fold);
  const auto test_ids = manifest.test_cases(base.fold);
  const auto train_cases = prepare_cases(dataset, train_ids, base.n_points, jobs);

  struct Job {
    Variant v;
    std::uint64_t seed;
  };
  std::vector<Job> plan;
  for (auto v : kAllVariants)
    for (auto s : seeds) plan.push_back({v, s});

  AblationResult result;
  result.runs.resize(plan.size());
  std::vector<std::exception_ptr> errors(plan.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < plan.size(); i = next++) {
      try {
        TrainConfig cfg = base;
        cfg.variant = plan[i].v;
        cfg.seed = plan[i].seed;
        const auto model = net::ModelConfig::make(cfg.preset, cfg.n_points, cfg.variant, cfg.seed);
        ParamStore params = net::init_params(model);
        AdamState adam = AdamState::for_params(params);
        const auto t0 = std::chrono::steady_clock::now();
        const auto curve = fit(cfg, model, params, adam, train_cases);
        const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        auto report = evaluate_cases(model, params, dataset, test_ids, 1);
        if (log) {
          char buf[256];
          std::snprintf(buf, sizeof buf, "%-8s seed %llu  loss %.5f  entire %.4f mm  (train %.0f s)",
                        net::variant_name(cfg.variant).c_str(), static_cast<unsigned long long>(cfg.seed),
                        curve.back().total, report.entire.mean, train_s);
          log(buf);
        }
        result.runs[i] = AblationRun{cfg.variant, cfg.seed, std::move(report), curve.back().total};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::string table = kMetricsNote;
    table += "# mean over seeds of the mean over held-out cases\nvariant";
    for (std::size_t r = 0; r < synth::kRegionCount; ++r) table += std::string(",") + synth::region_name(r);
    table += ",entire\n";
    for (auto v : kAllVariants) {
      table += net::variant_name(v);
      for (std::size_t r = 0; r < synth::kRegionCount; ++r) table += "," + io::format_double(result.region(v, r));
      table += "," + io::format_double(result.entire(v)) + "\n";
    }
    io::write_text_file(out_dir / "table.csv", table);

    std::string detail = std::string(kMetricsNote) + "variant,seed," + metrics_header();
    for (const auto& run : result.runs)
      for (const auto& c : run.report.cases) {
        detail += net::variant_name(run.variant) + "," + std::to_string(run.seed) + "," + c.id;
        for (double x : c.region) detail += "," + io::format_double(x);
        detail += "," + io::format_double(c.entire) + "\n";
      }
    io::write_text_file(out_dir / "detail.csv", detail);

    nlohmann::json run{{"command", "ablate"},
                       {"config", base.to_json()},
                       {"seeds", seeds},
                       {"dataset", dataset.string()},
                       {"manifest_sha1", manifest_hash(dataset)},
                       {"train_cases", train_ids},
                       {"test_cases", test_ids}};
    io::write_text_file(out_dir / "run.json", run.dump(2) + "\n");
  }
  return result;
}

}  // namespace acmt::train
