// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--work DIR] [--jobs N]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

#include "acmt/gradsuite.hpp"
#include "acmt/losses.hpp"
#include "acmt/mesh_io.hpp"
#include "acmt/network.hpp"
#include "acmt/synthdata.hpp"
#include "acmt/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace acmt;
using namespace acmt::diff;
using oracle::Mat;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Tensor to_tensor(const Mat& m) {
  Tensor t(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t(i, j) = m[i][j];
  return t;
}

double max_diff(const Mat& a, const Mat& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  }
  return m;
}

Mat random_mat(Rng& rng, std::size_t r, std::size_t c) { return to_mat(gradsuite::random_tensor(rng, r, c)); }

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double prim = 0;
  std::string worst;
  bool ok = true;
  for (const auto& p : gradsuite::check_primitives(20, 1)) {
    if (p.max_rel_error >= prim) prim = p.max_rel_error, worst = p.name;
    ok = ok && p.pass;
  }
  const auto e = gradsuite::check_end_to_end(net::Variant::acmt, 256, 1);
  const double s = seconds_since(t0);
  ok = ok && e.pass && s < 60.0;
  return {ok, "primitives max rel err " + fmt("%.2e", prim) + " (" + worst + "), end-to-end acmt toy/256 " +
                  fmt("%.2e", e.max_rel_error) + ", " + fmt("%.1f s", s)};
}

Verdict oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kTrials = 50;
  Rng rng(20240601);
  std::vector<std::string> failed;
  double worst = 0;
  auto close = [&](double err, const char* name) {
    worst = std::max(worst, err);
    if (!(err <= 1e-9)) failed.push_back(name);
  };
  auto size = [&](std::size_t lo) { return lo + rng.below(128 - lo + 1); };
  auto cloud = [&](std::size_t n) { return PointSet(oracle::random_points(rng, n), Units::normalized); };

  bool fps_ok = true, bq_ok = true, cp_ok = true;
  for (int t = 0; t < kTrials; ++t) {
    const auto p = cloud(size(2));
    const std::size_t k = 1 + rng.below(p.size()), start = rng.below(p.size());
    fps_ok = fps_ok && farthest_point_sample(p, k, start) == oracle::fps(p.coords(), k, start);

    const auto c = cloud(1 + rng.below(32));
    const double r = rng.uniform(0.05, 1.0);
    const std::size_t m = 1 + rng.below(32);
    bq_ok = bq_ok && ball_query(c, p, r, m) == oracle::ball_query(c.coords(), p.coords(), r, m);

    const auto f = cloud(size(1));
    const auto cm = closest_point_matrix(f, p);
    const auto om = oracle::closest_point_matrix(f.coords(), p.coords());
    for (std::size_t i = 0; i < f.size(); ++i)
      for (std::size_t j = 0; j < p.size(); ++j) cp_ok = cp_ok && cm(i, j) == om[i][j];
  }
  if (!fps_ok) failed.push_back("fps");
  if (!bq_ok) failed.push_back("ball_query");
  if (!cp_ok) failed.push_back("closest_point_matrix");

  double chamfer = 0, density = 0, lpt = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto a = cloud(size(9)), b = cloud(size(9));
    chamfer = std::max(chamfer, std::abs(loss::shape_loss(a, b) - oracle::chamfer(a.coords(), b.coords())));
    density = std::max(density, std::abs(loss::density_loss(a, b, 8) - oracle::density(a.coords(), b.coords(), 8)));
    const auto v = DisplacementField(oracle::random_points(rng, a.size(), 0.1), Units::normalized);
    const auto w = DisplacementField(oracle::random_points(rng, a.size(), 0.1), Units::normalized);
    lpt = std::max(lpt, std::abs(loss::lpt_loss(v, w, knn(a, a, 8, true)) -
                                 oracle::lpt(v.vectors(), w.vectors(), a.coords(), 8)));
  }
  close(chamfer, "chamfer");
  close(density, "density");
  close(lpt, "lpt");

  double cpsa = 0, transform = 0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n1 = size(1), n2 = size(1), d = 1 + rng.below(16), e = 1 + rng.below(16), c = 1 + rng.below(16);
    ParamStore p;
    p.add("theta.weight", gradsuite::random_tensor(rng, d, e));
    p.add("theta.bias", gradsuite::random_tensor(rng, 1, e));
    p.add("phi.weight", gradsuite::random_tensor(rng, d, e));
    p.add("phi.bias", gradsuite::random_tensor(rng, 1, e));
    const Mat ff = random_mat(rng, n1, d), fb = random_mat(rng, n2, d), fvb = random_mat(rng, n2, c);
    Tape tape(false);
    const auto corr = net::cpsa_correlation(tape.constant(to_tensor(ff)), tape.constant(to_tensor(fb)), p);
    const auto [f, r] = oracle::cpsa(ff, fb, to_mat(p.get("theta.weight").value), p.get("theta.bias").value.to_vector(),
                                     to_mat(p.get("phi.weight").value), p.get("phi.bias").value.to_vector());
    cpsa = std::max({cpsa, max_diff(to_mat(corr.f.value()), f), max_diff(to_mat(corr.r.value()), r)});
    transform = std::max(transform, max_diff(to_mat(net::transform_movement(corr.f, tape.constant(to_tensor(fvb))).value()),
                                             oracle::transform_movement(f, fvb)));
  }
  close(cpsa, "cpsa_correlation");
  close(transform, "transform_movement");

  double kernel = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto bone = oracle::random_points(rng, size(1), 30.0), skin = oracle::random_points(rng, size(1), 40.0);
    const auto disp = oracle::random_points(rng, bone.size(), 5.0);
    const double h = rng.uniform(8.0, 30.0);
    const auto got = synth::kernel_transfer_oracle(PointSet(bone, Units::physical),
                                                   DisplacementField(disp, Units::physical),
                                                   PointSet(skin, Units::physical), h);
    const auto want = oracle::kernel_transfer(bone, disp, skin, h);
    for (std::size_t i = 0; i < skin.size(); ++i) kernel = std::max(kernel, norm(got[i] - want[i]));
  }
  close(kernel, "kernel_transfer_oracle");

  double tri = 0;
  for (int t = 0; t < kTrials; ++t)
    for (const auto& q : oracle::random_points(rng, size(1), 3.0)) {
      const auto v = oracle::random_points(rng, 3, 2.0);
      const double d = std::sqrt(dist2(q, closest_point_on_triangle(q, v[0], v[1], v[2])));
      tri = std::max(tri, std::abs(d - oracle::point_triangle_distance(q, v[0], v[1], v[2])));
    }
  close(tri, "point_triangle");

  const double s = seconds_since(t0);
  if (s >= 120.0) failed.push_back("runtime");
  std::string detail = std::to_string(kTrials) + " instances each, worst float err " + fmt("%.2e", worst) +
                       ", exact checks " + (fps_ok && bq_ok && cp_ok ? "equal" : "differ") + ", " + fmt("%.1f s", s);
  for (const auto& f : failed) detail += "; FAILED " + f;
  return {failed.empty(), detail};
}

Verdict identities() {
  Rng rng(7);
  double worst = 0;
  // Orthonormal one-hot features, identity embeddings: R = I / N2.
  for (std::size_t n : {4u, 17u, 64u}) {
    Tensor eye(n, n);
    for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
    ParamStore p;
    p.add("theta.weight", eye);
    p.add("theta.bias", Tensor(1, n));
    p.add("phi.weight", eye);
    p.add("phi.bias", Tensor(1, n));
    Tape tape(false);
    const auto corr = net::cpsa_correlation(tape.constant(eye), tape.constant(eye), p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        worst = std::max(worst, std::abs(corr.r.value()(i, j) - (i == j ? 1.0 / static_cast<double>(n) : 0.0)));
  }
  // A row of f equal to N2 e_j selects row j of F_VB; an all-ones row averages F_VB.
  for (int t = 0; t < 20; ++t) {
    const std::size_t n1 = 1 + rng.below(40), n2 = 1 + rng.below(40), c = 1 + rng.below(10);
    const Tensor fvb = gradsuite::random_tensor(rng, n2, c);
    Tensor sel(n1, n2), ones(n1, n2);
    std::vector<std::size_t> pick(n1);
    for (std::size_t i = 0; i < n1; ++i) {
      pick[i] = rng.below(n2);
      sel(i, pick[i]) = static_cast<double>(n2);
      for (std::size_t j = 0; j < n2; ++j) ones(i, j) = 1.0;
    }
    Tape tape(false);
    const Var vb = tape.constant(fvb);
    const Tensor a = net::transform_movement(tape.constant(sel), vb).value();
    const Tensor m = net::transform_movement(tape.constant(ones), vb).value();
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        double mean = 0;
        for (std::size_t j = 0; j < n2; ++j) mean += fvb(j, k);
        mean /= static_cast<double>(n2);
        worst = std::max({worst, std::abs(a(i, k) - fvb(pick[i], k)), std::abs(m(i, k) - mean)});
      }
    // Linear in f and in F_VB.
    const Tensor f1 = gradsuite::random_tensor(rng, n1, n2), f2 = gradsuite::random_tensor(rng, n1, n2);
    const Tensor g2 = gradsuite::random_tensor(rng, n2, c);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    Tensor fmix(n1, n2), gmix(n2, c);
    for (std::size_t i = 0; i < fmix.size(); ++i) fmix[i] = alpha * f1[i] + beta * f2[i];
    for (std::size_t i = 0; i < gmix.size(); ++i) gmix[i] = alpha * fvb[i] + beta * g2[i];
    const Tensor lhs_f = net::transform_movement(tape.constant(fmix), vb).value();
    const Tensor t1 = net::transform_movement(tape.constant(f1), vb).value();
    const Tensor t2 = net::transform_movement(tape.constant(f2), vb).value();
    const Tensor lhs_g = net::transform_movement(tape.constant(f1), tape.constant(gmix)).value();
    const Tensor u2 = net::transform_movement(tape.constant(f1), tape.constant(g2)).value();
    for (std::size_t i = 0; i < lhs_f.size(); ++i)
      worst = std::max({worst, std::abs(lhs_f[i] - (alpha * t1[i] + beta * t2[i])),
                        std::abs(lhs_g[i] - (alpha * t1[i] + beta * u2[i]))});
  }
  return {worst <= 1e-9, "max deviation " + fmt("%.2e", worst)};
}

Verdict bounded() {
  Rng rng(4);
  double largest = 0;
  std::size_t n_values = 0;
  bool ok = true;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto variant = std::array{net::Variant::acmt, net::Variant::no_corr, net::Variant::closest}[draw % 3];
    const auto cfg = net::ModelConfig::make("toy", 32, variant, rng.next_u64());
    auto params = net::init_params(cfg);
    // Initializer draw with a random per-model gain; f64 rounds 2 sigmoid(x) - 1 to +-1 once |x| > ~37.
    const double scale = std::pow(2.0, rng.uniform(-1.0, 1.0));
    for (auto& b : params.all())
      for (auto& w : b.value.values()) w *= scale;
    const auto in = gradsuite::random_case(32, rng);
    Tape tape(false);
    for (double v : net::forward(tape, cfg, params, in).movement.value().values()) {
      ok = ok && v > -1.0 && v < 1.0;
      largest = std::max(largest, std::abs(v));
      ++n_values;
    }
  }
  return {ok, std::to_string(n_values) + " components from 1000 draws, max |v| = " + fmt("%.12f", largest)};
}

synth::CaseData make_case(const fs::path& dir, std::uint64_t seed) {
  synth::GenParams g;
  g.seed = seed;
  synth::write_case(dir, synth::generate_case(g));
  return synth::load_case(dir);
}

Verdict overfit(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = train::prepare_case(make_case(work / "overfit_case", 101), 512);
  const auto model = net::ModelConfig::make("toy", 512, net::Variant::acmt, 1);
  auto params = net::init_params(model);
  auto adam = AdamState::for_params(params);
  const loss::LossWeights weights;
  double first = 0, shape = 0;
  std::size_t step = 0;
  for (; step < 2000; ++step) {
    params.zero_grad();
    const auto t = train::case_loss(model, params, c, weights, 1.0);
    if (step == 0) first = t.shape;
    shape = t.shape;
    if (shape < 1e-3) break;
    diff::adam_step(params, adam, 1e-3);
  }
  const double s = seconds_since(t0);
  return {shape < 1e-3 && s < 300.0, "shape loss " + fmt("%.3e", first) + " -> " + fmt("%.3e", shape) + " after " +
                                         std::to_string(step) + " steps, " + fmt("%.1f s", s)};
}

Verdict ablation(const fs::path& work, std::size_t jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path data = work / "ablation_data";
  synth::GenParams g;
  g.seed = 1;
  synth::build_dataset(data, 40, 5, g, jobs);
  train::TrainConfig cfg;
  cfg.epochs = 100;
  cfg.n_points = 512;
  cfg.fold = 0;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto r = train::run_ablation_suite(data, cfg, seeds, work / "ablation", jobs,
                                           [](const std::string& s) { std::cout << "  " << s << std::endl; });
  const double a = r.entire(net::Variant::acmt), c = r.entire(net::Variant::closest),
               n = r.entire(net::Variant::no_corr);
  bool every_seed = true;
  double worst_gain = 1.0;
  for (auto s : seeds) {
    const double ea = r.run(net::Variant::acmt, s).report.entire.mean;
    const double en = r.run(net::Variant::no_corr, s).report.entire.mean;
    const double gain = 1.0 - ea / en;
    worst_gain = std::min(worst_gain, gain);
    every_seed = every_seed && gain >= 0.15;
  }
  const double hours = seconds_since(t0) / 3600.0;
  const bool ok = a <= c && c < n && every_seed && hours < 4.0;
  return {ok, "entire mm: acmt " + fmt("%.4f", a) + ", closest " + fmt("%.4f", c) + ", no_corr " + fmt("%.4f", n) +
                  "; worst per-seed gain over no_corr " + fmt("%.1f%%", 100.0 * worst_gain) + "; " +
                  fmt("%.2f h", hours)};
}

Verdict determinism(const fs::path& work) {
  const fs::path data = work / "determinism_data";
  synth::GenParams g;
  g.subdivisions = 3;
  g.samples = 256;
  synth::build_dataset(data, 4, 2, g, 1);
  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.n_points = 128;
  cfg.seed = 9;
  train::train(cfg, data, work / "det_a", {}, 1);
  train::train(cfg, data, work / "det_b", {}, 1);
  const bool ckpt = io::read_text_file(work / "det_a/checkpoint.ckpt") == io::read_text_file(work / "det_b/checkpoint.ckpt");

  auto m = train::load_model(work / "det_a/checkpoint.ckpt");
  const auto c = synth::load_case(data / "case_000");
  io::write_mesh(work / "sim_a.ply", train::simulate(m.model, m.params, c).mesh);
  auto m2 = train::load_model(work / "det_b/checkpoint.ckpt");
  io::write_mesh(work / "sim_b.ply", train::simulate(m2.model, m2.params, c).mesh);
  const bool mesh = io::read_text_file(work / "sim_a.ply") == io::read_text_file(work / "sim_b.ply");
  return {ckpt && mesh, std::string("checkpoints ") + (ckpt ? "identical" : "differ") + ", meshes " +
                            (mesh ? "identical" : "differ")};
}

Verdict performance(const fs::path& work) {
  const auto c = make_case(work / "perf_case", 202);
  const auto model = net::ModelConfig::make("full", 4096, net::Variant::acmt, 1);
  auto params = net::init_params(model);
  const auto s = train::simulate(model, params, c);
  return {s.seconds < 10.0, "full preset, 4096 points, " + fmt("%.2f s", s.seconds)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ACMT-Net acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "acmt_acceptance").string();
  std::size_t jobs = 1;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads for the ablation");
  CLI11_PARSE(app, argc, argv);

  std::set<int> pick(only.begin(), only.end());
  if (pick.empty()) pick = {1, 2, 3, 4, 5, 6, 7, 8};
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},
      {"oracle equivalence", oracles},
      {"correspondence identities", identities},
      {"movement bounded in (-1, 1)", bounded},
      {"single-case overfit", [&] { return overfit(work); }},
      {"ablation ordering", [&] { return ablation(work, jobs); }},
      {"determinism", [&] { return determinism(work); }},
      {"simulation time", [&] { return performance(work); }},
  };
  bool all = true;
  for (int k : pick) {
    const auto& [name, fn] = criteria[static_cast<std::size_t>(k - 1)];
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << "C" << k << " " << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << std::endl;
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
