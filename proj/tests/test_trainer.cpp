#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "acmt/trainer.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace acmt;
using namespace acmt::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto d = testing_support::scratch_root("train") / name;
  fs::remove_all(d);
  return d;
}

class TinyData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("dataset"));
    synth::GenParams p;
    p.seed = 17;
    p.subdivisions = 2;
    p.samples = 64;
    synth::build_dataset(*dir_, 4, 2, p, 2);
  }
  static void TearDownTestSuite() { delete dir_; }

  static TrainConfig config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.n_points = 64;
    c.seed = 3;
    return c;
  }

  static fs::path* dir_;
};
fs::path* TinyData::dir_ = nullptr;

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(TrainConfig, LearningRateDropsOnceAtSixtyPercent) {
  TrainConfig c;
  c.epochs = 10;
  EXPECT_EQ(c.decay_epoch(), 6u);
  EXPECT_DOUBLE_EQ(c.lr_at(5), 1e-3);
  EXPECT_DOUBLE_EQ(c.lr_at(6), 1e-4);
  c.batch = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Sha1, GitBlobHashKnownValues) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(MeanStd, PopulationDivisor) {
  const auto m = mean_std({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
}

TEST(Evaluate, IdenticalMeshesScoreZero) {
  const auto m = synth::icosphere(2);
  std::vector<std::uint32_t> reg;
  for (const auto& v : m.vertices()) reg.push_back(synth::region_of(v));
  const auto e = evaluate(m, m, reg);
  EXPECT_NEAR(e.entire, 0.0, 1e-15);
  for (double r : e.region) EXPECT_NEAR(r, 0.0, 1e-15);
}

TEST(Evaluate, PlaneOffsetByOneMillimetre) {
  // 5x5 grid, lifted by 1 mm.
  std::vector<Vec3> v, w;
  std::vector<Face> f;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      v.push_back({10.0 * i, 10.0 * j, 0});
      w.push_back({10.0 * i, 10.0 * j, 1.0});
    }
  for (std::uint32_t i = 0; i < 4; ++i)
    for (std::uint32_t j = 0; j < 4; ++j) {
      const std::uint32_t a = i * 5 + j;
      f.push_back({a, a + 5, a + 6});
      f.push_back({a, a + 6, a + 1});
    }
  std::vector<std::uint32_t> reg(25);
  for (std::size_t i = 0; i < 25; ++i) reg[i] = static_cast<std::uint32_t>(i % 6);
  const auto e = evaluate(TriMesh(w, f), TriMesh(v, f), reg);
  EXPECT_NEAR(e.entire, 1.0, 1e-14);
  for (double r : e.region) EXPECT_NEAR(r, 1.0, 1e-14);
  EXPECT_THROW(evaluate(TriMesh(w, f), TriMesh(v, f), std::vector<std::uint32_t>(3, 0)), Error);
}

TEST(Evaluate, MatchesExhaustiveAreaWeightedOracle) {
  const auto gt = synth::icosphere(2);
  Rng rng(5);
  std::vector<Vec3> pv;
  for (const auto& x : gt.vertices()) pv.push_back(x + 0.05 * Vec3{rng.normal(), rng.normal(), rng.normal()});
  const TriMesh pred = gt.with_vertices(pv);
  std::vector<std::uint32_t> reg;
  for (const auto& v : gt.vertices()) reg.push_back(synth::region_of(v));
  const auto e = evaluate(pred, gt, reg);

  std::vector<double> area(gt.vertex_count(), 0.0);
  for (const auto& t : gt.faces()) {
    const auto& a = gt.vertices()[t[0]];
    const auto& b = gt.vertices()[t[1]];
    const auto& c = gt.vertices()[t[2]];
    for (auto i : t) area[i] += norm(cross(b - a, c - a)) / 6.0;
  }
  double num = 0, den = 0;
  std::array<double, 6> rn{}, rd{};
  for (std::size_t i = 0; i < pv.size(); ++i) {
    double d = 1e300;
    for (const auto& t : gt.faces())
      d = std::min(d, oracle::point_triangle_distance(pv[i], gt.vertices()[t[0]], gt.vertices()[t[1]], gt.vertices()[t[2]]));
    EXPECT_NEAR(e.vertex_error[i], d, 1e-12);
    num += area[i] * d;
    den += area[i];
    rn[reg[i]] += area[i] * d;
    rd[reg[i]] += area[i];
  }
  EXPECT_NEAR(e.entire, num / den, 1e-12);
  for (int r = 0; r < 6; ++r) EXPECT_NEAR(e.region[r], rn[r] / rd[r], 1e-12);
}

TEST(Metrics, CsvLayout) {
  CaseMetrics a{"a", {1, 2, 3, 4, 5, 6}, 3.5, 0.1, {}}, b{"b", {3, 2, 1, 0, 1, 2}, 1.5, 0.3, {}};
  const auto r = MetricsReport::aggregate({a, b});
  EXPECT_DOUBLE_EQ(r.entire.mean, 2.5);
  EXPECT_DOUBLE_EQ(r.entire.std, 1.0);
  const auto l = lines(metrics_csv(r));
  ASSERT_EQ(l.size(), 6u);
  EXPECT_EQ(l[0][0], '#');
  EXPECT_EQ(l[1], "case,upper_a,upper_b,upper_c,lower_a,lower_b,lower_c,entire");
  EXPECT_EQ(l[4].substr(0, 5), "mean,");
  EXPECT_EQ(l[5], "std,1,0,1,2,2,2,1");
  EXPECT_EQ(lines(timing_csv(r)).back(), "mean,0.20000000000000001");
}

TEST(Metrics, ErrorColoursClampAndSpan) {
  const auto p = error_colors({0.0, 1.0, 5.0}, 2.0);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[1].values, (std::vector<double>{0, 128, 255}));
  EXPECT_EQ(p[3].values, (std::vector<double>{255, 128, 0}));
}

TEST_F(TinyData, PrepareIsInvariantToRigidTranslationOfTheCase) {
  const auto c = synth::load_case(*dir_ / "case_000");
  auto moved = c;
  std::vector<Vec3> s, b;
  for (const auto& x : c.skin_samples.coords()) s.push_back(x + Vec3{40, -7, 3});
  for (const auto& x : c.bone_samples.coords()) b.push_back(x + Vec3{40, -7, 3});
  moved.skin_samples = PointSet(s, Units::physical);
  moved.bone_samples = PointSet(b, Units::physical);
  const auto p = prepare_case(c, 64), q = prepare_case(moved, 64);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_LT(norm(p.inputs.facial[i] - q.inputs.facial[i]), 1e-12);
    EXPECT_LT(norm(p.inputs.bony_disp[i] - q.inputs.bony_disp[i]), 1e-12);
  }
  EXPECT_THROW(prepare_case(c, 65), Error);
}

TEST_F(TinyData, ZeroEpochsLeavesInitialParameters) {
  auto cfg = config(0);
  const auto out = scratch("run0");
  train::train(cfg, *dir_, out);
  const auto m = load_model(out / "checkpoint.ckpt");
  const auto init = net::init_params(net::ModelConfig::make("toy", 64, Variant::acmt, 3));
  ASSERT_EQ(m.params.size(), init.size());
  for (std::size_t k = 0; k < init.size(); ++k) EXPECT_EQ(m.params.all()[k].value.values(), init.all()[k].value.values());
  EXPECT_EQ(lines(io::read_text_file(out / "loss.csv")).size(), 1u);
}

TEST_F(TinyData, TrainingIsDeterministicAndReducesLoss) {
  auto cfg = config(6);
  cfg.lr = 3e-3;
  const auto a = scratch("run_a"), b = scratch("run_b");
  const auto ra = train::train(cfg, *dir_, a);
  train::train(cfg, *dir_, b, {}, 2);
  for (const char* f : {"checkpoint.ckpt", "loss.csv", "run.json"})
    EXPECT_TRUE(io::read_text_file(a / f) == io::read_text_file(b / f)) << f;
  EXPECT_LT(ra.curve.back().total, ra.curve.front().total);
  EXPECT_DOUBLE_EQ(ra.curve[2].lr, 3e-3);
  EXPECT_DOUBLE_EQ(ra.curve[3].lr, 3e-4);

  const auto ck = diff::load_checkpoint(a / "checkpoint.ckpt");
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->step, 6u);  // 2 training cases, batch 2, 6 epochs
  const auto header = nlohmann::json::parse(ck.header);
  EXPECT_EQ(header["manifest_sha1"], manifest_hash(*dir_));
  EXPECT_EQ(header["train"]["epochs"], 6);
}

TEST_F(TinyData, NonFiniteLossNamesEpochBatchAndCase) {
  auto cfg = config(1);
  const auto model = net::ModelConfig::make("toy", 64, Variant::closest, 0);
  auto params = net::init_params(model);
  params.get("head.bias").value[0] = NAN;
  auto adam = diff::AdamState::for_params(params);
  const auto cases = prepare_cases(*dir_, {"case_000"}, 64);
  try {
    fit(cfg, model, params, adam, cases);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
    const std::string w = e.what();
    EXPECT_NE(w.find("epoch 0"), std::string::npos) << w;
    EXPECT_NE(w.find("batch 0"), std::string::npos) << w;
    EXPECT_NE(w.find("case_000"), std::string::npos) << w;
  }
}

TEST_F(TinyData, SimulateKeepsTopologyAndEvaluatesFold) {
  const auto model = net::ModelConfig::make("toy", 64, Variant::closest, 1);
  auto params = net::init_params(model);
  const auto c = synth::load_case(*dir_ / "case_001");
  const auto s = simulate(model, params, c);
  EXPECT_EQ(s.mesh.faces(), c.skin_mesh.faces());
  EXPECT_EQ(s.movement.size(), 64u);
  EXPECT_EQ(s.movement.units(), Units::physical);
  const auto m = synth::load_manifest(*dir_);
  const auto out = scratch("meshes");
  const auto r1 = evaluate_cases(model, params, *dir_, m.test_cases(0), 1, out);
  const auto r2 = evaluate_cases(model, params, *dir_, m.test_cases(0), 2);
  EXPECT_EQ(metrics_csv(r1), metrics_csv(r2));
  const auto ply = io::read_ply(out / (m.test_cases(0)[0] + "_error.ply"));
  ASSERT_NE(ply.find("error"), nullptr);
  EXPECT_EQ(ply.find("error")->values, r1.cases[0].vertex_error);
}

TEST_F(TinyData, LoadModelRejectsMismatchedHeader) {
  const auto model = net::ModelConfig::make("toy", 64, Variant::acmt, 1);
  auto params = net::init_params(model);
  const auto other = net::ModelConfig::make("toy", 64, Variant::closest, 1);
  TrainConfig cfg = config(0);
  const auto path = scratch("mm") += ".ckpt";
  diff::save_checkpoint(path, checkpoint_header(other, cfg, "x"), params);
  try {
    load_model(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::mismatch);
  }
}

TEST_F(TinyData, AblationWritesTableSchema) {
  auto cfg = config(1);
  const auto out = scratch("abl");
  const auto r = run_ablation_suite(*dir_, cfg, {1, 2}, out, 2);
  EXPECT_EQ(r.runs.size(), 6u);
  const auto t = lines(io::read_text_file(out / "table.csv"));
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t[2], "variant,upper_a,upper_b,upper_c,lower_a,lower_b,lower_c,entire");
  EXPECT_EQ(t[3].substr(0, 5), "acmt,");
  EXPECT_EQ(t[4].substr(0, 8), "closest,");
  EXPECT_EQ(t[5].substr(0, 8), "no_corr,");
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(std::count(t[i].begin(), t[i].end(), ','), 7);
  const double mean = (r.run(Variant::acmt, 1).report.entire.mean + r.run(Variant::acmt, 2).report.entire.mean) / 2;
  EXPECT_NEAR(r.entire(Variant::acmt), mean, 1e-15);
  EXPECT_TRUE(fs::exists(out / "detail.csv"));
  EXPECT_TRUE(fs::exists(out / "run.json"));
}
