#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "acmt/diff/adam.hpp"
#include "acmt/diff/checkpoint.hpp"
#include "acmt/diff/gradcheck.hpp"
#include "acmt/diff/tape.hpp"
#include "acmt/gradsuite.hpp"
#include "scratch.hpp"

using namespace acmt;
using namespace acmt::diff;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorCategory category_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return static_cast<ErrorCategory>(-1);
}

fs::path scratch(const std::string& name) {
  return testing_support::scratch_root("diff") / name;
}

}  // namespace

TEST(Tensor, ShapeChecked) {
  EXPECT_EQ(category_of([] { Tensor::matrix(2, 3, {1, 2, 3}); }), ErrorCategory::shape);
  Tensor t(2, 3, 1.5);
  EXPECT_EQ(t.shape_string(), "[2x3]");
  t(1, 2) = 7;
  EXPECT_EQ(t[5], 7);
  Tensor r3({2, 2, 2}, std::vector<double>(8, 0.0));
  EXPECT_EQ(category_of([&] { r3.rows(); }), ErrorCategory::shape);
}

TEST(ParamStore, DuplicateAndMissingNames) {
  ParamStore p;
  p.add("w", Tensor(2, 2));
  EXPECT_EQ(category_of([&] { p.add("w", Tensor(1, 1)); }), ErrorCategory::precondition);
  EXPECT_EQ(category_of([&] { p.get("nope"); }), ErrorCategory::mismatch);
  EXPECT_EQ(p.scalar_count(), 4u);
}

TEST(Tape, MatmulGradientByHand) {
  Tape t;
  Var a = t.variable(Tensor::matrix(1, 2, {1, 2}));
  Var b = t.variable(Tensor::matrix(2, 1, {3, 4}));
  Var y = matmul(a, b);
  EXPECT_EQ(y.value()[0], 11.0);
  t.backward(y);
  EXPECT_EQ(t.grad(a).to_vector(), (std::vector<double>{3, 4}));
  EXPECT_EQ(t.grad(b).to_vector(), (std::vector<double>{1, 2}));
}

TEST(Tape, SharedInputAccumulates) {
  Tape t;
  Var x = t.variable(Tensor::scalar(3.0));
  Var y = sum(mul(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 6.0);
}

TEST(Tape, BackwardRulesAndPreconditions) {
  Tape t;
  Var x = t.variable(Tensor(2, 2, 1.0));
  EXPECT_EQ(category_of([&] { t.grad(x); }), ErrorCategory::precondition);
  EXPECT_EQ(category_of([&] { t.backward(x); }), ErrorCategory::shape);
  Var s = sum(x);
  t.backward(s);
  EXPECT_EQ(category_of([&] { t.backward(s); }), ErrorCategory::precondition);
}

TEST(Tape, ParameterGradientsLandInStore) {
  ParamStore p;
  auto& w = p.add("w", Tensor::matrix(2, 1, {0.5, -1}));
  Tape t;
  Var x = t.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  t.backward(sum(matmul(x, t.parameter(w))));
  EXPECT_EQ(w.grad.to_vector(), (std::vector<double>{9, 12}));
}

TEST(Tape, NoGradTapeRecordsNoBackward) {
  ParamStore p;
  auto& w = p.add("w", Tensor(2, 2, 1.0));
  Tape t(false);
  Var y = sum(relu(matmul(t.constant(Tensor(3, 2, 1.0)), t.parameter(w))));
  EXPECT_EQ(t.op_count(), 0u);
  EXPECT_DOUBLE_EQ(y.value()[0], 12.0);
}

TEST(Tape, ShapeErrorsNameTheOp) {
  Tape t;
  Var a = t.variable(Tensor(2, 3)), b = t.variable(Tensor(2, 3));
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::shape);
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_EQ(category_of([&] { max_reduce(a, std::vector<std::size_t>{0, 1}); }), ErrorCategory::shape);
}

TEST(Tape, MaxReduceGroups) {
  Tape t;
  Var x = t.variable(Tensor::matrix(4, 2, {1, 8, 5, 2, 0, 0, -1, 3}));
  Var m = max_reduce(x, std::vector<std::size_t>{0, 2, 4});
  EXPECT_EQ(m.value().to_vector(), (std::vector<double>{5, 8, 0, 3}));
  t.backward(sum(m));
  EXPECT_EQ(t.grad(x).to_vector(), (std::vector<double>{0, 1, 1, 0, 1, 0, 0, 1}));
}

TEST(BranchLog, ReplayKeepsRecordedPiece) {
  BranchLog log;
  {
    Tape t(false);
    t.set_branch_log(&log);
    log.start_recording();
    relu(t.constant(Tensor::matrix(1, 2, {0.5, -0.5})));
  }
  EXPECT_EQ(log.size(), 2u);
  Tape t(false);
  t.set_branch_log(&log);
  log.start_replay();
  // Signs flipped, but the recorded on/off pattern wins.
  Var y = relu(t.constant(Tensor::matrix(1, 2, {-0.5, 0.5})));
  EXPECT_EQ(y.value().to_vector(), (std::vector<double>{-0.5, 0.0}));
  EXPECT_EQ(category_of([&] { relu(t.constant(Tensor::scalar(1))); }), ErrorCategory::precondition);
}

TEST(GradCheck, AllPrimitivesWithinTolerance) {
  const auto results = gradsuite::check_primitives(20, 1);
  EXPECT_GE(results.size(), 17u);
  for (const auto& r : results) EXPECT_TRUE(r.pass) << r.name << " rel error " << r.max_rel_error;
}

TEST(GradCheck, DetectsAWrongBackwardRule) {
  // A deliberately wrong rule: forward x^2, backward claims 3x.
  auto graph = [](Tape& t, const std::vector<Var>& in) {
    const Tensor& xv = in[0].value();
    Tensor out(xv.shape(), xv.values());
    for (auto& v : out.values()) v *= v;
    Var sq = t.record(std::move(out), {in[0]}, [x = in[0]](Tape& tp, const Tensor& g, const Tensor&) {
      auto& gx = tp.grad_buffer(x.id());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3.0 * x.value()[i] * g[i];
    });
    return sum(sq);
  };
  const auto r = check_input_gradients(graph, {Tensor::matrix(1, 3, {0.3, -0.7, 1.1})});
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-9);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

TEST(Adam, FirstStepMovesByLr) {
  ParamStore p;
  auto& w = p.add("w", Tensor::matrix(1, 3, {1, 1, 1}));
  w.grad = Tensor::matrix(1, 3, {0.2, -5, 0});
  auto s = AdamState::for_params(p);
  adam_step(p, s, 0.01);
  // Bias correction makes the first step lr * sign(g) (up to eps).
  EXPECT_NEAR(w.value[0], 0.99, 1e-9);
  EXPECT_NEAR(w.value[1], 1.01, 1e-9);
  EXPECT_DOUBLE_EQ(w.value[2], 1.0);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  ParamStore p;
  auto& w = p.add("w", Tensor::scalar(2.0));
  auto s = AdamState::for_params(p);
  double x = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 50; ++t) {
    const double g = 2 * x - 1;  // d/dx (x^2 - x)
    w.grad[0] = g;
    adam_step(p, s, 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(w.value[0], x, 1e-13);
  }
}

TEST(Adam, NonFiniteGradientAbortsUntouched) {
  ParamStore p;
  auto& w = p.add("w", Tensor::scalar(2.0));
  auto s = AdamState::for_params(p);
  w.grad[0] = NAN;
  EXPECT_EQ(category_of([&] { adam_step(p, s, 0.1); }), ErrorCategory::numeric);
  EXPECT_EQ(w.value[0], 2.0);
  EXPECT_EQ(s.step, 0u);
}

TEST(Checkpoint, RoundTripBitExactWithAdam) {
  Rng rng(5);
  ParamStore p;
  p.add("a", gradsuite::random_tensor(rng, 3, 4));
  p.add("b", Tensor({2, 1, 3}, std::vector<double>{1e-300, -0.0, 1.0 / 3.0, 1e300, 5, 6}));
  auto s = AdamState::for_params(p);
  s.step = 7;
  s.m[0][2] = 0.25;
  s.v[1][5] = 9.5;
  save_checkpoint(scratch("c.ckpt"), "{\"x\":1}", p, &s);
  const auto ck = load_checkpoint(scratch("c.ckpt"));
  EXPECT_EQ(ck.header, "{\"x\":1}");
  ASSERT_EQ(ck.params.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(ck.params.all()[k].name, p.all()[k].name);
    EXPECT_EQ(ck.params.all()[k].value.shape(), p.all()[k].value.shape());
    EXPECT_EQ(ck.params.all()[k].value.values(), p.all()[k].value.values());
  }
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->step, 7u);
  EXPECT_EQ(ck.adam->m[0][2], 0.25);
  EXPECT_EQ(ck.adam->v[1][5], 9.5);
  EXPECT_EQ(serialize_checkpoint(ck.header, ck.params, &*ck.adam), serialize_checkpoint("{\"x\":1}", p, &s));
}

TEST(Checkpoint, CorruptFilesAreIoErrors) {
  ParamStore p;
  p.add("a", Tensor(2, 2, 1.0));
  const auto bytes = serialize_checkpoint("{}", p, nullptr);
  io::write_text_file(scratch("t.ckpt"), bytes.substr(0, bytes.size() - 3));
  EXPECT_EQ(category_of([] { load_checkpoint(scratch("t.ckpt")); }), ErrorCategory::io);
  io::write_text_file(scratch("m.ckpt"), "NOTACKPT" + bytes.substr(8));
  EXPECT_EQ(category_of([] { load_checkpoint(scratch("m.ckpt")); }), ErrorCategory::io);
  io::write_text_file(scratch("x.ckpt"), bytes + "z");
  EXPECT_EQ(category_of([] { load_checkpoint(scratch("x.ckpt")); }), ErrorCategory::io);
}
