#include <doctest.h>

#include <cmath>
#include <sstream>

#include "evgraph/autodiff.hpp"
#include "evgraph/errors.hpp"
#include "evgraph/random.hpp"
#include "support/gradcheck.hpp"

using namespace evg;
using namespace evg::ad;

namespace {

Tensor random_tensor(Rng& rng, Tensor::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

/// Weighted sum with fixed random weights turns any output into a scalar loss.
Var project(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(y.shape());
  for (auto& v : w.data()) v = uniform(rng, -1.0, 1.0);
  return sum(mul(y, y.tape().constant(std::move(w))));
}

constexpr double kOpTolerance = 1e-6;

}  // namespace

TEST_CASE("relu values and derivative") {
  Tape tape;
  auto x = tape.variable(Tensor({2}, {-1.0, 2.0}));
  auto y = relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 2.0);
  tape.backward(sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("matmul with identity") {
  Rng rng(1);
  Tape tape;
  auto a = random_tensor(rng, {3, 4});
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  auto out = matmul(tape.constant(eye), tape.constant(a));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.value()[i] == a[i]);
}

TEST_CASE("simple gradients") {
  Rng rng(2);
  Tape tape;
  auto xv = random_tensor(rng, {5});
  auto yv = random_tensor(rng, {5});
  auto x = tape.variable(xv);
  auto y = tape.variable(yv);
  tape.backward(sum(mul(x, y)));
  for (int i = 0; i < 5; ++i) {
    CHECK(x.grad()[i] == yv[i]);
    CHECK(y.grad()[i] == xv[i]);
  }
  Tape t2;
  auto z = t2.variable(xv);
  t2.backward(sum(z));
  for (int i = 0; i < 5; ++i) CHECK(z.grad()[i] == 1.0);
}

TEST_CASE("backward preconditions") {
  Tape tape;
  auto x = tape.variable(Tensor({3}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
  auto l = sum(x);
  tape.backward(l);
  CHECK_THROWS_AS(tape.backward(l), Error);
}

TEST_CASE("shape errors name the op") {
  Tape tape;
  auto a = tape.variable(Tensor({2, 3}));
  auto b = tape.variable(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.variable(Tensor({4}))), ShapeError);
}

TEST_CASE("finite-difference check of every op") {
  Rng rng(3);
  std::vector<std::uint32_t> seg{2, 0, 1, 0, 2, 2};
  std::vector<std::uint32_t> gather{3, 0, 0, 5, 2};
  std::vector<int> labels{1, 0, 3, 2, 1, 1};

  struct Op {
    const char* name;
    std::vector<Tensor::Shape> shapes;
    std::function<Var(std::vector<Var>&)> fn;
  };
  std::vector<Op> ops{
      {"add", {{6, 4}, {6, 4}}, [](auto& v) { return add(v[0], v[1]); }},
      {"add_broadcast", {{6, 4}, {4}}, [](auto& v) { return add(v[0], v[1]); }},
      {"sub", {{6, 4}, {6, 4}}, [](auto& v) { return sub(v[0], v[1]); }},
      {"sub_broadcast", {{3, 2, 4}, {2, 4}}, [](auto& v) { return sub(v[0], v[1]); }},
      {"mul", {{6, 4}, {6, 4}}, [](auto& v) { return mul(v[0], v[1]); }},
      {"mul_broadcast", {{6, 4}, {4}}, [](auto& v) { return mul(v[0], v[1]); }},
      {"scale", {{6, 4}}, [](auto& v) { return scale(v[0], -2.5); }},
      {"relu", {{6, 4}}, [](auto& v) { return relu(v[0]); }},
      {"matmul", {{6, 4}, {4, 3}}, [](auto& v) { return matmul(v[0], v[1]); }},
      {"sum", {{6, 4}}, [](auto& v) { return sum(v[0]); }},
      {"reshape", {{6, 4}}, [](auto& v) { return reshape(v[0], {3, 8}); }},
      {"concat0", {{2, 4}, {3, 4}}, [](auto& v) { return concat(std::span<const Var>(v.data(), 2), 0); }},
      {"concat1", {{3, 2}, {3, 5}}, [](auto& v) { return concat(std::span<const Var>(v.data(), 2), 1); }},
      {"gather_rows", {{6, 4}}, [&](auto& v) { return gather_rows(v[0], gather); }},
      {"segment_sum", {{6, 4}}, [&](auto& v) { return segment_sum(v[0], seg, 4); }},
      {"segment_mean", {{6, 4}}, [&](auto& v) { return segment_mean(v[0], seg, 4); }},
      {"segment_max", {{6, 4}}, [&](auto& v) { return segment_max(v[0], seg, 4); }},
      {"dropout", {{6, 4}}, [](auto& v) { return dropout(v[0], 0.3, true, 17); }},
      {"softmax_cross_entropy", {{6, 4}}, [&](auto& v) { return softmax_cross_entropy(v[0], labels); }},
  };

  for (const auto& op : ops) {
    CAPTURE(op.name);
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < op.shapes.size(); ++i) params.emplace_back("in" + std::to_string(i), random_tensor(rng, op.shapes[i]));
    std::vector<Parameter*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    auto res = gradcheck::check(ptrs, [&](Tape& tape) {
      std::vector<Var> vars;
      for (auto& p : params) vars.push_back(tape.parameter(p));
      auto y = op.fn(vars);
      return y.value().rank() == 0 ? y : project(y, 99);
    });
    CHECK(res.checked > 0);
    CHECK(res.max_rel < kOpTolerance);
  }
}

TEST_CASE("directional derivative matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    Parameter a("a", random_tensor(rng, {5, 3}));
    Parameter b("b", random_tensor(rng, {3, 4}));
    auto loss = [&](Tape& tape) {
      auto h = relu(matmul(tape.parameter(a), tape.parameter(b)));
      std::vector<std::uint32_t> s{0, 1, 0, 1, 1};
      return project(segment_max(h, s, 2), 5);
    };
    a.zero_grad();
    b.zero_grad();
    {
      Tape tape;
      tape.backward(loss(tape));
    }
    auto da = random_tensor(rng, {5, 3});
    auto db = random_tensor(rng, {3, 4});
    double analytic = 0;
    for (std::size_t i = 0; i < da.size(); ++i) analytic += a.grad[i] * da[i];
    for (std::size_t i = 0; i < db.size(); ++i) analytic += b.grad[i] * db[i];
    auto at = [&](double s) {
      const auto a0 = a.value, b0 = b.value;
      for (std::size_t i = 0; i < da.size(); ++i) a.value[i] += s * da[i];
      for (std::size_t i = 0; i < db.size(); ++i) b.value[i] += s * db[i];
      Tape tape;
      const double v = loss(tape).value().item();
      a.value = a0;
      b.value = b0;
      return v;
    };
    const double h = 1e-6;
    const double numeric = (at(h) - at(-h)) / (2 * h);
    CHECK(gradcheck::rel_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(6);
  Parameter w("w", random_tensor(rng, {4, 3}));
  auto grad_of = [&](double factor) {
    w.zero_grad();
    Tape tape;
    Rng xr(8);
    auto x = tape.constant(random_tensor(xr, {2, 4}));
    tape.backward(scale(project(relu(matmul(x, tape.parameter(w))), 3), factor));
    return w.grad;
  };
  auto g1 = grad_of(1.0);
  auto g3 = grad_of(-3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == doctest::Approx(-3.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("segment reductions") {
  Tape tape;
  auto x = tape.variable(Tensor({4, 1}, {1.0, 5.0, 5.0, -2.0}));
  std::vector<std::uint32_t> seg{0, 0, 0, 2};
  auto mx = segment_max(x, seg, 3);
  CHECK(mx.value()[0] == 5.0);
  CHECK(mx.value()[1] == 0.0);
  CHECK(mx.value()[2] == -2.0);
  CHECK(segment_mean(x, seg, 3).value()[0] == doctest::Approx(11.0 / 3.0));
  tape.backward(sum(mx));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("dropout") {
  Tape tape;
  auto x = tape.variable(Tensor({1000}, 1.0));
  auto eval = dropout(x, 0.5, false, 1);
  for (double v : eval.value().data()) CHECK(v == 1.0);
  auto train = dropout(x, 0.5, true, 1);
  std::size_t kept = 0;
  for (double v : train.value().data()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
  auto again = dropout(x, 0.5, true, 1);
  CHECK(std::equal(again.value().data().begin(), again.value().data().end(), train.value().data().begin()));
}

TEST_CASE("cross-entropy of uniform logits is ln Q") {
  Tape tape;
  auto logits = tape.constant(Tensor({3, 7}, 0.25));
  std::vector<int> labels{0, 3, 6};
  CHECK(softmax_cross_entropy(logits, labels).value().item() == doctest::Approx(std::log(7.0)));
  std::vector<int> bad{0, 7, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), ShapeError);
}

TEST_CASE("tensor dump round trip") {
  Rng rng(12);
  auto t = random_tensor(rng, {2, 3, 4});
  std::stringstream buf;
  dump_tensor(t, buf);
  auto back = load_tensor(buf);
  CHECK(back.shape() == t.shape());
  CHECK(std::equal(back.data().begin(), back.data().end(), t.data().begin()));
}
