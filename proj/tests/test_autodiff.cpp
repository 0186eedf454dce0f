#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "progsg/adamw.hpp"
#include "progsg/checkpoint.hpp"
#include "progsg/ops.hpp"
#include "support/fd.hpp"

using namespace progsg;
using namespace progsg::ad;
using progsg::testing::fd_check;

namespace {

double scalar_of(Tape& t, Value v) { return t.val(v).data[0]; }

Array arr2(std::vector<int64_t> shape, std::vector<double> data) {
  Array a(std::move(shape));
  a.data = std::move(data);
  return a;
}

}  // namespace

TEST_CASE("forward values match hand computation") {
  Tape t;
  SUBCASE("matmul") {
    Value a = t.constant(arr2({2, 2}, {1, 2, 3, 4}));
    Value b = t.constant(arr2({2, 2}, {5, 6, 7, 8}));
    Value c = matmul(a, b);
    CHECK(t.val(c).data == std::vector<double>{19, 22, 43, 50});
    Value cn = matmul_nt(a, b);
    CHECK(t.val(cn).data == std::vector<double>{17, 23, 39, 53});
  }
  SUBCASE("elu") {
    Value x = t.constant(arr2({3}, {-1.0, 0.0, 2.5}));
    Value y = elu(x);
    CHECK(t.val(y).at(0) == doctest::Approx(-0.6321205588285577).epsilon(1e-12));
    CHECK(t.val(y).at(1) == 0.0);
    CHECK(t.val(y).at(2) == 2.5);
  }
  SUBCASE("cross entropy and focal") {
    Value p = t.constant(arr2({1}, {0.5}));
    Array y1 = arr2({1}, {1.0});
    CHECK(scalar_of(t, cross_entropy(p, y1)) ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(scalar_of(t, focal(p, y1, 2.0)) ==
          doctest::Approx(0.17328679513998632).epsilon(1e-12));
    // beta = 0 reduces focal to plain cross entropy.
    Value q = t.constant(arr2({3}, {0.2, 0.5, 0.9}));
    Array y = arr2({3}, {1.0, 0.0, 1.0});
    Value f0 = focal(q, y, 0.0);
    Value ce = cross_entropy(q, y);
    for (int i = 0; i < 3; ++i) CHECK(t.val(f0).at(i) == t.val(ce).at(i));
  }
  SUBCASE("cosine endpoints") {
    Value a = t.constant(arr2({3}, {1, 2, 3}));
    Value b = t.constant(arr2({3}, {-1, -2, -3}));
    CHECK(scalar_of(t, cosine(a, a)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scalar_of(t, cosine(a, b)) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("row-wise cosine matches the scalar op per row") {
    Array ar({3, 4}), br({3, 4});
    Rng rng(41);
    for (double& x : ar.data) x = rng.uniform(-2.0, 2.0);
    for (double& x : br.data) x = rng.uniform(-2.0, 2.0);
    Value a = t.constant(ar);
    Value b = t.constant(br);
    Value rc = rows_cosine(a, b);
    for (int64_t r = 0; r < 3; ++r) {
      Value ra = as_vec(gather_rows(a, {r}));
      Value rb = as_vec(gather_rows(b, {r}));
      CHECK(t.val(rc).at(r) ==
            doctest::Approx(scalar_of(t, cosine(ra, rb))).epsilon(1e-12));
    }
  }
  SUBCASE("squared error of a unit residual") {
    Value a = t.constant(arr2({5}, {1, 0, 0, 0, 0}));
    Value b = t.constant(arr2({5}, {0, 0, 0, 0, 0}));
    CHECK(scalar_of(t, sq_err_sum(a, b)) == 1.0);
    CHECK(scalar_of(t, mse(a, b)) == doctest::Approx(0.2).epsilon(1e-15));
  }
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Tape t;
  Rng rng(11);
  Array raw({5, 7});
  for (double& x : raw.data) x = rng.uniform(-4.0, 4.0);
  Value a = t.constant(raw);
  Value s = softmax(a, 1);
  for (int64_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 7; ++j) sum += t.val(s).at(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  Array shifted = raw;
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 7; ++j) shifted.at(i, j) += 123.5;
  Value s2 = softmax(t.constant(shifted), 1);
  for (size_t i = 0; i < t.val(s).data.size(); ++i)
    CHECK(t.val(s2).data[i] == doctest::Approx(t.val(s).data[i]).epsilon(1e-12));
}

TEST_CASE("simple chain rule matches hand derivatives") {
  // z = x*y + x, so dz/dx = y + 1 and dz/dy = x.
  ParamStore ps;
  Param& x = ps.create("x", {1});
  Param& y = ps.create("y", {1});
  x.value.at(0) = 3.0;
  y.value.at(0) = -2.0;
  Tape t;
  Value z = add(mul(t.leaf(x), t.leaf(y)), t.leaf(x));
  t.backward(z);
  CHECK(scalar_of(t, z) == -3.0);
  CHECK(x.grad.at(0) == -1.0);
  CHECK(y.grad.at(0) == 3.0);
}

TEST_CASE("per-op gradients agree with central differences") {
  SUBCASE("matmul + add + elu + reduce") {
    ParamStore ps;
    Rng rng(3);
    ps.create_xavier("A", {3, 4}, rng);
    ps.create_xavier("B", {4, 2}, rng);
    ps.create_xavier("b", {2}, rng);
    auto loss = [&](bool bp) {
      Tape t;
      Value y = elu(add(matmul(t.leaf(ps.get("A")), t.leaf(ps.get("B"))), t.leaf(ps.get("b"))));
      Value l = reduce_sum(mul(y, y), -1);
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("softmax rows and columns") {
    for (int axis : {0, 1}) {
      ParamStore ps;
      Rng rng(5 + axis);
      ps.create_xavier("X", {4, 3}, rng);
      Array target({4, 3});
      for (double& v : target.data) v = rng.uniform(0.0, 1.0);
      auto loss = [&](bool bp) {
        Tape t;
        Value l = sq_err_sum(softmax(t.leaf(ps.get("X")), axis), t.constant(target));
        if (bp) {
          ps.zero_grad();
          t.backward(l);
        }
        return scalar_of(t, l);
      };
      loss(true);
      auto rep = fd_check(ps, [&] { return loss(false); });
      CHECK(rep.within(1e-4));
    }
  }

  SUBCASE("segment softmax") {
    ParamStore ps;
    Rng rng(9);
    ps.create_xavier("s", {6}, rng);
    std::vector<int64_t> seg = {0, 0, 1, 1, 1, 0};
    Array target({6});
    for (double& v : target.data) v = rng.uniform(0.0, 1.0);
    auto loss = [&](bool bp) {
      Tape t;
      Value l = sq_err_sum(segment_softmax(t.leaf(ps.get("s")), seg, 2), t.constant(target));
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("layer norm") {
    ParamStore ps;
    Rng rng(13);
    ps.create_xavier("X", {3, 5}, rng);
    ps.create_xavier("g", {5}, rng);
    ps.create_xavier("b", {5}, rng);
    Array target({3, 5});
    for (double& v : target.data) v = rng.uniform(-1.0, 1.0);
    auto loss = [&](bool bp) {
      Tape t;
      Value y = layer_norm(t.leaf(ps.get("X")), t.leaf(ps.get("g")), t.leaf(ps.get("b")));
      Value l = sq_err_sum(y, t.constant(target));
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("gather scatter set_rows slice concat") {
    ParamStore ps;
    Rng rng(17);
    ps.create_xavier("T", {5, 4}, rng);
    ps.create_xavier("R", {2, 4}, rng);
    Array target({4, 8});
    for (double& v : target.data) v = rng.uniform(-1.0, 1.0);
    auto loss = [&](bool bp) {
      Tape t;
      Value tab = t.leaf(ps.get("T"));
      Value g = gather_rows(tab, {0, 0, 2, 4});                  // duplicate index
      Value sc = scatter_sum_rows(g, {1, 1, 0, 3}, 4);           // collision
      Value st = set_rows(sc, {0, 2}, t.leaf(ps.get("R")));
      Value wide = concat({slice_cols(st, 0, 2), st, slice_cols(st, 1, 3)}, 1);
      Value l = sq_err_sum(wide, t.constant(target));
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("scale_rows and cosine") {
    ParamStore ps;
    Rng rng(19);
    ps.create_xavier("M", {3, 4}, rng);
    ps.create_xavier("v", {3}, rng);
    ps.create_xavier("u", {12}, rng);
    auto loss = [&](bool bp) {
      Tape t;
      Value m = scale_rows(t.leaf(ps.get("M")), t.leaf(ps.get("v")));
      Value c = cosine(m, t.leaf(ps.get("u")));
      Value l = mul(c, c);
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("rows_cosine") {
    ParamStore ps;
    Rng rng(23);
    ps.create_xavier("A", {4, 5}, rng);
    ps.create_xavier("B", {4, 5}, rng);
    auto loss = [&](bool bp) {
      Tape t;
      Value rc = rows_cosine(t.leaf(ps.get("A")), t.leaf(ps.get("B")));
      Value ones = t.constant(Array::full({4}, 1.0));
      Value l = reduce_mean(sub(ones, rc), -1);
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }

  SUBCASE("cross entropy and focal") {
    for (double beta : {0.0, 2.0}) {
      ParamStore ps;
      Param& p = ps.create("p", {4});
      p.value.data = {0.2, 0.5, 0.7, 0.9};
      Array y({4});
      y.data = {1.0, 0.0, 1.0, 0.0};
      auto loss = [&](bool bp) {
        Tape t;
        Value l = reduce_mean(focal(t.leaf(ps.get("p")), y, beta), -1);
        if (bp) {
          ps.zero_grad();
          t.backward(l);
        }
        return scalar_of(t, l);
      };
      loss(true);
      auto rep = fd_check(ps, [&] { return loss(false); });
      CHECK(rep.within(1e-4));
    }
  }

  SUBCASE("sigmoid dropout mean pooling") {
    ParamStore ps;
    Rng rng(23);
    ps.create_xavier("X", {4, 6}, rng);
    auto loss = [&](bool bp) {
      Tape t;
      Value d = dropout(sigmoid(t.leaf(ps.get("X"))), 0.5, 424242);
      Value l = add(reduce_sum(mul(reduce_mean(d, 0), reduce_mean(d, 0)), -1),
                    reduce_mean(mul(reduce_mean(d, 1), reduce_mean(d, 1)), -1));
      if (bp) {
        ps.zero_grad();
        t.backward(l);
      }
      return scalar_of(t, l);
    };
    loss(true);
    auto rep = fd_check(ps, [&] { return loss(false); });
    CHECK(rep.within(1e-4));
  }
}

TEST_CASE("gradient of an unused parameter stays zero") {
  ParamStore ps;
  Rng rng(29);
  ps.create_xavier("used", {2, 2}, rng);
  ps.create_xavier("unused", {2, 2}, rng);
  Tape t;
  Value l = reduce_sum(t.leaf(ps.get("used")), -1);
  ps.zero_grad();
  t.backward(l);
  for (double g : ps.get("unused").grad.data) CHECK(g == 0.0);
  for (double g : ps.get("used").grad.data) CHECK(g == 1.0);
}

TEST_CASE("adamw single step matches hand computation") {
  ParamStore ps;
  Param& p = ps.create("p", {1});
  p.value.at(0) = 1.0;
  p.grad.at(0) = 1.0;
  AdamW opt(AdamWOptions{.lr = 0.1});
  opt.step(ps);
  // m = 0.1, v = 0.001, mhat = 1, vhat = 1 -> p = 1 - 0.1/(1 + 1e-8)
  CHECK(p.value.at(0) == doctest::Approx(0.9).epsilon(1e-7));

  SUBCASE("zero gradients with weight decay give pure multiplicative decay") {
    ParamStore ps2;
    Param& q = ps2.create("q", {1});
    q.value.at(0) = 2.0;
    AdamW opt2(AdamWOptions{.lr = 0.1, .weight_decay = 0.01});
    opt2.step(ps2);
    CHECK(q.value.at(0) == doctest::Approx(1.998).epsilon(1e-12));
  }
}

TEST_CASE("training trajectories are bit-identical under a fixed seed") {
  auto train = [](uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.create_xavier("W", {3, 4}, rng);
    ps.create_xavier("b", {3}, rng);
    Array x({2, 4});
    Array y({2, 3});
    Rng drng(seed + 1);
    for (double& v : x.data) v = drng.uniform(-1.0, 1.0);
    for (double& v : y.data) v = drng.uniform(-1.0, 1.0);
    AdamW opt(AdamWOptions{.lr = 1e-2});
    for (int step = 0; step < 5; ++step) {
      Tape t;
      Value out = linear(t.constant(x), t.leaf(ps.get("W")), t.leaf(ps.get("b")));
      Value l = sq_err_sum(out, t.constant(y));
      ps.zero_grad();
      t.backward(l);
      opt.step(ps);
    }
    std::vector<double> flat;
    for (const auto& p : ps.all())
      flat.insert(flat.end(), p->value.data.begin(), p->value.data.end());
    return flat;
  };
  CHECK(train(77) == train(77));
  CHECK(train(77) != train(78));
}

TEST_CASE("f32 mode rounds op results through float") {
  Tape t(Precision::f32);
  Value a = t.constant(arr2({2}, {0.1, 0.2}));
  Value b = t.constant(arr2({2}, {0.3, 0.7}));
  Value c = mul(a, b);
  for (double v : t.val(c).data) {
    CHECK(v == static_cast<double>(static_cast<float>(v)));
  }
  CHECK(t.val(a).at(0) == static_cast<double>(0.1f));
}

TEST_CASE("checkpoint round trip is bit-identical") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "progsg_ckpt_test";
  fs::create_directories(dir);
  Rng rng(31);
  ParamStore ps;
  ps.create_xavier("layer.w", {4, 3}, rng);
  ps.create_xavier("layer.b", {4}, rng);
  std::vector<double> orig;
  for (const auto& p : ps.all())
    orig.insert(orig.end(), p->value.data.begin(), p->value.data.end());

  SUBCASE("f64") {
    std::string path = (dir / "w64.bin").string();
    save_weights(ps, path, Precision::f64);
    for (const auto& p : ps.all())
      for (double& v : p->value.data) v = 0.0;
    load_weights(ps, path);
    std::vector<double> back;
    for (const auto& p : ps.all())
      back.insert(back.end(), p->value.data.begin(), p->value.data.end());
    CHECK(back == orig);
  }

  SUBCASE("f32 after store quantization") {
    ps.round_to_f32();
    std::vector<double> quant;
    for (const auto& p : ps.all())
      quant.insert(quant.end(), p->value.data.begin(), p->value.data.end());
    std::string path = (dir / "w32.bin").string();
    save_weights(ps, path, Precision::f32);
    for (const auto& p : ps.all())
      for (double& v : p->value.data) v = 0.0;
    load_weights(ps, path);
    std::vector<double> back;
    for (const auto& p : ps.all())
      back.insert(back.end(), p->value.data.begin(), p->value.data.end());
    CHECK(back == quant);
  }

  SUBCASE("mismatched table errors") {
    std::string path = (dir / "w_err.bin").string();
    save_weights(ps, path, Precision::f64);
    ParamStore other;
    other.create("different", {4, 3});
    CHECK_THROWS(load_weights(other, path));
    ParamStore shaped;
    shaped.create("layer.w", {3, 4});
    shaped.create("layer.b", {4});
    CHECK_THROWS(load_weights(shaped, path));
  }
}

TEST_CASE("xavier init stays inside its bound") {
  Rng rng(37);
  ParamStore ps;
  Param& p = ps.create_xavier("w", {8, 24}, rng);
  double bound = std::sqrt(6.0 / (8 + 24));
  for (double v : p.value.data) {
    CHECK(std::fabs(v) <= bound);
  }
}

TEST_CASE("api misuse throws") {
  Tape t;
  Value a = t.constant(arr2({2, 2}, {1, 2, 3, 4}));
  Value b = t.constant(arr2({3}, {1, 2, 3}));
  CHECK_THROWS(matmul(a, b));
  CHECK_THROWS(mul(a, b));
  CHECK_THROWS(t.backward(a));  // non-scalar loss
  CHECK_THROWS(dropout(a, 1.0, 1));
  ParamStore ps;
  ps.create("x", {1});
  CHECK_THROWS(ps.create("x", {1}));
}
