#include "progsg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "progsg/rng.hpp"

namespace progsg::ad {

namespace {

constexpr double kCosEps = 1e-12;
constexpr double kProbEps = 1e-7;

Tape& T(Value v) {
  if (!v.ok() || !v.tape) throw std::invalid_argument("op on empty value");
  return *v.tape;
}

void same_tape(Value a, Value b) {
  if (a.tape != b.tape) throw std::invalid_argument("values from different tapes");
}

[[noreturn]] void shape_error(const char* op, const Array& a) {
  throw std::invalid_argument(std::string(op) + ": bad shape " + a.shape_str());
}

[[noreturn]] void shape_error2(const char* op, const Array& a, const Array& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

}  // namespace

Value matmul(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows()) shape_error2("matmul", A, B);
  int64_t n = A.rows(), k = A.cols(), m = B.cols();
  Array out({n, m});
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = &A.data[static_cast<size_t>(i * k)];
    double* orow = &out.data[static_cast<size_t>(i * m)];
    for (int64_t l = 0; l < k; ++l) {
      double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = &B.data[static_cast<size_t>(l * m)];
      for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  int32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi, n, k, m](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (int64_t i = 0; i < n; ++i) {
      const double* grow = &g.data[static_cast<size_t>(i * m)];
      double* darow = &da.data[static_cast<size_t>(i * k)];
      for (int64_t l = 0; l < k; ++l) {
        const double* brow = &B.data[static_cast<size_t>(l * m)];
        double acc = 0.0;
        for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
        darow[l] += acc;
      }
      const double* arow = &A.data[static_cast<size_t>(i * k)];
      for (int64_t l = 0; l < k; ++l) {
        double av = arow[l];
        if (av == 0.0) continue;
        double* dbrow = &db.data[static_cast<size_t>(l * m)];
        for (int64_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
      }
    }
  });
}

Value matmul_nt(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols()) shape_error2("matmul_nt", A, B);
  int64_t n = A.rows(), k = A.cols(), m = B.rows();
  Array out({n, m});
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = &A.data[static_cast<size_t>(i * k)];
    double* orow = &out.data[static_cast<size_t>(i * m)];
    for (int64_t j = 0; j < m; ++j) {
      const double* brow = &B.data[static_cast<size_t>(j * k)];
      double acc = 0.0;
      for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      orow[j] = acc;
    }
  }
  int32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi, n, k, m](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (int64_t i = 0; i < n; ++i) {
      const double* grow = &g.data[static_cast<size_t>(i * m)];
      double* darow = &da.data[static_cast<size_t>(i * k)];
      const double* arow = &A.data[static_cast<size_t>(i * k)];
      for (int64_t j = 0; j < m; ++j) {
        double gv = grow[j];
        if (gv == 0.0) continue;
        const double* brow = &B.data[static_cast<size_t>(j * k)];
        double* dbrow = &db.data[static_cast<size_t>(j * k)];
        for (int64_t l = 0; l < k; ++l) {
          darow[l] += gv * brow[l];
          dbrow[l] += gv * arow[l];
        }
      }
    }
  });
}

Value add(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  int32_t ai = a.idx, bi = b.idx;
  if (A.same_shape(B)) {
    Array out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return t.push(std::move(out), [ai, bi](Tape& t, int32_t self) {
      const Array& g = t.nodes[static_cast<size_t>(self)].grad;
      Array& da = t.grad_buf(ai);
      Array& db = t.grad_buf(bi);
      for (size_t i = 0; i < g.data.size(); ++i) {
        da.data[i] += g.data[i];
        db.data[i] += g.data[i];
      }
    });
  }
  if (A.ndim() == 2 && B.ndim() == 1 && A.cols() == B.shape[0]) {
    int64_t n = A.rows(), d = A.cols();
    Array out = A;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) out.at(i, j) += B.at(j);
    return t.push(std::move(out), [ai, bi, n, d](Tape& t, int32_t self) {
      const Array& g = t.nodes[static_cast<size_t>(self)].grad;
      Array& da = t.grad_buf(ai);
      Array& db = t.grad_buf(bi);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) {
          double gv = g.at(i, j);
          da.at(i, j) += gv;
          db.at(j) += gv;
        }
    });
  }
  shape_error2("add", A, B);
}

Value sub(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (!A.same_shape(B)) shape_error2("sub", A, B);
  Array out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
  int32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (size_t i = 0; i < g.data.size(); ++i) {
      da.data[i] += g.data[i];
      db.data[i] -= g.data[i];
    }
  });
}

Value mul(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (!A.same_shape(B)) shape_error2("mul", A, B);
  Array out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  int32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (size_t i = 0; i < g.data.size(); ++i) {
      da.data[i] += g.data[i] * B.data[i];
      db.data[i] += g.data[i] * A.data[i];
    }
  });
}

Value scale(Value a, double c) {
  Tape& t = T(a);
  Array out = t.val(a);
  for (double& x : out.data) x *= c;
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, c](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
  });
}

Value elu(Value a) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  Array out = A;
  for (double& x : out.data) x = x > 0.0 ? x : std::expm1(x);
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < g.data.size(); ++i) {
      double x = A.data[i];
      da.data[i] += g.data[i] * (x > 0.0 ? 1.0 : std::exp(x));
    }
  });
}

Value leaky_relu(Value a, double slope) {
  Tape& t = T(a);
  Array out = t.val(a);
  for (double& x : out.data) x = x > 0.0 ? x : slope * x;
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, slope](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < g.data.size(); ++i)
      da.data[i] += g.data[i] * (A.data[i] > 0.0 ? 1.0 : slope);
  });
}

Value sigmoid(Value a) {
  Tape& t = T(a);
  Array out = t.val(a);
  for (double& x : out.data) {
    if (x >= 0.0) {
      x = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      x = e / (1.0 + e);
    }
  }
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& Y = t.nodes[static_cast<size_t>(self)].value;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < g.data.size(); ++i) {
      double y = Y.data[i];
      da.data[i] += g.data[i] * y * (1.0 - y);
    }
  });
}

namespace {

// Softmax of `len` entries strided by `stride` starting at base offset.
void softmax_lane(const double* in, double* out, int64_t len, int64_t stride) {
  double m = in[0];
  for (int64_t i = 1; i < len; ++i) m = std::max(m, in[i * stride]);
  double s = 0.0;
  for (int64_t i = 0; i < len; ++i) {
    double e = std::exp(in[i * stride] - m);
    out[i * stride] = e;
    s += e;
  }
  for (int64_t i = 0; i < len; ++i) out[i * stride] /= s;
}

void softmax_lane_backward(const double* y, const double* g, double* dx, int64_t len,
                           int64_t stride) {
  double dot = 0.0;
  for (int64_t i = 0; i < len; ++i) dot += y[i * stride] * g[i * stride];
  for (int64_t i = 0; i < len; ++i)
    dx[i * stride] += y[i * stride] * (g[i * stride] - dot);
}

}  // namespace

Value softmax(Value a, int axis) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  Array out(A.shape);
  int64_t lanes, len, stride, lane_step;
  if (A.ndim() == 1) {
    lanes = 1;
    len = A.shape[0];
    stride = 1;
    lane_step = 0;
  } else if (A.ndim() == 2 && axis == 1) {
    lanes = A.rows();
    len = A.cols();
    stride = 1;
    lane_step = A.cols();
  } else if (A.ndim() == 2 && axis == 0) {
    lanes = A.cols();
    len = A.rows();
    stride = A.cols();
    lane_step = 1;
  } else {
    shape_error("softmax", A);
  }
  if (len == 0) shape_error("softmax", A);
  for (int64_t l = 0; l < lanes; ++l)
    softmax_lane(&A.data[static_cast<size_t>(l * lane_step)],
                 &out.data[static_cast<size_t>(l * lane_step)], len, stride);
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, lanes, len, stride, lane_step](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& Y = t.nodes[static_cast<size_t>(self)].value;
    Array& da = t.grad_buf(ai);
    for (int64_t l = 0; l < lanes; ++l)
      softmax_lane_backward(&Y.data[static_cast<size_t>(l * lane_step)],
                            &g.data[static_cast<size_t>(l * lane_step)],
                            &da.data[static_cast<size_t>(l * lane_step)], len, stride);
  });
}

Value segment_softmax(Value scores, std::vector<int64_t> seg, int64_t n_seg) {
  Tape& t = T(scores);
  const Array& S = t.val(scores);
  if (S.ndim() != 1 || static_cast<size_t>(S.size()) != seg.size())
    shape_error("segment_softmax", S);
  for (int64_t s : seg)
    if (s < 0 || s >= n_seg) throw std::invalid_argument("segment_softmax: bad segment id");
  int64_t n = S.size();
  std::vector<double> mx(static_cast<size_t>(n_seg), -1e300);
  for (int64_t i = 0; i < n; ++i)
    mx[static_cast<size_t>(seg[static_cast<size_t>(i)])] =
        std::max(mx[static_cast<size_t>(seg[static_cast<size_t>(i)])], S.at(i));
  Array out(S.shape);
  std::vector<double> sum(static_cast<size_t>(n_seg), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double e = std::exp(S.at(i) - mx[static_cast<size_t>(seg[static_cast<size_t>(i)])]);
    out.at(i) = e;
    sum[static_cast<size_t>(seg[static_cast<size_t>(i)])] += e;
  }
  for (int64_t i = 0; i < n; ++i) out.at(i) /= sum[static_cast<size_t>(seg[static_cast<size_t>(i)])];
  int32_t si = scores.idx;
  return t.push(std::move(out), [si, seg = std::move(seg), n_seg](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& Y = t.nodes[static_cast<size_t>(self)].value;
    Array& da = t.grad_buf(si);
    std::vector<double> dot(static_cast<size_t>(n_seg), 0.0);
    for (size_t i = 0; i < seg.size(); ++i)
      dot[static_cast<size_t>(seg[i])] += g.data[i] * Y.data[i];
    for (size_t i = 0; i < seg.size(); ++i)
      da.data[i] += Y.data[i] * (g.data[i] - dot[static_cast<size_t>(seg[i])]);
  });
}

Value layer_norm(Value x, Value gain, Value bias, double eps) {
  Tape& t = T(x);
  same_tape(x, gain);
  same_tape(x, bias);
  const Array& X = t.val(x);
  const Array& G = t.val(gain);
  const Array& B = t.val(bias);
  int64_t n = X.ndim() == 2 ? X.rows() : 1;
  int64_t d = X.ndim() == 2 ? X.cols() : X.shape.at(0);
  if (G.ndim() != 1 || G.shape[0] != d || !G.same_shape(B)) shape_error2("layer_norm", G, B);
  Array out(X.shape);
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = &X.data[static_cast<size_t>(i * d)];
    double* yr = &out.data[static_cast<size_t>(i * d)];
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv * G.at(j) + B.at(j);
  }
  int32_t xi = x.idx, gi = gain.idx, bi = bias.idx;
  return t.push(std::move(out), [xi, gi, bi, n, d, eps](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& X = t.nodes[static_cast<size_t>(xi)].value;
    const Array& G = t.nodes[static_cast<size_t>(gi)].value;
    Array& dx = t.grad_buf(xi);
    Array& dg = t.grad_buf(gi);
    Array& db = t.grad_buf(bi);
    std::vector<double> xhat(static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
      const double* xr = &X.data[static_cast<size_t>(i * d)];
      const double* gr = &g.data[static_cast<size_t>(i * d)];
      double* dxr = &dx.data[static_cast<size_t>(i * d)];
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += xr[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(d);
      double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        xhat[static_cast<size_t>(j)] = (xr[j] - mu) * inv;
        double dxh = gr[j] * G.at(j);
        m1 += dxh;
        m2 += dxh * xhat[static_cast<size_t>(j)];
        dg.at(j) += gr[j] * xhat[static_cast<size_t>(j)];
        db.at(j) += gr[j];
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (int64_t j = 0; j < d; ++j) {
        double dxh = gr[j] * G.at(j);
        dxr[j] += inv * (dxh - m1 - xhat[static_cast<size_t>(j)] * m2);
      }
    }
  });
}

Value dropout(Value a, double rate, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  Tape& t = T(a);
  if (rate == 0.0) return a;
  const Array& A = t.val(a);
  Rng rng(seed);
  std::vector<double> factor(A.data.size());
  double keep = 1.0 / (1.0 - rate);
  for (double& f : factor) f = rng.uniform() < rate ? 0.0 : keep;
  Array out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= factor[i];
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, factor = std::move(factor)](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * factor[i];
  });
}

namespace {

Value reduce_impl(Value a, int axis, bool mean) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  const char* op = mean ? "reduce_mean" : "reduce_sum";
  int32_t ai = a.idx;
  if (axis == -1 || A.ndim() == 1) {
    if (A.size() == 0) shape_error(op, A);
    double s = 0.0;
    for (double x : A.data) s += x;
    double f = mean ? 1.0 / static_cast<double>(A.size()) : 1.0;
    return t.push(Array::scalar(s * f), [ai, f](Tape& t, int32_t self) {
      double gv = t.nodes[static_cast<size_t>(self)].grad.data[0] * f;
      Array& da = t.grad_buf(ai);
      for (double& x : da.data) x += gv;
    });
  }
  if (A.ndim() != 2 || (axis != 0 && axis != 1)) shape_error(op, A);
  int64_t n = A.rows(), d = A.cols();
  if (n == 0 || d == 0) shape_error(op, A);
  if (axis == 0) {
    Array out({d});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) out.at(j) += A.at(i, j);
    double f = mean ? 1.0 / static_cast<double>(n) : 1.0;
    if (mean)
      for (double& x : out.data) x *= f;
    return t.push(std::move(out), [ai, n, d, f](Tape& t, int32_t self) {
      const Array& g = t.nodes[static_cast<size_t>(self)].grad;
      Array& da = t.grad_buf(ai);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) da.at(i, j) += g.at(j) * f;
    });
  }
  Array out({n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i) += A.at(i, j);
  double f = mean ? 1.0 / static_cast<double>(d) : 1.0;
  if (mean)
    for (double& x : out.data) x *= f;
  return t.push(std::move(out), [ai, n, d, f](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) da.at(i, j) += g.at(i) * f;
  });
}

}  // namespace

Value reduce_sum(Value a, int axis) { return reduce_impl(a, axis, false); }
Value reduce_mean(Value a, int axis) { return reduce_impl(a, axis, true); }

Value concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = T(parts[0]);
  for (Value p : parts) same_tape(parts[0], p);
  const Array& first = t.val(parts[0]);
  std::vector<int32_t> idx;
  for (Value p : parts) idx.push_back(p.idx);
  if (first.ndim() == 1) {
    int64_t total = 0;
    for (Value p : parts) {
      if (t.val(p).ndim() != 1) shape_error("concat", t.val(p));
      total += t.val(p).size();
    }
    Array out({total});
    int64_t off = 0;
    std::vector<int64_t> offs;
    for (Value p : parts) {
      const Array& a = t.val(p);
      offs.push_back(off);
      std::copy(a.data.begin(), a.data.end(), out.data.begin() + off);
      off += a.size();
    }
    return t.push(std::move(out), [idx, offs](Tape& t, int32_t self) {
      const Array& g = t.nodes[static_cast<size_t>(self)].grad;
      for (size_t p = 0; p < idx.size(); ++p) {
        Array& da = t.grad_buf(idx[p]);
        for (int64_t i = 0; i < da.size(); ++i) da.at(i) += g.at(offs[p] + i);
      }
    });
  }
  if (first.ndim() != 2 || (axis != 0 && axis != 1)) shape_error("concat", first);
  if (axis == 0) {
    int64_t d = first.cols(), n = 0;
    for (Value p : parts) {
      const Array& a = t.val(p);
      if (a.ndim() != 2 || a.cols() != d) shape_error2("concat", first, a);
      n += a.rows();
    }
    Array out({n, d});
    int64_t r = 0;
    std::vector<int64_t> row0;
    for (Value p : parts) {
      const Array& a = t.val(p);
      row0.push_back(r);
      std::copy(a.data.begin(), a.data.end(), out.data.begin() + r * d);
      r += a.rows();
    }
    return t.push(std::move(out), [idx, row0, d](Tape& t, int32_t self) {
      const Array& g = t.nodes[static_cast<size_t>(self)].grad;
      for (size_t p = 0; p < idx.size(); ++p) {
        Array& da = t.grad_buf(idx[p]);
        const double* src = &g.data[static_cast<size_t>(row0[p] * d)];
        for (int64_t i = 0; i < da.size(); ++i) da.at(i) += src[i];
      }
    });
  }
  int64_t n = first.rows(), total = 0;
  for (Value p : parts) {
    const Array& a = t.val(p);
    if (a.ndim() != 2 || a.rows() != n) shape_error2("concat", first, a);
    total += a.cols();
  }
  Array out({n, total});
  int64_t c = 0;
  std::vector<int64_t> col0, widths;
  for (Value p : parts) {
    const Array& a = t.val(p);
    col0.push_back(c);
    widths.push_back(a.cols());
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < a.cols(); ++j) out.at(i, c + j) = a.at(i, j);
    c += a.cols();
  }
  return t.push(std::move(out), [idx, col0, widths, n](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    for (size_t p = 0; p < idx.size(); ++p) {
      Array& da = t.grad_buf(idx[p]);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < widths[p]; ++j) da.at(i, j) += g.at(i, col0[p] + j);
    }
  });
}

Value slice_cols(Value a, int64_t c0, int64_t c1) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  if (A.ndim() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1) shape_error("slice_cols", A);
  int64_t n = A.rows(), w = c1 - c0;
  Array out({n, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, c0, n, w](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < w; ++j) da.at(i, c0 + j) += g.at(i, j);
  });
}

Value gather_rows(Value a, std::vector<int64_t> idx) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  if (A.ndim() != 2) shape_error("gather_rows", A);
  for (int64_t r : idx)
    if (r < 0 || r >= A.rows()) throw std::invalid_argument("gather_rows: index out of range");
  int64_t d = A.cols(), k = static_cast<int64_t>(idx.size());
  Array out({k, d});
  for (int64_t i = 0; i < k; ++i) {
    const double* src = &A.data[static_cast<size_t>(idx[static_cast<size_t>(i)] * d)];
    std::copy(src, src + d, &out.data[static_cast<size_t>(i * d)]);
  }
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, idx = std::move(idx), d](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < idx.size(); ++i) {
      double* dst = &da.data[static_cast<size_t>(idx[i] * d)];
      const double* src = &g.data[i * static_cast<size_t>(d)];
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Value scatter_sum_rows(Value a, std::vector<int64_t> dst, int64_t n_rows) {
  Tape& t = T(a);
  const Array& A = t.val(a);
  if (A.ndim() != 2 || static_cast<size_t>(A.rows()) != dst.size())
    shape_error("scatter_sum_rows", A);
  for (int64_t r : dst)
    if (r < 0 || r >= n_rows) throw std::invalid_argument("scatter_sum_rows: index out of range");
  int64_t d = A.cols();
  Array out({n_rows, d});
  for (size_t i = 0; i < dst.size(); ++i) {
    const double* src = &A.data[i * static_cast<size_t>(d)];
    double* o = &out.data[static_cast<size_t>(dst[i] * d)];
    for (int64_t j = 0; j < d; ++j) o[j] += src[j];
  }
  int32_t ai = a.idx;
  return t.push(std::move(out), [ai, dst = std::move(dst), d](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(ai);
    for (size_t i = 0; i < dst.size(); ++i) {
      const double* src = &g.data[static_cast<size_t>(dst[i] * d)];
      double* o = &da.data[i * static_cast<size_t>(d)];
      for (int64_t j = 0; j < d; ++j) o[j] += src[j];
    }
  });
}

Value set_rows(Value base, std::vector<int64_t> idx, Value rows) {
  Tape& t = T(base);
  same_tape(base, rows);
  const Array& B = t.val(base);
  const Array& R = t.val(rows);
  if (B.ndim() != 2 || R.ndim() != 2 || B.cols() != R.cols() ||
      static_cast<size_t>(R.rows()) != idx.size())
    shape_error2("set_rows", B, R);
  for (int64_t r : idx)
    if (r < 0 || r >= B.rows()) throw std::invalid_argument("set_rows: index out of range");
  int64_t d = B.cols();
  Array out = B;
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = &R.data[i * static_cast<size_t>(d)];
    std::copy(src, src + d, &out.data[static_cast<size_t>(idx[i] * d)]);
  }
  int32_t bi = base.idx, ri = rows.idx;
  return t.push(std::move(out), [bi, ri, idx = std::move(idx), d](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& db = t.grad_buf(bi);
    Array& dr = t.grad_buf(ri);
    std::vector<char> replaced(static_cast<size_t>(db.rows()), 0);
    for (size_t i = 0; i < idx.size(); ++i) {
      replaced[static_cast<size_t>(idx[i])] = 1;
      const double* src = &g.data[static_cast<size_t>(idx[i] * d)];
      double* o = &dr.data[i * static_cast<size_t>(d)];
      for (int64_t j = 0; j < d; ++j) o[j] += src[j];
    }
    for (int64_t r = 0; r < db.rows(); ++r) {
      if (replaced[static_cast<size_t>(r)]) continue;
      const double* src = &g.data[static_cast<size_t>(r * d)];
      double* o = &db.data[static_cast<size_t>(r * d)];
      for (int64_t j = 0; j < d; ++j) o[j] += src[j];
    }
  });
}

Value scale_rows(Value m, Value v) {
  Tape& t = T(m);
  same_tape(m, v);
  const Array& M = t.val(m);
  const Array& Vv = t.val(v);
  if (M.ndim() != 2 || Vv.ndim() != 1 || M.rows() != Vv.shape[0]) shape_error2("scale_rows", M, Vv);
  int64_t n = M.rows(), d = M.cols();
  Array out = M;
  for (int64_t i = 0; i < n; ++i) {
    double f = Vv.at(i);
    double* row = &out.data[static_cast<size_t>(i * d)];
    for (int64_t j = 0; j < d; ++j) row[j] *= f;
  }
  int32_t mi = m.idx, vi = v.idx;
  return t.push(std::move(out), [mi, vi, n, d](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& M = t.nodes[static_cast<size_t>(mi)].value;
    const Array& Vv = t.nodes[static_cast<size_t>(vi)].value;
    Array& dm = t.grad_buf(mi);
    Array& dv = t.grad_buf(vi);
    for (int64_t i = 0; i < n; ++i) {
      double f = Vv.at(i);
      const double* grow = &g.data[static_cast<size_t>(i * d)];
      const double* mrow = &M.data[static_cast<size_t>(i * d)];
      double* dmrow = &dm.data[static_cast<size_t>(i * d)];
      double acc = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        dmrow[j] += grow[j] * f;
        acc += grow[j] * mrow[j];
      }
      dv.at(i) += acc;
    }
  });
}

namespace {

Value reshape_to(Value v, std::vector<int64_t> shape) {
  Tape& t = T(v);
  const Array& A = t.val(v);
  if (Array::count(shape) != A.size()) shape_error("reshape", A);
  Array out(std::move(shape), A.data);
  int32_t vi = v.idx;
  return t.push(std::move(out), [vi](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    Array& da = t.grad_buf(vi);
    for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
  });
}

}  // namespace

Value as_row(Value v) {
  const Array& A = T(v).val(v);
  if (A.ndim() != 1) shape_error("as_row", A);
  return reshape_to(v, {1, A.shape[0]});
}

Value as_vec(Value v) {
  const Array& A = T(v).val(v);
  if (A.ndim() != 2 || (A.rows() != 1 && A.cols() != 1)) shape_error("as_vec", A);
  return reshape_to(v, {A.rows() == 1 ? A.cols() : A.rows()});
}

Value cosine(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (A.size() != B.size() || A.size() == 0) shape_error2("cosine", A, B);
  double s = 0.0, na2 = 0.0, nb2 = 0.0;
  for (size_t i = 0; i < A.data.size(); ++i) {
    s += A.data[i] * B.data[i];
    na2 += A.data[i] * A.data[i];
    nb2 += B.data[i] * B.data[i];
  }
  double denom = std::max(std::sqrt(na2) * std::sqrt(nb2), kCosEps);
  double c = s / denom;
  int32_t ai = a.idx, bi = b.idx;
  return t.push(Array::scalar(c), [ai, bi, denom, na2, nb2, c](Tape& t, int32_t self) {
    double gv = t.nodes[static_cast<size_t>(self)].grad.data[0];
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    bool degenerate = std::sqrt(na2) * std::sqrt(nb2) < kCosEps;
    for (size_t i = 0; i < A.data.size(); ++i) {
      double ga = B.data[i] / denom;
      double gb = A.data[i] / denom;
      if (!degenerate) {
        ga -= c * A.data[i] / na2;
        gb -= c * B.data[i] / nb2;
      }
      da.data[i] += gv * ga;
      db.data[i] += gv * gb;
    }
  });
}

Value rows_cosine(Value a, Value b) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (A.ndim() != 2 || !A.same_shape(B)) shape_error2("rows_cosine", A, B);
  int64_t n = A.rows(), d = A.cols();
  Array out({n});
  for (int64_t r = 0; r < n; ++r) {
    double s = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      double x = A.data[static_cast<size_t>(r * d + i)];
      double y = B.data[static_cast<size_t>(r * d + i)];
      s += x * y;
      na2 += x * x;
      nb2 += y * y;
    }
    out.data[static_cast<size_t>(r)] = s / std::max(std::sqrt(na2) * std::sqrt(nb2), kCosEps);
  }
  int32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi, n, d](Tape& t, int32_t self) {
    const Array& G = t.nodes[static_cast<size_t>(self)].grad;
    const Array& C = t.nodes[static_cast<size_t>(self)].value;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (int64_t r = 0; r < n; ++r) {
      double na2 = 0.0, nb2 = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        double x = A.data[static_cast<size_t>(r * d + i)];
        double y = B.data[static_cast<size_t>(r * d + i)];
        na2 += x * x;
        nb2 += y * y;
      }
      double denom = std::max(std::sqrt(na2) * std::sqrt(nb2), kCosEps);
      bool degenerate = std::sqrt(na2) * std::sqrt(nb2) < kCosEps;
      double gv = G.data[static_cast<size_t>(r)];
      double c = C.data[static_cast<size_t>(r)];
      for (int64_t i = 0; i < d; ++i) {
        double x = A.data[static_cast<size_t>(r * d + i)];
        double y = B.data[static_cast<size_t>(r * d + i)];
        double ga = y / denom;
        double gb = x / denom;
        if (!degenerate) {
          ga -= c * x / na2;
          gb -= c * y / nb2;
        }
        da.data[static_cast<size_t>(r * d + i)] += gv * ga;
        db.data[static_cast<size_t>(r * d + i)] += gv * gb;
      }
    }
  });
}

namespace {

Value sq_err_impl(Value a, Value b, bool mean) {
  Tape& t = T(a);
  same_tape(a, b);
  const Array& A = t.val(a);
  const Array& B = t.val(b);
  if (!A.same_shape(B) || A.size() == 0) shape_error2("sq_err", A, B);
  double s = 0.0;
  for (size_t i = 0; i < A.data.size(); ++i) {
    double dlt = A.data[i] - B.data[i];
    s += dlt * dlt;
  }
  double f = mean ? 1.0 / static_cast<double>(A.size()) : 1.0;
  int32_t ai = a.idx, bi = b.idx;
  return t.push(Array::scalar(s * f), [ai, bi, f](Tape& t, int32_t self) {
    double gv = t.nodes[static_cast<size_t>(self)].grad.data[0] * f;
    const Array& A = t.nodes[static_cast<size_t>(ai)].value;
    const Array& B = t.nodes[static_cast<size_t>(bi)].value;
    Array& da = t.grad_buf(ai);
    Array& db = t.grad_buf(bi);
    for (size_t i = 0; i < A.data.size(); ++i) {
      double d2 = 2.0 * (A.data[i] - B.data[i]) * gv;
      da.data[i] += d2;
      db.data[i] -= d2;
    }
  });
}

}  // namespace

Value sq_err_sum(Value a, Value b) { return sq_err_impl(a, b, false); }
Value mse(Value a, Value b) { return sq_err_impl(a, b, true); }

Value cross_entropy(Value p, const Array& y) { return focal(p, y, 0.0); }

Value focal(Value p, const Array& y, double beta) {
  Tape& t = T(p);
  const Array& P = t.val(p);
  if (!P.same_shape(y)) shape_error2("focal", P, y);
  if (beta < 0.0) throw std::invalid_argument("focal: beta must be >= 0");
  Array out(P.shape);
  for (size_t i = 0; i < P.data.size(); ++i) {
    double pc = std::clamp(P.data[i], kProbEps, 1.0 - kProbEps);
    double yv = y.data[i];
    out.data[i] = -yv * std::pow(1.0 - pc, beta) * std::log(pc) -
                  (1.0 - yv) * std::pow(pc, beta) * std::log(1.0 - pc);
  }
  int32_t pi = p.idx;
  Array yc = y;
  return t.push(std::move(out), [pi, yc = std::move(yc), beta](Tape& t, int32_t self) {
    const Array& g = t.nodes[static_cast<size_t>(self)].grad;
    const Array& P = t.nodes[static_cast<size_t>(pi)].value;
    Array& dp = t.grad_buf(pi);
    for (size_t i = 0; i < P.data.size(); ++i) {
      double raw = P.data[i];
      if (raw < kProbEps || raw > 1.0 - kProbEps) continue;
      double pc = raw, yv = yc.data[i];
      double d = 0.0;
      if (yv != 0.0) {
        double base = beta > 0.0 ? std::pow(1.0 - pc, beta - 1.0) : 0.0;
        d += yv * (beta * base * std::log(pc) - std::pow(1.0 - pc, beta) / pc);
      }
      if (yv != 1.0) {
        double base = beta > 0.0 ? std::pow(pc, beta - 1.0) : 0.0;
        d += (1.0 - yv) *
             (-beta * base * std::log(1.0 - pc) + std::pow(pc, beta) / (1.0 - pc));
      }
      dp.data[i] += g.data[i] * d;
    }
  });
}

Value linear(Value x, Value W, Value b) {
  Value y = matmul_nt(x, W);
  if (b.ok()) y = add(y, b);
  return y;
}

}  // namespace progsg::ad
