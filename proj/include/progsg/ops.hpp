#pragma once

#include <vector>

#include "progsg/tape.hpp"

namespace progsg::ad {

// Differentiable ops. All take node handles on one tape and append result
// nodes. Shape violations throw std::invalid_argument.

// [n,k] @ [k,m] -> [n,m]
Value matmul(Value a, Value b);
// [n,k] @ [m,k]^T -> [n,m]
Value matmul_nt(Value a, Value b);

// Equal shapes, or row broadcast [n,d] + [d].
Value add(Value a, Value b);
Value sub(Value a, Value b);
// Elementwise product, equal shapes.
Value mul(Value a, Value b);
Value scale(Value a, double c);

Value elu(Value a);
Value leaky_relu(Value a, double slope);
Value sigmoid(Value a);

// 1-D: full softmax (axis ignored). 2-D: axis 1 = per row, axis 0 = per column.
Value softmax(Value a, int axis);
// Softmax over segments of a 1-D score vector: entries with seg[i] == s form
// one softmax group. Segment ids must lie in [0, n_seg).
Value segment_softmax(Value scores, std::vector<int64_t> seg, int64_t n_seg);

// Row-wise layer norm of [n,d] (or a single [d] vector) with learned gain and
// bias of shape [d].
Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);

// Inverted dropout with a self-contained seeded mask. rate in [0,1).
Value dropout(Value a, double rate, uint64_t seed);

// axis -1: reduce everything to a scalar. 2-D axis 0 -> [cols], axis 1 -> [rows].
Value reduce_sum(Value a, int axis);
Value reduce_mean(Value a, int axis);

Value concat(const std::vector<Value>& parts, int axis);
// Columns [c0, c1) of a 2-D array.
Value slice_cols(Value a, int64_t c0, int64_t c1);

// out[k,:] = a[idx[k],:]. Also the embedding lookup (table as `a`).
Value gather_rows(Value a, std::vector<int64_t> idx);
// out[dst[k],:] += a[k,:], result has n_rows rows.
Value scatter_sum_rows(Value a, std::vector<int64_t> dst, int64_t n_rows);
// Copy of `base` with rows[k,:] written at idx[k].
Value set_rows(Value base, std::vector<int64_t> idx, Value rows);
// out[i,:] = m[i,:] * v[i] with m [n,d], v [n].
Value scale_rows(Value m, Value v);

// Reshape [d] -> [1,d].
Value as_row(Value v);
// Flatten a single row [1,d] or single column [d,1] to [d].
Value as_vec(Value v);

// Cosine similarity of two equally sized arrays (flattened), scalar result.
Value cosine(Value a, Value b);
// Per-row cosine similarity of two [n,d] arrays, result [n].
Value rows_cosine(Value a, Value b);
// sum((a-b)^2), scalar.
Value sq_err_sum(Value a, Value b);
// mean((a-b)^2), scalar.
Value mse(Value a, Value b);
// Elementwise binary cross entropy of probabilities p against targets y.
Value cross_entropy(Value p, const Array& y);
// Elementwise focal loss; beta = 0 reduces to cross_entropy.
Value focal(Value p, const Array& y, double beta);

// x @ W^T + b with W [out,in] and b [out]; b may be invalid to skip.
Value linear(Value x, Value W, Value b);

}  // namespace progsg::ad
