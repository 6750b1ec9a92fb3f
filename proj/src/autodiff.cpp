// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "retromae/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace retromae::ad {

namespace {

template <typename T>
Tensor<T> checked(Tensor<T> t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  return t;
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument("vars belong to different tapes");
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// Row-major kernels. All accumulate into C; the reduction index is always the
// outer loop, so every output element sums its terms in ascending order.

// C[m x n] += A[m x k] . B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] . B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[m x n] += A[k x m]^T . B[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data().data();
  const T* s = src.data().data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = true;
  Parameter<T>* target = &p;
  n.backward = [target](Tape&, const Tensor<T>& g) {
    if (target->grad.shape() != target->value.shape()) target->zero_grad();
    accumulate(target->grad, g);
  };
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss.id).shape()));
  }
  grad(loss.id)[0] = T{1};
  last_visits_ = 0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
    ++last_visits_;
  }
}

// ---------------------------------------------------------------------------
// Elementwise / structural

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(checked(std::move(out), "add"), tape.requires_grad(ia) || tape.requires_grad(ib),
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                       if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
                     });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id;
  return tape.record(checked(std::move(out), "scale"), tape.requires_grad(ia),
                     [ia, factor](Tape<T>& t, const Tensor<T>& g) {
                       auto& ga = t.grad(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                     });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const auto& av = a.value();
  T s{0};
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id;
  return tape.record(checked(Tensor<T>({1}, std::vector<T>{s}), "sum"), tape.requires_grad(ia),
                     [ia](Tape<T>& t, const Tensor<T>& g) {
                       auto& ga = t.grad(ia);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                     });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_tape(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  require_rank(xv, 2, "add_bias");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (bv.size() != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id, ib = bias.id;
  return tape.record(checked(std::move(out), "add_bias"),
                     tape.requires_grad(ix) || tape.requires_grad(ib),
                     [ix, ib, rows, cols](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad(ib);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                       }
                     });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  require_rank(av, 2, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id;
  return tape.record(std::move(out), tape.requires_grad(ia),
                     [ia, m, n](Tape<T>& t, const Tensor<T>& g) {
                       auto& ga = t.grad(ia);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id;
  return tape.record(std::move(out), tape.requires_grad(ia), [ia](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " . " +
                     shape_str(bv.shape()));
  }
  Tensor<T> out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(checked(std::move(out), "matmul"),
                     tape.requires_grad(ia) || tape.requires_grad(ib),
                     [ia, ib, m, k, n](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) {
                         gemm_nt(g.data().data(), t.value(ib).data().data(),
                                 t.grad(ia).data().data(), m, n, k);
                       }
                       if (t.requires_grad(ib)) {
                         gemm_tn(t.value(ia).data().data(), g.data().data(),
                                 t.grad(ib).data().data(), m, k, n);
                       }
                     });
}

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 3, "batched_matmul");
  require_rank(bv, 3, "batched_matmul");
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  if (bv.dim(0) != batch || bv.dim(1) != k) {
    throw ShapeError("batched_matmul: " + shape_str(av.shape()) + " . " + shape_str(bv.shape()));
  }
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(av.data().data() + s * m * k, bv.data().data() + s * k * n,
            out.data().data() + s * m * n, m, k, n);
  }
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(checked(std::move(out), "batched_matmul"),
                     tape.requires_grad(ia) || tape.requires_grad(ib),
                     [ia, ib, batch, m, k, n](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t s = 0; s < batch; ++s) {
                         const T* gs = g.data().data() + s * m * n;
                         if (t.requires_grad(ia)) {
                           gemm_nt(gs, t.value(ib).data().data() + s * k * n,
                                   t.grad(ia).data().data() + s * m * k, m, n, k);
                         }
                         if (t.requires_grad(ib)) {
                           gemm_tn(t.value(ia).data().data() + s * m * k, gs,
                                   t.grad(ib).data().data() + s * k * n, m, k, n);
                         }
                       }
                     });
}

template <typename T>
Var<T> batched_matmul_bt(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 3, "batched_matmul_bt");
  require_rank(bv, 3, "batched_matmul_bt");
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(1);
  if (bv.dim(0) != batch || bv.dim(2) != k) {
    throw ShapeError("batched_matmul_bt: " + shape_str(av.shape()) + " . " +
                     shape_str(bv.shape()) + "^T");
  }
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nt(av.data().data() + s * m * k, bv.data().data() + s * n * k,
            out.data().data() + s * m * n, m, k, n);
  }
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(checked(std::move(out), "batched_matmul_bt"),
                     tape.requires_grad(ia) || tape.requires_grad(ib),
                     [ia, ib, batch, m, k, n](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t s = 0; s < batch; ++s) {
                         const T* gs = g.data().data() + s * m * n;
                         if (t.requires_grad(ia)) {
                           gemm_nn(gs, t.value(ib).data().data() + s * n * k,
                                   t.grad(ia).data().data() + s * m * k, m, n, k);
                         }
                         if (t.requires_grad(ib)) {
                           gemm_tn(gs, t.value(ia).data().data() + s * m * k,
                                   t.grad(ib).data().data() + s * n * k, m, n, k);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Var<T> gelu(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  }
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id;
  return tape.record(checked(std::move(out), "gelu"), tape.requires_grad(ix),
                     [ix, inv_sqrt2](Tape<T>& t, const Tensor<T>& g) {
                       const auto& xv = t.value(ix);
                       auto& gx = t.grad(ix);
                       const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         const T v = xv[i];
                         const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                         const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                         gx[i] += g[i] * (cdf + v * pdf);
                       }
                     });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const auto& xv = x.value();
  require_rank(xv, 2, "layer_norm");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw ShapeError("layer_norm: affine size does not match " + shape_str(xv.shape()));
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<T> out(xv.shape());
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data().data() + r * cols;
    T mean{0};
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= T(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mean) * rs;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  const bool rg = tape.requires_grad(ix) || tape.requires_grad(ig) || tape.requires_grad(ib);
  return tape.record(
      checked(std::move(out), "layer_norm"), rg,
      [ix, ig, ib, rows, cols, xhat, rstd](Tape<T>& t, const Tensor<T>& g) {
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const T go = g[r * cols + c];
              if (t.requires_grad(ig)) t.grad(ig)[c] += go * (*xhat)[r * cols + c];
              if (t.requires_grad(ib)) t.grad(ib)[c] += go;
            }
          }
        }
        if (!t.requires_grad(ix)) return;
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d{0}, mean_dh{0};
          for (std::size_t c = 0; c < cols; ++c) {
            const T d = g[r * cols + c] * gv[c];
            mean_d += d;
            mean_dh += d * (*xhat)[r * cols + c];
          }
          mean_d /= T(cols);
          mean_dh /= T(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const T d = g[r * cols + c] * gv[c];
            gx[r * cols + c] += (*rstd)[r] * (d - mean_d - (*xhat)[r * cols + c] * mean_dh);
          }
        }
      });
}

template <typename T>
Var<T> masked_softmax(Var<T> scores, const Tensor<T>& mask) {
  const auto& sv = scores.value();
  if (sv.rank() < 2 || sv.rank() > 3) {
    throw ShapeError("masked_softmax: scores must be rank 2 or 3, got " + shape_str(sv.shape()));
  }
  const std::size_t slices = sv.rank() == 3 ? sv.dim(0) : 1;
  const std::size_t rows = sv.dim(sv.rank() - 2), cols = sv.dim(sv.rank() - 1);
  std::size_t groups = 1;
  if (mask.rank() == 2) {
    if (mask.dim(0) != rows || mask.dim(1) != cols) {
      throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) + " vs scores " +
                       shape_str(sv.shape()));
    }
  } else if (mask.rank() == 3) {
    groups = mask.dim(0);
    if (groups == 0 || slices % groups != 0 || mask.dim(1) != rows || mask.dim(2) != cols) {
      throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) + " vs scores " +
                       shape_str(sv.shape()));
    }
  } else {
    throw ShapeError("masked_softmax: mask must be rank 2 or 3");
  }
  const std::size_t per_group = slices / groups;

  Tensor<T> out(sv.shape());
  for (std::size_t s = 0; s < slices; ++s) {
    const T* mk = mask.data().data() + (mask.rank() == 3 ? (s / per_group) * rows * cols : 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* srow = sv.data().data() + (s * rows + r) * cols;
      const T* mrow = mk + r * cols;
      T* orow = out.data().data() + (s * rows + r) * cols;
      bool any = false;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < cols; ++c) {
        if (std::isinf(mrow[c])) continue;
        const T v = srow[c] + mrow[c];
        if (!any || v > mx) mx = v;
        any = true;
      }
      if (!any) {
        throw std::domain_error("masked_softmax: row " + std::to_string(r) + " of slice " +
                                std::to_string(s) + " is fully masked");
      }
      T z{0};
      for (std::size_t c = 0; c < cols; ++c) {
        if (std::isinf(mrow[c])) {
          orow[c] = T{0};
          continue;
        }
        orow[c] = std::exp(srow[c] + mrow[c] - mx);
        z += orow[c];
      }
      for (std::size_t c = 0; c < cols; ++c) orow[c] /= z;
    }
  }
  Tape<T>& tape = *scores.tape;
  const std::size_t is = scores.id;
  const std::size_t out_id = tape.size();
  return tape.record(checked(std::move(out), "masked_softmax"), tape.requires_grad(is),
                     [is, out_id, slices, rows, cols](Tape<T>& t, const Tensor<T>& g) {
                       const auto& p = t.value(out_id);
                       auto& gs = t.grad(is);
                       for (std::size_t r = 0; r < slices * rows; ++r) {
                         const std::size_t base = r * cols;
                         T dot{0};
                         for (std::size_t c = 0; c < cols; ++c) dot += p[base + c] * g[base + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           gs[base + c] += p[base + c] * (g[base + c] - dot);
                         }
                       }
                     });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<std::int32_t> ids) {
  const auto& tv = table.value();
  require_rank(tv, 2, "gather_rows");
  const std::size_t rows = tv.dim(0), cols = tv.dim(1);
  Tensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(ids[i]) * cols, cols,
                out.data().data() + i * cols);
  }
  Tape<T>& tape = *table.tape;
  const std::size_t it = table.id;
  return tape.record(std::move(out), tape.requires_grad(it),
                     [it, cols, ids = std::move(ids)](Tape<T>& t, const Tensor<T>& g) {
                       auto& gt = t.grad(it);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         T* dst = gt.data().data() + static_cast<std::size_t>(ids[i]) * cols;
                         const T* src = g.data().data() + i * cols;
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                       }
                     });
}

template <typename T>
Var<T> select_rows(Var<T> a, Var<T> b, std::vector<std::uint8_t> use_b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 2, "select_rows");
  if (av.shape() != bv.shape() || use_b.size() != av.dim(0)) {
    throw ShapeError("select_rows: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t cols = av.dim(1);
  Tensor<T> out(av.shape());
  for (std::size_t r = 0; r < use_b.size(); ++r) {
    const T* src = (use_b[r] ? bv : av).data().data() + r * cols;
    std::copy_n(src, cols, out.data().data() + r * cols);
  }
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(std::move(out), tape.requires_grad(ia) || tape.requires_grad(ib),
                     [ia, ib, cols, use_b = std::move(use_b)](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t r = 0; r < use_b.size(); ++r) {
                         const std::size_t dst_id = use_b[r] ? ib : ia;
                         if (!t.requires_grad(dst_id)) continue;
                         T* dst = t.grad(dst_id).data().data() + r * cols;
                         const T* src = g.data().data() + r * cols;
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                       }
                     });
}

template <typename T>
Var<T> split_heads(Var<T> x, std::size_t batch, std::size_t heads) {
  const auto& xv = x.value();
  require_rank(xv, 2, "split_heads");
  if (batch == 0 || heads == 0 || xv.dim(0) % batch != 0 || xv.dim(1) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_str(xv.shape()) + " into " +
                     std::to_string(batch) + " sequences and " + std::to_string(heads) + " heads");
  }
  const std::size_t len = xv.dim(0) / batch, width = xv.dim(1), hd = width / heads;
  Tensor<T> out({batch * heads, len, hd});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < len; ++l)
        std::copy_n(xv.data().data() + (b * len + l) * width + h * hd, hd,
                    out.data().data() + ((b * heads + h) * len + l) * hd);
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id;
  return tape.record(std::move(out), tape.requires_grad(ix),
                     [ix, batch, heads, len, width, hd](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad(ix);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t h = 0; h < heads; ++h)
                           for (std::size_t l = 0; l < len; ++l) {
                             T* dst = gx.data().data() + (b * len + l) * width + h * hd;
                             const T* src = g.data().data() + ((b * heads + h) * len + l) * hd;
                             for (std::size_t e = 0; e < hd; ++e) dst[e] += src[e];
                           }
                     });
}

template <typename T>
Var<T> merge_heads(Var<T> x, std::size_t batch, std::size_t heads) {
  const auto& xv = x.value();
  require_rank(xv, 3, "merge_heads");
  if (xv.dim(0) != batch * heads) {
    throw ShapeError("merge_heads: " + shape_str(xv.shape()) + " is not " +
                     std::to_string(batch) + "x" + std::to_string(heads) + " slices");
  }
  const std::size_t len = xv.dim(1), hd = xv.dim(2), width = hd * heads;
  Tensor<T> out({batch * len, width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < len; ++l)
        std::copy_n(xv.data().data() + ((b * heads + h) * len + l) * hd, hd,
                    out.data().data() + (b * len + l) * width + h * hd);
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id;
  return tape.record(std::move(out), tape.requires_grad(ix),
                     [ix, batch, heads, len, width, hd](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad(ix);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t h = 0; h < heads; ++h)
                           for (std::size_t l = 0; l < len; ++l) {
                             T* dst = gx.data().data() + ((b * heads + h) * len + l) * hd;
                             const T* src = g.data().data() + (b * len + l) * width + h * hd;
                             for (std::size_t e = 0; e < hd; ++e) dst[e] += src[e];
                           }
                     });
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& weights) {
  const auto& lv = logits.value();
  require_rank(lv, 2, "cross_entropy");
  const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != rows || weights.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(weights.size()) + " weights for " + std::to_string(rows) +
                     " rows");
  }
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    if (weights[r]) ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: no position has weight 1");

  // probs holds softmax rows for weighted positions only.
  auto probs = std::make_shared<std::vector<T>>(rows * vocab, T{0});
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (!weights[r]) continue;
    const T* row = lv.data().data() + r * vocab;
    T mx = row[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    T z{0};
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t c = 0; c < vocab; ++c) (*probs)[r * vocab + c] = std::exp(row[c] - lse);
  }
  const T inv = T(1) / T(count);
  Tape<T>& tape = *logits.tape;
  const std::size_t il = logits.id;
  return tape.record(checked(Tensor<T>({1}, std::vector<T>{total * inv}), "cross_entropy"),
                     tape.requires_grad(il),
                     [il, rows, vocab, inv, probs, targets, weights](Tape<T>& t, const Tensor<T>& g) {
                       auto& gl = t.grad(il);
                       const T s = g[0] * inv;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!weights[r]) continue;
                         for (std::size_t c = 0; c < vocab; ++c) {
                           gl[r * vocab + c] += s * (*probs)[r * vocab + c];
                         }
                         gl[r * vocab + static_cast<std::size_t>(targets[r])] -= s;
                       }
                     });
}

#define RETROMAE_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                         \
  template Var<T> add(Var<T>, Var<T>);                                                            \
  template Var<T> scale(Var<T>, T);                                                               \
  template Var<T> sum(Var<T>);                                                                    \
  template Var<T> add_bias(Var<T>, Var<T>);                                                       \
  template Var<T> transpose(Var<T>);                                                              \
  template Var<T> reshape(Var<T>, Shape);                                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                                         \
  template Var<T> batched_matmul(Var<T>, Var<T>);                                                 \
  template Var<T> batched_matmul_bt(Var<T>, Var<T>);                                              \
  template Var<T> gelu(Var<T>);                                                                   \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                          \
  template Var<T> masked_softmax(Var<T>, const Tensor<T>&);                                       \
  template Var<T> gather_rows(Var<T>, std::vector<std::int32_t>);                                 \
  template Var<T> select_rows(Var<T>, Var<T>, std::vector<std::uint8_t>);                         \
  template Var<T> split_heads(Var<T>, std::size_t, std::size_t);                                  \
  template Var<T> merge_heads(Var<T>, std::size_t, std::size_t);                                  \
  template Var<T> cross_entropy(Var<T>, const std::vector<std::int32_t>&,                         \
                                const std::vector<std::uint8_t>&);

RETROMAE_INSTANTIATE(float)
RETROMAE_INSTANTIATE(double)

#undef RETROMAE_INSTANTIATE

}  // namespace retromae::ad
