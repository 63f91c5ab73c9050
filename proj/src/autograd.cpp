#include "kfdiff/autograd.hpp"

#include <cmath>

#include "kfdiff/attention.hpp"
#include "kfdiff/simd/kernels.hpp"

namespace kfdiff::ag {

// ---- tape ------------------------------------------------------------------

template <class T>
Var Tape<T>::constant(Matrix<T> value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::input(Matrix<T> value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, recording_, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  nodes_.push_back(Node{{}, {}, &p, recording_, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&p] = id;
  return Var{id};
}

template <class T>
const Matrix<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.param ? n.param->value : n.value;
}

template <class T>
Matrix<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  if (n.grad.empty() && !n.value.empty()) n.grad.resize(n.value.rows(), n.value.cols());
  return n.grad;
}

template <class T>
Var Tape<T>::push(Matrix<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(fn));
}

template <class T>
Var Tape<T>::push(Matrix<T> value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  if (recording_)
    for (Var p : parents) needs = needs || (p.valid() && nodes_[p.id].needs_grad);
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
void Tape<T>::backward(Var output, const Matrix<T>& seed) {
  if (!recording_) throw PreconditionError("backward on a non-recording tape");
  require_same_shape(value(output), seed, "backward seed");
  if (!nodes_[output.id].needs_grad) return;
  Matrix<T>& g = grad(output);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, Var{id});
  }
}

template class Tape<float>;
template class Tape<double>;

// ---- ops -------------------------------------------------------------------

namespace {

template <class T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Matrix<T>& xv = tape.value(x);
  const Matrix<T>& wv = tape.value(w);
  if (xv.cols() != wv.rows())
    throw ShapeError("linear: input " + shape_str(xv.rows(), xv.cols()) + " vs weight " +
                     shape_str(wv.rows(), wv.cols()));
  const int n = static_cast<int>(xv.rows()), in = static_cast<int>(wv.rows()),
            out = static_cast<int>(wv.cols());
  Matrix<T> y(n, out);
  simd::kernels<T>().gemm_nn(n, out, in, xv.data(), in, wv.data(), out, y.data(), out, false);
  if (b.valid()) {
    const Matrix<T>& bv = tape.value(b);
    if (bv.size() != static_cast<std::size_t>(out)) throw ShapeError("linear: bias width");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out; ++j) y(i, j) += bv[j];
  }
  return tape.push(std::move(y), {x, w, b}, [x, w, b, n, in, out](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    const auto& kern = simd::kernels<T>();
    if (t.needs_grad(x)) {
      Matrix<T>& dx = t.grad(x);
      kern.gemm_nt(n, in, out, dy.data(), out, t.value(w).data(), out, dx.data(), in, true);
    }
    if (t.needs_grad(w)) {
      Matrix<T>& dw = t.grad(w);
      kern.gemm_tn(in, out, n, t.value(x).data(), in, dy.data(), out, dw.data(), out, true);
    }
    if (b.valid() && t.needs_grad(b)) {
      Matrix<T>& db = t.grad(b);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out; ++j) db[j] += dy(i, j);
    }
  });
}

template <class T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  return linear(tape, a, b, Var{});
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Matrix<T>& av = tape.value(a);
  const Matrix<T>& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  Matrix<T> y = av;
  add_into(y, bv);
  return tape.push(std::move(y), {a, b}, [a, b](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), dy);
    if (t.needs_grad(b)) add_into(t.grad(b), dy);
  });
}

template <class T>
Var add_row(Tape<T>& tape, Var a, Var row) {
  const Matrix<T>& av = tape.value(a);
  const Matrix<T>& rv = tape.value(row);
  if (rv.size() != av.cols()) throw ShapeError("add_row: width mismatch");
  Matrix<T> y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += rv[j];
  return tape.push(std::move(y), {a, row}, [a, row](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    if (t.needs_grad(a)) add_into(t.grad(a), dy);
    if (t.needs_grad(row)) {
      Matrix<T>& dr = t.grad(row);
      for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < dy.cols(); ++j) dr[j] += dy(i, j);
    }
  });
}

template <class T>
Var add_const(Tape<T>& tape, Var a, const Matrix<T>& c) {
  const Matrix<T>& av = tape.value(a);
  require_same_shape(av, c, "add_const");
  Matrix<T> y = av;
  add_into(y, c);
  return tape.push(std::move(y), {a}, [a](Tape<T>& t, Var self) { add_into(t.grad(a), t.grad(self)); });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Matrix<T> y = tape.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= factor;
  return tape.push(std::move(y), {a}, [a, factor](Tape<T>& t, Var self) {
    simd::kernels<T>().axpy(static_cast<int>(t.grad(self).size()), factor, t.grad(self).data(),
                            t.grad(a).data());
  });
}

template <class T>
Var concat_cols(Tape<T>& tape, Var a, Var b) {
  const Matrix<T>& av = tape.value(a);
  const Matrix<T>& bv = tape.value(b);
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row mismatch");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Matrix<T> y(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), y.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), y.row(i).begin() + ca);
  }
  return tape.push(std::move(y), {a, b}, [a, b, ca, cb](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    if (t.needs_grad(a)) {
      Matrix<T>& da = t.grad(a);
      for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < ca; ++j) da(i, j) += dy(i, j);
    }
    if (t.needs_grad(b)) {
      Matrix<T>& db = t.grad(b);
      for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < cb; ++j) db(i, j) += dy(i, ca + j);
    }
  });
}

template <class T>
Var concat_rows(Tape<T>& tape, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t cols = tape.value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (tape.value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += tape.value(p).rows();
  }
  Matrix<T> y(rows, cols);
  std::size_t r = 0;
  for (Var p : parts) {
    const Matrix<T>& pv = tape.value(p);
    std::copy(pv.data(), pv.data() + pv.size(), y.data() + r * cols);
    r += pv.rows();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return tape.push(std::move(y), parts, [owned, cols](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    std::size_t r0 = 0;
    for (Var p : owned) {
      const std::size_t n = t.value(p).rows();
      if (t.needs_grad(p)) {
        Matrix<T>& dp = t.grad(p);
        const T* src = dy.data() + r0 * cols;
        for (std::size_t i = 0; i < n * cols; ++i) dp[i] += src[i];
      }
      r0 += n;
    }
  });
}

template <class T>
Var slice_rows(Tape<T>& tape, Var a, std::size_t begin, std::size_t count) {
  const Matrix<T>& av = tape.value(a);
  if (begin + count > av.rows()) throw ShapeError("slice_rows: out of range");
  const std::size_t cols = av.cols();
  Matrix<T> y(count, cols);
  std::copy(av.data() + begin * cols, av.data() + (begin + count) * cols, y.data());
  return tape.push(std::move(y), {a}, [a, begin, cols](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    Matrix<T>& da = t.grad(a);
    T* dst = da.data() + begin * cols;
    for (std::size_t i = 0; i < dy.size(); ++i) dst[i] += dy[i];
  });
}

template <class T>
Var broadcast_rows(Tape<T>& tape, Var row, std::size_t n) {
  const Matrix<T>& rv = tape.value(row);
  const std::size_t cols = rv.size();
  Matrix<T> y(n, cols);
  for (std::size_t i = 0; i < n; ++i) std::copy(rv.data(), rv.data() + cols, y.row(i).begin());
  return tape.push(std::move(y), {row}, [row, cols](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    Matrix<T>& dr = t.grad(row);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) dr[j] += dy(i, j);
  });
}

template <class T>
Var select_rows(Tape<T>& tape, Var a, Var fallback, std::span<const char> use_a) {
  const Matrix<T>& av = tape.value(a);
  const Matrix<T>& fv = tape.value(fallback);
  if (use_a.size() != av.rows() || fv.size() != av.cols()) throw ShapeError("select_rows: shape");
  Matrix<T> y = av;
  for (std::size_t i = 0; i < y.rows(); ++i)
    if (!use_a[i]) std::copy(fv.data(), fv.data() + fv.size(), y.row(i).begin());
  std::vector<char> mask(use_a.begin(), use_a.end());
  return tape.push(std::move(y), {a, fallback}, [a, fallback, mask](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    const bool ga = t.needs_grad(a), gf = t.needs_grad(fallback);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
      if (mask[i]) {
        if (ga) {
          Matrix<T>& da = t.grad(a);
          for (std::size_t j = 0; j < dy.cols(); ++j) da(i, j) += dy(i, j);
        }
      } else if (gf) {
        Matrix<T>& df = t.grad(fallback);
        for (std::size_t j = 0; j < dy.cols(); ++j) df[j] += dy(i, j);
      }
    }
  });
}

template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
  const Matrix<T>& xv = tape.value(x);
  const Matrix<T>& gv = tape.value(gamma);
  const Matrix<T>& bv = tape.value(beta);
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gv.size() != c || bv.size() != c) throw ShapeError("layer_norm: affine width");
  Matrix<T> xhat(n, c);
  std::vector<T> inv_std(n);
  Matrix<T> y(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      y(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  return tape.push(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, Var self) {
                     const Matrix<T>& dy = t.grad(self);
                     const Matrix<T>& gv = t.value(gamma);
                     const std::size_t n = dy.rows(), c = dy.cols();
                     if (t.needs_grad(gamma) || t.needs_grad(beta)) {
                       Matrix<T>& dg = t.grad(gamma);
                       Matrix<T>& db = t.grad(beta);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           dg[j] += dy(i, j) * xhat(i, j);
                           db[j] += dy(i, j);
                         }
                     }
                     if (!t.needs_grad(x)) return;
                     Matrix<T>& dx = t.grad(x);
                     std::vector<T> dxh(c);
                     for (std::size_t i = 0; i < n; ++i) {
                       T m1 = 0, m2 = 0;
                       for (std::size_t j = 0; j < c; ++j) {
                         dxh[j] = dy(i, j) * gv[j];
                         m1 += dxh[j];
                         m2 += dxh[j] * xhat(i, j);
                       }
                       m1 /= static_cast<T>(c);
                       m2 /= static_cast<T>(c);
                       for (std::size_t j = 0; j < c; ++j)
                         dx(i, j) += inv_std[i] * (dxh[j] - m1 - xhat(i, j) * m2);
                     }
                   });
}

template <class T>
Var gelu(Tape<T>& tape, Var x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  Matrix<T> y = tape.value(x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = y[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, Var self) {
    const Matrix<T>& xv = t.value(x);
    const Matrix<T>& dy = t.grad(self);
    Matrix<T>& dx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(kC * (v + kA * v * v * v));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kC * (T(1) + T(3) * kA * v * v);
      dx[i] += dy[i] * d;
    }
  });
}

template <class T>
Var silu(Tape<T>& tape, Var x) {
  Matrix<T> y = tape.value(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] / (T(1) + std::exp(-y[i]));
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, Var self) {
    const Matrix<T>& xv = t.value(x);
    const Matrix<T>& dy = t.grad(self);
    Matrix<T>& dx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      dx[i] += dy[i] * s * (T(1) + xv[i] * (T(1) - s));
    }
  });
}

template <class T>
Var embedding_mean(Tape<T>& tape, Var table, std::span<const int> ids) {
  const Matrix<T>& tv = tape.value(table);
  if (ids.empty()) throw InputError("embedding_mean: empty token sequence");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= tv.rows())
      throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  const std::size_t c = tv.cols();
  const T w = T(1) / static_cast<T>(ids.size());
  Matrix<T> y(1, c);
  for (int id : ids)
    for (std::size_t j = 0; j < c; ++j) y[j] += w * tv(id, j);
  std::vector<int> owned(ids.begin(), ids.end());
  return tape.push(std::move(y), {table}, [table, owned, w, c](Tape<T>& t, Var self) {
    const Matrix<T>& dy = t.grad(self);
    Matrix<T>& dt = t.grad(table);
    for (int id : owned)
      for (std::size_t j = 0; j < c; ++j) dt(id, j) += w * dy[j];
  });
}

template <class T>
Var attention(Tape<T>& tape, Var q, Var k, Var v, int heads, std::span<const char> key_valid,
              std::span<const char> query_active) {
  AttentionResult<T> r =
      masked_attention(tape.value(q), tape.value(k), tape.value(v), heads, key_valid, query_active);
  return tape.push(std::move(r.out), {q, k, v}, [q, k, v, heads, probs = std::move(r.probs)](Tape<T>& t, Var self) {
    const Matrix<T>& qv = t.value(q);
    const Matrix<T>& kv = t.value(k);
    const Matrix<T>& vv = t.value(v);
    const Matrix<T>& dout = t.grad(self);
    const int lq = static_cast<int>(qv.rows()), lk = static_cast<int>(kv.rows()),
              d = static_cast<int>(qv.cols()), dh = d / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const auto& kern = simd::kernels<T>();
    const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
    std::vector<T> ds(static_cast<std::size_t>(lq) * lk);
    for (int h = 0; h < heads; ++h) {
      const T* p = probs.data() + static_cast<long>(h) * lq * lk;
      if (gv)
        kern.gemm_tn(lk, dh, lq, p, lk, dout.data() + h * dh, d, t.grad(v).data() + h * dh, d, true);
      if (!gq && !gk) continue;
      kern.gemm_nt(lq, lk, dh, dout.data() + h * dh, d, vv.data() + h * dh, d, ds.data(), lk, false);
      for (int i = 0; i < lq; ++i) {
        T* row = ds.data() + static_cast<long>(i) * lk;
        const T* prow = p + static_cast<long>(i) * lk;
        T s = 0;
        for (int j = 0; j < lk; ++j) s += prow[j] * row[j];
        for (int j = 0; j < lk; ++j) row[j] = prow[j] * (row[j] - s) * sc;
      }
      if (gq) kern.gemm_nn(lq, dh, lk, ds.data(), lk, kv.data() + h * dh, d, t.grad(q).data() + h * dh, d, true);
      if (gk) kern.gemm_tn(lk, dh, lq, ds.data(), lk, qv.data() + h * dh, d, t.grad(k).data() + h * dh, d, true);
    }
  });
}

template <class T>
Var external_loss(Tape<T>& tape, Var pred, T value, Matrix<T> grad) {
  require_same_shape(tape.value(pred), grad, "external_loss");
  Matrix<T> y(1, 1, value);
  return tape.push(std::move(y), {pred}, [pred, grad = std::move(grad)](Tape<T>& t, Var self) {
    const T s = t.grad(self)[0];
    simd::kernels<T>().axpy(static_cast<int>(grad.size()), s, grad.data(), t.grad(pred).data());
  });
}

#define KFDIFF_INSTANTIATE_OPS(T)                                                              \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                             \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                  \
  template Var add<T>(Tape<T>&, Var, Var);                                                     \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                 \
  template Var add_const<T>(Tape<T>&, Var, const Matrix<T>&);                                  \
  template Var scale<T>(Tape<T>&, Var, T);                                                     \
  template Var concat_cols<T>(Tape<T>&, Var, Var);                                             \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                                 \
  template Var slice_rows<T>(Tape<T>&, Var, std::size_t, std::size_t);                         \
  template Var broadcast_rows<T>(Tape<T>&, Var, std::size_t);                                  \
  template Var select_rows<T>(Tape<T>&, Var, Var, std::span<const char>);                      \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                      \
  template Var gelu<T>(Tape<T>&, Var);                                                         \
  template Var silu<T>(Tape<T>&, Var);                                                         \
  template Var embedding_mean<T>(Tape<T>&, Var, std::span<const int>);                         \
  template Var attention<T>(Tape<T>&, Var, Var, Var, int, std::span<const char>,               \
                            std::span<const char>);                                            \
  template Var external_loss<T>(Tape<T>&, Var, T, Matrix<T>);

KFDIFF_INSTANTIATE_OPS(float)
KFDIFF_INSTANTIATE_OPS(double)

}  // namespace kfdiff::ag
