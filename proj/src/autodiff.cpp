#include "spatialops/autodiff.hpp"

#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace spatialops::ad {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, true, true, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape_ != this) throw std::logic_error("operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : BackwardFn{}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
  if (!nodes_[id].requires_grad) return;
  auto& buf = grad_buffer(id);
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const auto& node = nodes_.at(v.id());
  if (node.grad.shape() != node.value.shape()) return Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape_ != this) throw std::logic_error("backward on a Var from another tape");
  const auto& out = nodes_[loss.id()].value;
  if (out.size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_string(out.shape()));
  }
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  backward_done_ = true;
  grad_buffer(loss.id()).fill(T{1});
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && node.grad.shape() == node.value.shape()) {
      node.backward(*this, i, node.grad);
      node.backward = nullptr;
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].trainable) grad_buffer(i);
  }
}

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                                shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T unary_value(Unary fn, T x) {
  switch (fn) {
    case Unary::Tanh: return std::tanh(x);
    case Unary::Relu: return x > T{0} ? x : T{0};
    case Unary::Sigmoid: return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
    case Unary::Exp: return std::exp(x);
    case Unary::Log: return std::log(x);
    case Unary::Sin: return std::sin(x);
    case Unary::Cos: return std::cos(x);
    case Unary::Square: return x * x;
  }
  return x;
}

// d(fn)/dx given both the input and the output.
template <typename T>
T unary_derivative(Unary fn, T x, T y) {
  switch (fn) {
    case Unary::Tanh: return T{1} - y * y;
    case Unary::Relu: return x > T{0} ? T{1} : T{0};
    case Unary::Sigmoid: return y * (T{1} - y);
    case Unary::Exp: return y;
    case Unary::Log: return T{1} / x;
    case Unary::Sin: return std::cos(x);
    case Unary::Cos: return -std::sin(x);
    case Unary::Square: return T{2} * x;
  }
  return T{0};
}

}  // namespace

template <typename T>
Var<T> apply(Unary fn, Var<T> x) {
  auto& tape = x.tape();
  const auto& xv = x.value();
  if (fn == Unary::Log && tape.checked()) {
    for (auto v : xv.data()) {
      if (!(v > T{0})) throw std::domain_error("log of nonpositive value " + std::to_string(v));
    }
  }
  Tensor<T> y(xv.shape());
  auto yd = y.data();
  auto xd = xv.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = unary_value(fn, xd[i]);
  const auto xid = x.id();
  return tape.record(std::move(y), {x}, [fn, xid](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
    auto xd = t.value(xid).data();
    auto yd = t.value(self).data();
    auto gd = g.data();
    auto dst = t.grad_buffer(xid).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i] * unary_derivative(fn, xd[i], yd[i]);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a.value(), b.value());
  Tensor<T> y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [ai, bi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor<T> y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] -= bd[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [ai, bi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    t.accumulate(ai, g);
    if (t.requires_grad(bi)) {
      auto dst = t.grad_buffer(bi).data();
      auto gd = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= gd[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor<T> y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] *= bd[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [ai, bi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto gd = g.data();
    if (t.requires_grad(ai)) {
      auto dst = t.grad_buffer(ai).data();
      auto bd = t.value(bi).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i] * bd[i];
    }
    if (t.requires_grad(bi)) {
      auto dst = t.grad_buffer(bi).data();
      auto ad = t.value(ai).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i] * ad[i];
    }
  });
}

template <typename T>
Var<T> atan2(Var<T> y, Var<T> x) {
  require_same_shape("atan2", y.value(), x.value());
  Tensor<T> out(y.value().shape());
  auto od = out.data();
  auto yd = y.value().data();
  auto xd = x.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::atan2(yd[i], xd[i]);
  const auto yi = y.id(), xi = x.id();
  return y.tape().record(std::move(out), {y, x}, [yi, xi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto gd = g.data();
    auto yd = t.value(yi).data();
    auto xd = t.value(xi).data();
    const bool need_y = t.requires_grad(yi), need_x = t.requires_grad(xi);
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const T r2 = xd[i] * xd[i] + yd[i] * yd[i];
      if (need_y) t.grad_buffer(yi)[i] += gd[i] * xd[i] / r2;
      if (need_x) t.grad_buffer(xi)[i] -= gd[i] * yd[i] / r2;
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= factor;
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi, factor](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto dst = t.grad_buffer(xi).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * gd[i];
  });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v += offset;
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    t.accumulate(xi, g);
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (xv.rank() == 0 || bv.rank() != 1 || bv.dim(0) != xv.shape().back()) {
    throw std::invalid_argument("add_bias: bias " + shape_string(bv.shape()) + " does not match last axis of " +
                                shape_string(xv.shape()));
  }
  const std::size_t n = bv.dim(0);
  Tensor<T> y = xv;
  auto yd = y.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i % n];
  const auto xi = x.id(), bi = bias.id();
  return x.tape().record(std::move(y), {x, bias}, [xi, bi, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    t.accumulate(xi, g);
    if (t.requires_grad(bi)) {
      auto dst = t.grad_buffer(bi).data();
      auto gd = g.data();
      for (std::size_t i = 0; i < gd.size(); ++i) dst[i % n] += gd[i];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                                shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> y({m, n});
  detail::gemm(av.data().data(), bv.data().data(), y.data().data(), m, k, n);
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [ai, bi, m, k, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (t.requires_grad(ai)) {
      detail::gemm_nt(g.data().data(), t.value(bi).data().data(), t.grad_buffer(ai).data().data(), m, n, k);
    }
    if (t.requires_grad(bi)) {
      detail::gemm_tn(t.value(ai).data().data(), g.data().data(), t.grad_buffer(bi).data().data(), k, m, n);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw std::invalid_argument("transpose needs a matrix, got " + shape_string(av.shape()));
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = av[i * n + j];
  const auto ai = a.id();
  return a.tape().record(std::move(y), {a}, [ai, m, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += g[j * m + i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto dst = t.grad_buffer(xi).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i];
  });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto s = split_axis(xv.shape(), axis, "softmax");
  if (s.extent == 0) throw std::invalid_argument("softmax over an empty axis");
  Tensor<T> y(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xv[base + e * s.inner] - mx);
        y[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= total;
    }
  }
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi, s](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
    const auto& yv = t.value(self);
    auto& dst = t.grad_buffer(xi);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot{0};
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * yv[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          dst[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> log_softmax(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto s = split_axis(xv.shape(), axis, "log_softmax");
  if (s.extent == 0) throw std::invalid_argument("log_softmax over an empty axis");
  Tensor<T> y(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) total += std::exp(xv[base + e * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] = xv[base + e * s.inner] - lse;
    }
  }
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi, s](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
    const auto& yv = t.value(self);
    auto& dst = t.grad_buffer(xi);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T gsum{0};
        for (std::size_t e = 0; e < s.extent; ++e) gsum += g[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          dst[i] += g[i] - std::exp(yv[i]) * gsum;
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (auto v : x.value().data()) total += v;
  const auto xi = x.id();
  return x.tape().record(Tensor<T>::scalar(total), {x}, [xi](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    const T gv = g[0];
    for (auto& v : t.grad_buffer(xi).data()) v += gv;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto n = x.value().size();
  if (n == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

template <typename T>
Var<T> sum_axis(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto s = split_axis(xv.shape(), axis, "sum_axis");
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> y(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t in = 0; in < s.inner; ++in) y[o * s.inner + in] += xv[(o * s.extent + e) * s.inner + in];
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi, s](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(xi);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t in = 0; in < s.inner; ++in) dst[(o * s.extent + e) * s.inner + in] += g[o * s.inner + in];
  });
}

template <typename T>
Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || begin >= end || end > xv.shape().back()) {
    throw std::invalid_argument("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  const std::size_t w = end - begin;
  Shape out_shape = xv.shape();
  out_shape.back() = w;
  Tensor<T> y(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = xv[r * n + begin + j];
  const auto xi = x.id();
  return x.tape().record(std::move(y), {x}, [xi, rows, n, w, begin](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dst[r * n + begin + j] += g[r * w + j];
  });
}

template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape as = av.shape(), bs = bv.shape();
  if (as.empty() || as.size() != bs.size() || !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    throw std::invalid_argument("concat_last: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  }
  const std::size_t na = as.back(), nb = bs.back(), n = na + nb;
  const std::size_t rows = na ? av.size() / na : bv.size() / nb;
  Shape out_shape = as;
  out_shape.back() = n;
  Tensor<T> y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < na; ++j) y[r * n + j] = av[r * na + j];
    for (std::size_t j = 0; j < nb; ++j) y[r * n + na + j] = bv[r * nb + j];
  }
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [ai, bi, rows, na, nb, n](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    if (t.requires_grad(ai)) {
      auto& dst = t.grad_buffer(ai);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < na; ++j) dst[r * na + j] += g[r * n + j];
    }
    if (t.requires_grad(bi)) {
      auto& dst = t.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < nb; ++j) dst[r * nb + j] += g[r * n + na + j];
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> index) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("gather_rows needs a matrix, got " + shape_string(tv.shape()));
  const std::size_t rows = tv.dim(0), d = tv.dim(1);
  Tensor<T> y({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(rows));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(index[i] * d), d,
                y.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const auto ti = table.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return table.tape().record(std::move(y), {table}, [ti, idx, d](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(ti);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dst[idx[i] * d + j] += g[i * d + j];
  });
}

template <typename T>
Var<T> pick(Var<T> x, std::span<const std::size_t> index) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != index.size()) {
    throw std::invalid_argument("pick: " + std::to_string(index.size()) + " indices for " + shape_string(xv.shape()));
  }
  const std::size_t k = xv.dim(1);
  Tensor<T> y({index.size()});
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= k) throw std::out_of_range("pick: index " + std::to_string(index[b]) + " >= " + std::to_string(k));
    y[b] = xv[b * k + index[b]];
  }
  const auto xi = x.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().record(std::move(y), {x}, [xi, idx, k](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(xi);
    for (std::size_t b = 0; b < idx.size(); ++b) dst[b * k + idx[b]] += g[b];
  });
}

template <typename T>
Var<T> gather_cols(Var<T> x, std::span<const int> index, std::size_t n) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || index.size() != xv.dim(0) * n) {
    throw std::invalid_argument("gather_cols: " + std::to_string(index.size()) + " indices for " +
                                shape_string(xv.shape()) + " with " + std::to_string(n) + " columns out");
  }
  const std::size_t rows = xv.dim(0), k = xv.dim(1);
  Tensor<T> y({rows, n});
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t j = 0; j < n; ++j) {
      const int c = index[b * n + j];
      if (c < 0) continue;
      if (static_cast<std::size_t>(c) >= k) {
        throw std::out_of_range("gather_cols: column " + std::to_string(c) + " >= " + std::to_string(k));
      }
      y[b * n + j] = xv[b * k + static_cast<std::size_t>(c)];
    }
  }
  const auto xi = x.id();
  std::vector<int> idx(index.begin(), index.end());
  return x.tape().record(std::move(y), {x}, [xi, idx, rows, n, k](Tape<T>& t, std::size_t, const Tensor<T>& g) {
    auto& dst = t.grad_buffer(xi);
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t j = 0; j < n; ++j) {
        const int c = idx[b * n + j];
        if (c >= 0) dst[b * k + static_cast<std::size_t>(c)] += g[b * n + j];
      }
  });
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, bool train) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw std::invalid_argument("batchnorm on a scalar");
  const std::size_t c = xv.shape().back();
  if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c} ||
      state.running_mean.shape() != Shape{c}) {
    throw std::invalid_argument("batchnorm: parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t rows = xv.size() / c;
  if (rows == 0) throw std::invalid_argument("batchnorm on an empty batch");
  std::vector<T> mu(c, T{0}), inv_std(c, T{0});
  if (train) {
    std::vector<T> var(c, T{0});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    for (auto& m : mu) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xv[r * c + j] - mu[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<T>(rows);
      inv_std[j] = T{1} / std::sqrt(var[j] + state.epsilon);
      const T unbiased = rows > 1 ? var[j] * static_cast<T>(rows) / static_cast<T>(rows - 1) : var[j];
      state.running_mean[j] = (T{1} - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
      state.running_var[j] = (T{1} - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = T{1} / std::sqrt(state.running_var[j] + state.epsilon);
    }
  }
  Tensor<T> xhat(xv.shape());
  Tensor<T> y(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xv[i] - mu[j]) * inv_std[j];
      y[i] = gv[j] * xhat[i] + bv[j];
    }
  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      std::move(y), {x, gamma, beta},
      [xi, gi, bi, rows, c, train, inv_std, xhat = std::move(xhat)](Tape<T>& t, std::size_t, const Tensor<T>& g) {
        const auto& gv = t.value(gi);
        if (t.requires_grad(gi) || t.requires_grad(bi)) {
          std::vector<T> dg(c, T{0}), db(c, T{0});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += g[r * c + j] * xhat[r * c + j];
              db[j] += g[r * c + j];
            }
          if (t.requires_grad(gi))
            for (std::size_t j = 0; j < c; ++j) t.grad_buffer(gi)[j] += dg[j];
          if (t.requires_grad(bi))
            for (std::size_t j = 0; j < c; ++j) t.grad_buffer(bi)[j] += db[j];
        }
        if (!t.requires_grad(xi)) return;
        auto& dst = t.grad_buffer(xi);
        if (!train) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) dst[r * c + j] += g[r * c + j] * gv[j] * inv_std[j];
          return;
        }
        std::vector<T> sum_d(c, T{0}), sum_dx(c, T{0});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[r * c + j] * gv[j];
            sum_d[j] += d;
            sum_dx[j] += d * xhat[r * c + j];
          }
        const T n = static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            const T d = g[i] * gv[j];
            dst[i] += inv_std[j] / n * (n * d - sum_d[j] - xhat[i] * sum_dx[j]);
          }
      });
}

#define SPATIALOPS_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                                      \
  template Var<T> apply(Unary, Var<T>);                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                         \
  template Var<T> sub(Var<T>, Var<T>);                                                         \
  template Var<T> mul(Var<T>, Var<T>);                                                         \
  template Var<T> atan2(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                            \
  template Var<T> add_scalar(Var<T>, T);                                                       \
  template Var<T> add_bias(Var<T>, Var<T>);                                                    \
  template Var<T> matmul(Var<T>, Var<T>);                                                      \
  template Var<T> transpose(Var<T>);                                                           \
  template Var<T> reshape(Var<T>, Shape);                                                      \
  template Var<T> softmax(Var<T>, std::size_t);                                                \
  template Var<T> log_softmax(Var<T>, std::size_t);                                            \
  template Var<T> sum(Var<T>);                                                                 \
  template Var<T> mean(Var<T>);                                                                \
  template Var<T> sum_axis(Var<T>, std::size_t);                                               \
  template Var<T> slice_last(Var<T>, std::size_t, std::size_t);                                \
  template Var<T> concat_last(Var<T>, Var<T>);                                                 \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                           \
  template Var<T> pick(Var<T>, std::span<const std::size_t>);                                  \
  template Var<T> gather_cols(Var<T>, std::span<const int>, std::size_t);                      \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, bool);

SPATIALOPS_INSTANTIATE(float)
SPATIALOPS_INSTANTIATE(double)

}  // namespace spatialops::ad
