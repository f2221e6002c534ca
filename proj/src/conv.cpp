#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "gemm.hpp"
#include "spatialops/autodiff.hpp"

namespace spatialops::ad {

namespace {

struct Geometry {
  std::size_t batch = 0, depth = 0, height = 0, width = 0;
  std::size_t kd = 0, kh = 0, kw = 0;
  std::size_t channels = 0, out_channels = 0;

  std::size_t voxels() const { return depth * height * width; }
  std::size_t taps() const { return kd * kh * kw; }
};

// Even extents put the extra padding voxel after the data.
std::ptrdiff_t pad_before(std::size_t k) { return static_cast<std::ptrdiff_t>((k - 1) / 2); }

// Calls fn(out_voxel, in_voxel, tap) for every in-bounds pair of one example.
template <typename Fn>
void for_each_tap(const Geometry& g, Fn&& fn) {
  const auto pd = pad_before(g.kd), ph = pad_before(g.kh), pw = pad_before(g.kw);
  const auto D = static_cast<std::ptrdiff_t>(g.depth), H = static_cast<std::ptrdiff_t>(g.height),
             W = static_cast<std::ptrdiff_t>(g.width);
  for (std::ptrdiff_t d = 0; d < D; ++d)
    for (std::ptrdiff_t h = 0; h < H; ++h)
      for (std::ptrdiff_t w = 0; w < W; ++w) {
        const auto out = static_cast<std::size_t>((d * H + h) * W + w);
        for (std::size_t a = 0; a < g.kd; ++a) {
          const auto id = d + static_cast<std::ptrdiff_t>(a) - pd;
          if (id < 0 || id >= D) continue;
          for (std::size_t p = 0; p < g.kh; ++p) {
            const auto ih = h + static_cast<std::ptrdiff_t>(p) - ph;
            if (ih < 0 || ih >= H) continue;
            for (std::size_t q = 0; q < g.kw; ++q) {
              const auto iw = w + static_cast<std::ptrdiff_t>(q) - pw;
              if (iw < 0 || iw >= W) continue;
              fn(out, static_cast<std::size_t>((id * H + ih) * W + iw), (a * g.kh + p) * g.kw + q);
            }
          }
        }
      }
}

template <typename T>
Geometry kernel_geometry(const char* op, const Shape& spatial, std::size_t channels, const Tensor<T>& kernel,
                         const Tensor<T>& bias) {
  const auto& ks = kernel.shape();
  if (ks.size() != 5) throw std::invalid_argument(std::string(op) + ": kernel must be rank 5, got " + shape_string(ks));
  if (ks[3] != channels) {
    throw std::invalid_argument(std::string(op) + ": kernel expects " + std::to_string(ks[3]) +
                                " input channels, input has " + std::to_string(channels));
  }
  if (bias.shape() != Shape{ks[4]}) {
    throw std::invalid_argument(std::string(op) + ": bias " + shape_string(bias.shape()) + " for " +
                                std::to_string(ks[4]) + " output channels");
  }
  if (ks[0] == 0 || ks[1] == 0 || ks[2] == 0) throw std::invalid_argument(std::string(op) + ": empty kernel");
  Geometry g;
  g.batch = spatial[0];
  g.depth = spatial[1];
  g.height = spatial[2];
  g.width = spatial[3];
  g.kd = ks[0];
  g.kh = ks[1];
  g.kw = ks[2];
  g.channels = channels;
  g.out_channels = ks[4];
  return g;
}

template <typename T>
void add_bias_rows(T* out, const T* bias, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < n; ++o) out[r * n + o] = bias[o];
}

}  // namespace

namespace {

// cols[v, tap * C + c] = input voxel feeding output voxel v through `tap`, or 0.
template <typename T>
void im2col(const Geometry& g, const T* x, T* cols) {
  const std::size_t C = g.channels, row = g.taps() * C;
  std::fill(cols, cols + g.voxels() * row, T{0});
  for_each_tap(g, [&](std::size_t ov, std::size_t iv, std::size_t tap) {
    std::copy_n(x + iv * C, C, cols + ov * row + tap * C);
  });
}

template <typename T>
void col2im_add(const Geometry& g, const T* cols, T* x) {
  const std::size_t C = g.channels, row = g.taps() * C;
  for_each_tap(g, [&](std::size_t ov, std::size_t iv, std::size_t tap) {
    const T* src = cols + ov * row + tap * C;
    T* dst = x + iv * C;
    for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
  });
}

}  // namespace

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias) {
  const auto& xs = input.value().shape();
  if (xs.size() != 5) throw std::invalid_argument("conv3d: input must be [B, D, H, W, C], got " + shape_string(xs));
  const Geometry g = kernel_geometry("conv3d", xs, xs[4], kernel.value(), bias.value());
  const std::size_t C = g.channels, Co = g.out_channels, V = g.voxels(), row = g.taps() * C;

  Tensor<T> y({g.batch, g.depth, g.height, g.width, Co});
  const T* x = input.value().data().data();
  const T* k = kernel.value().data().data();
  T* out = y.data().data();
  add_bias_rows(out, bias.value().data().data(), g.batch * V, Co);
  // The kernel [kd, kh, kw, C, Cout] is already the [taps * C, Cout] matrix.
  std::vector<T> cols(V * row);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, x + b * V * C, cols.data());
    detail::gemm(cols.data(), k, out + b * V * Co, V, row, Co);
  }

  const auto xi = input.id(), ki = kernel.id(), bi = bias.id();
  return input.tape().record(std::move(y), {input, kernel, bias}, [xi, ki, bi, g](Tape<T>& t, std::size_t,
                                                                                   const Tensor<T>& grad) {
    const std::size_t C = g.channels, Co = g.out_channels, V = g.voxels(), row = g.taps() * C;
    const T* gd = grad.data().data();
    if (t.requires_grad(bi)) {
      T* gb = t.grad_buffer(bi).data().data();
      for (std::size_t r = 0; r < g.batch * V; ++r)
        for (std::size_t o = 0; o < Co; ++o) gb[o] += gd[r * Co + o];
    }
    const bool need_x = t.requires_grad(xi), need_k = t.requires_grad(ki);
    if (!need_x && !need_k) return;
    const T* x = t.value(xi).data().data();
    const T* k = t.value(ki).data().data();
    T* gx = need_x ? t.grad_buffer(xi).data().data() : nullptr;
    T* gk = need_k ? t.grad_buffer(ki).data().data() : nullptr;
    std::vector<T> cols(need_k ? V * row : 0), dcols(need_x ? V * row : 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* gb = gd + b * V * Co;
      if (need_k) {
        im2col(g, x + b * V * C, cols.data());
        detail::gemm_tn(cols.data(), gb, gk, row, V, Co);
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), T{0});
        detail::gemm_nt(gb, k, dcols.data(), V, Co, row);
        col2im_add(g, dcols.data(), gx + b * V * C);
      }
    }
  });
}

template <typename T>
Var<T> outer_broadcast(Var<T> field, Var<T> vec) {
  const auto& fs = field.value().shape();
  const auto& vs = vec.value().shape();
  if (fs.size() != 4 || vs.size() != 2 || vs[0] != fs[0]) {
    throw std::invalid_argument("outer_broadcast: field " + shape_string(fs) + " and vector " + shape_string(vs));
  }
  const std::size_t B = fs[0], V = fs[1] * fs[2] * fs[3], C = vs[1];
  Tensor<T> y({fs[0], fs[1], fs[2], fs[3], C});
  const auto& f = field.value();
  const auto& v = vec.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t c = 0; c < C; ++c) y[(b * V + i) * C + c] = f[b * V + i] * v[b * C + c];
  const auto fi = field.id(), vi = vec.id();
  return field.tape().record(std::move(y), {field, vec}, [fi, vi, B, V, C](Tape<T>& t, std::size_t,
                                                                           const Tensor<T>& g) {
    const auto& f = t.value(fi);
    const auto& v = t.value(vi);
    const bool need_f = t.requires_grad(fi), need_v = t.requires_grad(vi);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < V; ++i)
        for (std::size_t c = 0; c < C; ++c) {
          const T gv = g[(b * V + i) * C + c];
          if (need_f) t.grad_buffer(fi)[b * V + i] += gv * v[b * C + c];
          if (need_v) t.grad_buffer(vi)[b * C + c] += gv * f[b * V + i];
        }
  });
}

template <typename T>
Var<T> conv3d_rank1(Var<T> field, Var<T> vec, Var<T> kernel, Var<T> bias) {
  const auto& fs = field.value().shape();
  const auto& vs = vec.value().shape();
  if (fs.size() != 4 || vs.size() != 2 || vs[0] != fs[0]) {
    throw std::invalid_argument("conv3d_rank1: field " + shape_string(fs) + " and vector " + shape_string(vs));
  }
  const Geometry g = kernel_geometry("conv3d_rank1", fs, vs[1], kernel.value(), bias.value());
  const std::size_t C = g.channels, Co = g.out_channels, V = g.voxels(), taps = g.taps();

  // kv[b, tap, o] = sum_c kernel[tap, c, o] * vec[b, c]
  std::vector<T> kv(g.batch * taps * Co, T{0});
  {
    const T* k = kernel.value().data().data();
    const T* v = vec.value().data().data();
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t tap = 0; tap < taps; ++tap) {
        T* dst = kv.data() + (b * taps + tap) * Co;
        for (std::size_t c = 0; c < C; ++c) {
          const T vc = v[b * C + c];
          const T* krow = k + (tap * C + c) * Co;
          for (std::size_t o = 0; o < Co; ++o) dst[o] += vc * krow[o];
        }
      }
  }

  Tensor<T> y({g.batch, g.depth, g.height, g.width, Co});
  T* out = y.data().data();
  add_bias_rows(out, bias.value().data().data(), g.batch * V, Co);
  const T* f = field.value().data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* fb = f + b * V;
    const T* kvb = kv.data() + b * taps * Co;
    T* ob = out + b * V * Co;
    for_each_tap(g, [&](std::size_t ov, std::size_t iv, std::size_t tap) {
      const T av = fb[iv];
      if (av == T{0}) return;
      const T* krow = kvb + tap * Co;
      T* orow = ob + ov * Co;
      for (std::size_t o = 0; o < Co; ++o) orow[o] += av * krow[o];
    });
  }

  const auto fi = field.id(), vi = vec.id(), ki = kernel.id(), bi = bias.id();
  return field.tape().record(
      std::move(y), {field, vec, kernel, bias},
      [fi, vi, ki, bi, g, kv = std::move(kv)](Tape<T>& t, std::size_t, const Tensor<T>& grad) {
        const std::size_t C = g.channels, Co = g.out_channels, V = g.voxels(), taps = g.taps();
        const T* gd = grad.data().data();
        if (t.requires_grad(bi)) {
          T* gb = t.grad_buffer(bi).data().data();
          for (std::size_t r = 0; r < g.batch * V; ++r)
            for (std::size_t o = 0; o < Co; ++o) gb[o] += gd[r * Co + o];
        }
        const bool need_f = t.requires_grad(fi);
        const bool need_kv = t.requires_grad(vi) || t.requires_grad(ki);
        const T* f = t.value(fi).data().data();
        std::vector<T> gkv(need_kv ? g.batch * taps * Co : 0, T{0});
        T* gf = need_f ? t.grad_buffer(fi).data().data() : nullptr;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* fb = f + b * V;
          const T* kvb = kv.data() + b * taps * Co;
          const T* gb = gd + b * V * Co;
          for_each_tap(g, [&](std::size_t ov, std::size_t iv, std::size_t tap) {
            const T* grow = gb + ov * Co;
            if (need_f) {
              const T* krow = kvb + tap * Co;
              T acc{0};
              for (std::size_t o = 0; o < Co; ++o) acc += krow[o] * grow[o];
              gf[b * V + iv] += acc;
            }
            if (need_kv) {
              const T av = fb[iv];
              if (av == T{0}) return;
              T* dst = gkv.data() + (b * taps + tap) * Co;
              for (std::size_t o = 0; o < Co; ++o) dst[o] += av * grow[o];
            }
          });
        }
        if (!need_kv) return;
        const T* k = t.value(ki).data().data();
        const T* v = t.value(vi).data().data();
        T* gk = t.requires_grad(ki) ? t.grad_buffer(ki).data().data() : nullptr;
        T* gv = t.requires_grad(vi) ? t.grad_buffer(vi).data().data() : nullptr;
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t tap = 0; tap < taps; ++tap) {
            const T* src = gkv.data() + (b * taps + tap) * Co;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t row = (tap * C + c) * Co;
              if (gk) {
                const T vc = v[b * C + c];
                for (std::size_t o = 0; o < Co; ++o) gk[row + o] += vc * src[o];
              }
              if (gv) {
                T acc{0};
                for (std::size_t o = 0; o < Co; ++o) acc += k[row + o] * src[o];
                gv[b * C + c] += acc;
              }
            }
          }
      });
}

template Var<float> conv3d(Var<float>, Var<float>, Var<float>);
template Var<double> conv3d(Var<double>, Var<double>, Var<double>);
template Var<float> outer_broadcast(Var<float>, Var<float>);
template Var<double> outer_broadcast(Var<double>, Var<double>);
template Var<float> conv3d_rank1(Var<float>, Var<float>, Var<float>, Var<float>);
template Var<double> conv3d_rank1(Var<double>, Var<double>, Var<double>, Var<double>);

}  // namespace spatialops::ad
