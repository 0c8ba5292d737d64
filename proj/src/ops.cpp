#include "lcye/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lcye::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

void require_rank(const Var& a, int r, const char* op) {
  require(a.value().rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                     shape_str(a.shape()));
}

template <class F>
Var unary(const Var& a, F forward, std::function<double(double x, double y)> deriv) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, deriv](const Tensor& g) {
      auto me = self.lock();
      Tensor* ga = grad_slot(a);
      if (!ga || !me) return;
      const auto& x = a.value();
      const auto& y = me->value;
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(x[i], y[i]);
    };
  }
  return res;
}

struct ConvGeom {
  int b, ci, h, w, co, k, stride, pad, ho, wo;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* x) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = xc + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Leading-axis count and per-channel inner size for axis-1 reductions.
struct ChannelLayout {
  int outer, channels, inner;
};

ChannelLayout channel_layout(const Tensor& t) {
  require(t.rank() >= 2, "expected rank >= 2, got " + shape_str(t.shape()));
  int inner = 1;
  for (int i = 2; i < t.rank(); ++i) inner *= t.dim(i);
  return {t.dim(0), t.dim(1), inner};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

Var add_batch_broadcast(const Var& x, const Var& p) {
  require(p.value().rank() == x.value().rank() && p.dim(0) == 1, "add_batch_broadcast: p must have leading dim 1");
  for (int i = 1; i < x.value().rank(); ++i) {
    require(p.dim(i) == x.dim(i), "add_batch_broadcast: " + shape_str(p.shape()) + " vs " + shape_str(x.shape()));
  }
  const std::size_t per = p.value().size();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + p.value()[i % per];
  return make_op(std::move(out), {x, p}, [x, p, per](const Tensor& g) {
    if (Tensor* gx = grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gp = grad_slot(p))
      for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i % per] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Tensor* gb = grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / b.value()[i];
    if (Tensor* gb = grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bv = b.value()[i];
        (*gb)[i] -= g[i] * a.value()[i] / (bv * bv);
      }
  });
}

Var mul_channel_broadcast(const Var& mask, const Var& x) {
  require_rank(mask, 4, "mul_channel_broadcast");
  require_rank(x, 4, "mul_channel_broadcast");
  require(mask.dim(1) == 1 && mask.dim(0) == x.dim(0) && mask.dim(2) == x.dim(2) && mask.dim(3) == x.dim(3),
          "mul_channel_broadcast: mask " + shape_str(mask.shape()) + " vs " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) {
        const std::size_t xi = (static_cast<std::size_t>(b) * C + c) * HW + i;
        out[xi] = mask.value()[static_cast<std::size_t>(b) * HW + i] * x.value()[xi];
      }
  return make_op(std::move(out), {mask, x}, [mask, x, B, C, HW](const Tensor& g) {
    Tensor* gm = grad_slot(mask);
    Tensor* gx = grad_slot(x);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i) {
          const std::size_t xi = (static_cast<std::size_t>(b) * C + c) * HW + i;
          const std::size_t mi = static_cast<std::size_t>(b) * HW + i;
          if (gm) (*gm)[mi] += g[xi] * x.value()[xi];
          if (gx) (*gx)[xi] += g[xi] * mask.value()[mi];
        }
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  require(a.shape() == c.shape(), "mul_const: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return make_op(std::move(out), {a}, [a, c](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c[i];
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var pow_scalar(const Var& a, double p) {
  return unary(
      a, [p](double x) { return x <= 0.0 ? 0.0 : std::pow(x, p); },
      [p](double x, double) { return x <= 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::isnan(x) ? x : std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor({1}, s), {a}, [a](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (auto& v : ga->values()) v += g[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean_per_sample(const Var& a) {
  require(a.value().rank() >= 1, "mean_per_sample: rank 0");
  const int B = a.dim(0);
  const std::size_t per = a.value().size() / static_cast<std::size_t>(B);
  Tensor out({B});
  for (int b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += a.value()[b * per + i];
    out[b] = s / static_cast<double>(per);
  }
  return make_op(std::move(out), {a}, [a, B, per](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < per; ++i) (*ga)[b * per + i] += g[b] / static_cast<double>(per);
  });
}

Var standardize_per_sample(const Var& a, double eps) {
  require(a.value().rank() >= 1, "standardize_per_sample: rank 0");
  const int B = a.dim(0);
  const std::size_t per = a.value().size() / static_cast<std::size_t>(B);
  require(per > 0, "standardize_per_sample: empty sample");
  Tensor out(a.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const double* x = a.value().data() + b * per;
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < per; ++i) mu += x[i];
    mu /= static_cast<double>(per);
    for (std::size_t i = 0; i < per; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(per);
    inv_std[static_cast<std::size_t>(b)] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] = (x[i] - mu) * inv_std[static_cast<std::size_t>(b)];
  }
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, B, per, inv_std](const Tensor& g) {
      auto me = self.lock();
      Tensor* ga = grad_slot(a);
      if (!ga || !me) return;
      const Tensor& y = me->value;
      for (int b = 0; b < B; ++b) {
        double gm = 0.0, gy = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
          gm += g[b * per + i];
          gy += g[b * per + i] * y[b * per + i];
        }
        gm /= static_cast<double>(per);
        gy /= static_cast<double>(per);
        for (std::size_t i = 0; i < per; ++i) {
          (*ga)[b * per + i] += (g[b * per + i] - gm - y[b * per + i] * gy) * inv_std[static_cast<std::size_t>(b)];
        }
      }
    };
  }
  return res;
}

// ---------------------------------------------------------------- spatial

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  require(weight.dim(1) == x.dim(1), "conv2d: input channels " + std::to_string(x.dim(1)) +
                                         " do not match weight " + shape_str(weight.shape()));
  require(weight.dim(2) == weight.dim(3), "conv2d: square kernels only");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: output would be empty for input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(g.co), "conv2d: bias size");

  const int K = g.ci * g.k * g.k;
  const int HWo = g.ho * g.wo;
  const bool pointwise = g.k == 1 && stride == 1 && pad == 0;
  Tensor out({g.b, g.co, g.ho, g.wo});
  std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(K) * HWo);
  CMapMat W(weight.value().data(), g.co, K);
  for (int b = 0; b < g.b; ++b) {
    const double* xb = x.value().data() + static_cast<std::size_t>(b) * g.ci * g.h * g.w;
    const double* colp = xb;
    if (!pointwise) {
      im2col(xb, g, cols.data());
      colp = cols.data();
    }
    MapMat Y(out.data() + static_cast<std::size_t>(b) * g.co * HWo, g.co, HWo);
    Y.noalias() = W * CMapMat(colp, K, HWo);
    if (has_bias)
      for (int c = 0; c < g.co; ++c) Y.row(c).array() += bias.value()[c];
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op(std::move(out), inputs, [x, weight, bias, g, K, HWo, pointwise, has_bias](const Tensor& gy) {
    Tensor* gx = grad_slot(x);
    Tensor* gw = grad_slot(weight);
    Tensor* gb = has_bias ? grad_slot(bias) : nullptr;
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(K) * HWo);
    std::vector<double> dcols(pointwise ? 0 : static_cast<std::size_t>(K) * HWo);
    CMapMat W(weight.value().data(), g.co, K);
    for (int b = 0; b < g.b; ++b) {
      CMapMat GY(gy.data() + static_cast<std::size_t>(b) * g.co * HWo, g.co, HWo);
      const std::size_t xoff = static_cast<std::size_t>(b) * g.ci * g.h * g.w;
      if (gw) {
        const double* colp = x.value().data() + xoff;
        if (!pointwise) {
          im2col(colp, g, cols.data());
          colp = cols.data();
        }
        MapMat(gw->data(), g.co, K).noalias() += GY * CMapMat(colp, K, HWo).transpose();
      }
      if (gb) {
        // Plain loop: Eigen's vectorized sum depends on buffer alignment, which breaks run-to-run determinism.
        const double* gyb = gy.data() + static_cast<std::size_t>(b) * g.co * HWo;
        for (int c = 0; c < g.co; ++c) {
          double acc = 0.0;
          for (int i = 0; i < HWo; ++i) acc += gyb[static_cast<std::size_t>(c) * HWo + i];
          (*gb)[c] += acc;
        }
      }
      if (gx) {
        if (pointwise) {
          MapMat(gx->data() + xoff, K, HWo).noalias() += W.transpose() * GY;
        } else {
          MapMat(dcols.data(), K, HWo).noalias() = W.transpose() * GY;
          col2im(dcols.data(), g, gx->data() + xoff);
        }
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  Tensor out({B, C, 2 * H, 2 * W});
  const double* src = x.value().data();
  double* dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* sp = src + p * H * W;
    double* dp = dst + p * 4 * H * W;
    for (int y = 0; y < 2 * H; ++y) {
      const double* row = sp + (y / 2) * W;
      double* drow = dp + static_cast<std::size_t>(y) * 2 * W;
      for (int xx = 0; xx < 2 * W; ++xx) drow[xx] = row[xx / 2];
    }
  }
  return make_op(std::move(out), {x}, [x, planes, H, W](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (std::size_t p = 0; p < planes; ++p) {
      double* gp = gx->data() + p * H * W;
      const double* sp = g.data() + p * 4 * H * W;
      for (int y = 0; y < 2 * H; ++y) {
        double* row = gp + (y / 2) * W;
        const double* srow = sp + static_cast<std::size_t>(y) * 2 * W;
        for (int xx = 0; xx < 2 * W; ++xx) row[xx / 2] += srow[xx];
      }
    }
  });
}

namespace {
struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = std::max(0.0, scale * (o + 0.5) - 0.5);
    int i0 = std::min(static_cast<int>(src), in - 1);
    int i1 = i0 < in - 1 ? i0 + 1 : i0;
    double l1 = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}
}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 4, "resize_bilinear");
  require(out_h > 0 && out_w > 0, "resize_bilinear: empty output");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  Tensor out({B, C, out_h, out_w});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        for (int xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[xx];
          const auto& v = x.value();
          out.at(n, c, y, xx) = a.w0 * (b.w0 * v.at(n, c, a.i0, b.i0) + b.w1 * v.at(n, c, a.i0, b.i1)) +
                                a.w1 * (b.w0 * v.at(n, c, a.i1, b.i0) + b.w1 * v.at(n, c, a.i1, b.i1));
        }
      }
  return make_op(std::move(out), {x}, [x, B, C, out_h, out_w, ty, tx](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
          const Tap& a = ty[y];
          for (int xx = 0; xx < out_w; ++xx) {
            const Tap& b = tx[xx];
            const double gv = g.at(n, c, y, xx);
            gx->at(n, c, a.i0, b.i0) += gv * a.w0 * b.w0;
            gx->at(n, c, a.i0, b.i1) += gv * a.w0 * b.w1;
            gx->at(n, c, a.i1, b.i0) += gv * a.w1 * b.w0;
            gx->at(n, c, a.i1, b.i1) += gv * a.w1 * b.w1;
          }
        }
  });
}

Var crop(const Var& x, int top, int left, int h, int w) {
  require_rank(x, 4, "crop");
  require(top >= 0 && left >= 0 && h > 0 && w > 0 && top + h <= x.dim(2) && left + w <= x.dim(3),
          "crop: window out of bounds for " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1);
  Tensor out({B, C, h, w});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, top + y, left + xx);
  return make_op(std::move(out), {x}, [x, B, C, top, left, h, w](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) gx->at(n, c, top + y, left + xx) += g.at(n, c, y, xx);
  });
}

Var avg_pool2x(const Var& x) {
  require_rank(x, 4, "avg_pool2x");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
  require(H > 0 && W > 0, "avg_pool2x: input too small " + shape_str(x.shape()));
  Tensor out({B, C, H, W});
  const auto& v = x.value();
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at(n, c, y, xx) = 0.25 * (v.at(n, c, 2 * y, 2 * xx) + v.at(n, c, 2 * y, 2 * xx + 1) +
                                        v.at(n, c, 2 * y + 1, 2 * xx) + v.at(n, c, 2 * y + 1, 2 * xx + 1));
  return make_op(std::move(out), {x}, [x, B, C, H, W](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            const double q = 0.25 * g.at(n, c, y, xx);
            gx->at(n, c, 2 * y, 2 * xx) += q;
            gx->at(n, c, 2 * y, 2 * xx + 1) += q;
            gx->at(n, c, 2 * y + 1, 2 * xx) += q;
            gx->at(n, c, 2 * y + 1, 2 * xx + 1) += q;
          }
  });
}

Var filter2d_valid(const Var& x, const Tensor& kernel) {
  require_rank(x, 4, "filter2d_valid");
  require(kernel.rank() == 2, "filter2d_valid: kernel must be rank 2");
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H - kh + 1, Wo = W - kw + 1;
  require(Ho > 0 && Wo > 0, "filter2d_valid: input " + shape_str(x.shape()) + " smaller than kernel");
  Tensor out({B, C, Ho, Wo});
  const auto& v = x.value();
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          double s = 0.0;
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) s += kernel.at(i, j) * v.at(n, c, y + i, xx + j);
          out.at(n, c, y, xx) = s;
        }
  return make_op(std::move(out), {x}, [x, kernel, B, C, Ho, Wo, kh, kw](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
          for (int xx = 0; xx < Wo; ++xx) {
            const double gv = g.at(n, c, y, xx);
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) gx->at(n, c, y + i, xx + j) += gv * kernel.at(i, j);
          }
  });
}

Var global_max_pool(const Var& x) {
  require_rank(x, 4, "global_max_pool");
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, C});
  std::vector<std::size_t> arg(static_cast<std::size_t>(B) * C);
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
      std::size_t best = base;
      for (int i = 1; i < HW; ++i)
        if (x.value()[base + i] > x.value()[best]) best = base + i;
      arg[static_cast<std::size_t>(n) * C + c] = best;
      out.at(n, c) = x.value()[best];
    }
  return make_op(std::move(out), {x}, [x, arg](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (std::size_t i = 0; i < arg.size(); ++i) (*gx)[arg[i]] += g[i];
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out({B, C});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
      double s = 0.0;
      for (int i = 0; i < HW; ++i) s += x.value()[base + i];
      out.at(n, c) = s / HW;
    }
  return make_op(std::move(out), {x}, [x, B, C, HW](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) (*gx)[base + i] += g.at(n, c) / HW;
      }
  });
}

// ---------------------------------------------------------------- batch norm

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean,
                     Tensor* batch_var) {
  const auto L = channel_layout(x.value());
  require(gamma.value().size() == static_cast<std::size_t>(L.channels) &&
              beta.value().size() == static_cast<std::size_t>(L.channels),
          "batch_norm: parameter size mismatch");
  const double m = static_cast<double>(L.outer) * L.inner;
  require(m > 1, "batch_norm_train: needs more than one value per channel");
  const auto& v = x.value();
  auto idx = [&](int o, int c, int i) { return (static_cast<std::size_t>(o) * L.channels + c) * L.inner + i; };

  Tensor mu({L.channels}), inv_std({L.channels}), xhat(x.shape()), out(x.shape());
  Tensor var_unbiased({L.channels});
  for (int c = 0; c < L.channels; ++c) {
    double s = 0.0;
    for (int o = 0; o < L.outer; ++o)
      for (int i = 0; i < L.inner; ++i) s += v[idx(o, c, i)];
    const double mean_c = s / m;
    double ss = 0.0;
    for (int o = 0; o < L.outer; ++o)
      for (int i = 0; i < L.inner; ++i) {
        const double d = v[idx(o, c, i)] - mean_c;
        ss += d * d;
      }
    const double var_c = ss / m;
    mu[c] = mean_c;
    var_unbiased[c] = ss / (m - 1.0);
    inv_std[c] = 1.0 / std::sqrt(var_c + eps);
    for (int o = 0; o < L.outer; ++o)
      for (int i = 0; i < L.inner; ++i) {
        const std::size_t k = idx(o, c, i);
        xhat[k] = (v[k] - mean_c) * inv_std[c];
        out[k] = gamma.value()[c] * xhat[k] + beta.value()[c];
      }
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var_unbiased;

  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, L, m, xhat, inv_std](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    Tensor* gg = grad_slot(gamma);
    Tensor* gbeta = grad_slot(beta);
    auto idx = [&](int o, int c, int i) { return (static_cast<std::size_t>(o) * L.channels + c) * L.inner + i; };
    for (int c = 0; c < L.channels; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int o = 0; o < L.outer; ++o)
        for (int i = 0; i < L.inner; ++i) {
          const std::size_t k = idx(o, c, i);
          sum_g += g[k];
          sum_gx += g[k] * xhat[k];
        }
      if (gg) (*gg)[c] += sum_gx;
      if (gbeta) (*gbeta)[c] += sum_g;
      if (gx) {
        const double gam = gamma.value()[c];
        for (int o = 0; o < L.outer; ++o)
          for (int i = 0; i < L.inner; ++i) {
            const std::size_t k = idx(o, c, i);
            (*gx)[k] += gam * inv_std[c] / m * (m * g[k] - sum_g - xhat[k] * sum_gx);
          }
      }
    }
  });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps) {
  const auto L = channel_layout(x.value());
  require(mean.size() == static_cast<std::size_t>(L.channels) && var.size() == mean.size(),
          "batch_norm_eval: running statistics size mismatch");
  Tensor out(x.shape());
  Tensor inv_std({L.channels});
  for (int c = 0; c < L.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  const auto& v = x.value();
  for (int o = 0; o < L.outer; ++o)
    for (int c = 0; c < L.channels; ++c)
      for (int i = 0; i < L.inner; ++i) {
        const std::size_t k = (static_cast<std::size_t>(o) * L.channels + c) * L.inner + i;
        out[k] = gamma.value()[c] * (v[k] - mean[c]) * inv_std[c] + beta.value()[c];
      }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, L, mean, inv_std](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    Tensor* gg = grad_slot(gamma);
    Tensor* gbeta = grad_slot(beta);
    for (int o = 0; o < L.outer; ++o)
      for (int c = 0; c < L.channels; ++c)
        for (int i = 0; i < L.inner; ++i) {
          const std::size_t k = (static_cast<std::size_t>(o) * L.channels + c) * L.inner + i;
          if (gx) (*gx)[k] += g[k] * gamma.value()[c] * inv_std[c];
          if (gg) (*gg)[c] += g[k] * (x.value()[k] - mean[c]) * inv_std[c];
          if (gbeta) (*gbeta)[c] += g[k];
        }
  });
}

// ---------------------------------------------------------------- matrices

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  require(weight.dim(1) == x.dim(1), "linear: input features " + std::to_string(x.dim(1)) + " vs weight " +
                                         shape_str(weight.shape()));
  Var y = matmul(x, weight, false, true);
  if (!bias.defined()) return y;
  const int B = y.dim(0), O = y.dim(1);
  require(bias.value().size() == static_cast<std::size_t>(O), "linear: bias size");
  Tensor out = y.value();
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) out.at(b, o) += bias.value()[o];
  return make_op(std::move(out), {y, bias}, [y, bias, B, O](const Tensor& g) {
    if (Tensor* gy = grad_slot(y))
      for (std::size_t i = 0; i < g.size(); ++i) (*gy)[i] += g[i];
    if (Tensor* gb = grad_slot(bias))
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) (*gb)[o] += g.at(b, o);
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const int m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
  const int k2 = transpose_b ? bc : br, n = transpose_b ? br : bc;
  require(k == k2, "matmul: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  CMapMat A(a.value().data(), ar, ac), Bm(b.value().data(), br, bc);
  MapMat C(out.data(), m, n);
  if (!transpose_a && !transpose_b) C.noalias() = A * Bm;
  else if (!transpose_a && transpose_b) C.noalias() = A * Bm.transpose();
  else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * Bm;
  else C.noalias() = A.transpose() * Bm.transpose();

  return make_op(std::move(out), {a, b}, [a, b, transpose_a, transpose_b, ar, ac, br, bc, m, n](const Tensor& g) {
    CMapMat G(g.data(), m, n);
    CMapMat A(a.value().data(), ar, ac), Bm(b.value().data(), br, bc);
    if (Tensor* ga = grad_slot(a)) {
      MapMat GA(ga->data(), ar, ac);
      // C = op(A) op(B)  =>  d op(A) = G op(B)^T
      if (!transpose_a && !transpose_b) GA.noalias() += G * Bm.transpose();
      else if (!transpose_a && transpose_b) GA.noalias() += G * Bm;
      else if (transpose_a && !transpose_b) GA.noalias() += Bm * G.transpose();
      else GA.noalias() += Bm.transpose() * G.transpose();
    }
    if (Tensor* gb = grad_slot(b)) {
      MapMat GB(gb->data(), br, bc);
      // d op(B) = op(A)^T G
      if (!transpose_a && !transpose_b) GB.noalias() += A.transpose() * G;
      else if (!transpose_a && transpose_b) GB.noalias() += G.transpose() * A;
      else if (transpose_a && !transpose_b) GB.noalias() += A * G;
      else GB.noalias() += G.transpose() * A.transpose();
    }
  });
}

Var row_normalize(const Var& a, double eps) {
  require_rank(a, 2, "row_normalize");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out(a.shape());
  std::vector<double> norms(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += a.value().at(r, c) * a.value().at(r, c);
    const double nrm = std::sqrt(s);
    norms[static_cast<std::size_t>(r)] = nrm;
    if (nrm >= eps)
      for (int c = 0; c < C; ++c) out.at(r, c) = a.value().at(r, c) / nrm;
  }
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, norms, R, C, eps](const Tensor& g) {
      Tensor* ga = grad_slot(a);
      auto me = self.lock();
      if (!ga || !me) return;
      const Tensor& y = me->value;
      for (int r = 0; r < R; ++r) {
        const double nrm = norms[static_cast<std::size_t>(r)];
        if (nrm < eps) continue;
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += g.at(r, c) * y.at(r, c);
        for (int c = 0; c < C; ++c) ga->at(r, c) += (g.at(r, c) - y.at(r, c) * dot) / nrm;
      }
    };
  }
  return res;
}

Var softmax_rows(const Var& a) {
  require_rank(a, 2, "softmax_rows");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out(a.shape());
  for (int r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, a.value().at(r, c));
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      out.at(r, c) = std::exp(a.value().at(r, c) - mx);
      s += out.at(r, c);
    }
    for (int c = 0; c < C; ++c) out.at(r, c) /= s;
  }
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, R, C](const Tensor& g) {
      Tensor* ga = grad_slot(a);
      auto me = self.lock();
      if (!ga || !me) return;
      const Tensor& y = me->value;
      for (int r = 0; r < R; ++r) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += g.at(r, c) * y.at(r, c);
        for (int c = 0; c < C; ++c) ga->at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
      }
    };
  }
  return res;
}

Var log_softmax_rows(const Var& a) {
  require_rank(a, 2, "log_softmax_rows");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out(a.shape());
  for (int r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, a.value().at(r, c));
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(a.value().at(r, c) - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < C; ++c) out.at(r, c) = a.value().at(r, c) - lse;
  }
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, R, C](const Tensor& g) {
      Tensor* ga = grad_slot(a);
      auto me = self.lock();
      if (!ga || !me) return;
      const Tensor& y = me->value;
      for (int r = 0; r < R; ++r) {
        double gs = 0.0;
        for (int c = 0; c < C; ++c) gs += g.at(r, c);
        for (int c = 0; c < C; ++c) ga->at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gs;
      }
    };
  }
  return res;
}

Var rows_div_sum(const Var& a) {
  require_rank(a, 2, "rows_div_sum");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out(a.shape());
  std::vector<double> sums(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += a.value().at(r, c);
    require(s != 0.0, "rows_div_sum: zero row sum");
    sums[static_cast<std::size_t>(r)] = s;
    for (int c = 0; c < C; ++c) out.at(r, c) = a.value().at(r, c) / s;
  }
  Var res = make_op(std::move(out), {a}, nullptr);
  if (res.requires_grad()) {
    std::weak_ptr<Node> self = res.node();
    res.node()->backward_fn = [a, self, sums, R, C](const Tensor& g) {
      Tensor* ga = grad_slot(a);
      auto me = self.lock();
      if (!ga || !me) return;
      const Tensor& y = me->value;
      for (int r = 0; r < R; ++r) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += g.at(r, c) * y.at(r, c);
        for (int c = 0; c < C; ++c) ga->at(r, c) += (g.at(r, c) - dot) / sums[static_cast<std::size_t>(r)];
      }
    };
  }
  return res;
}

Var pairwise_sq_dist(const Var& e) {
  require_rank(e, 2, "pairwise_sq_dist");
  const int B = e.dim(0), D = e.dim(1);
  Tensor out({B, B});
  for (int i = 0; i < B; ++i)
    for (int j = i + 1; j < B; ++j) {
      double s = 0.0;
      for (int d = 0; d < D; ++d) {
        const double diff = e.value().at(i, d) - e.value().at(j, d);
        s += diff * diff;
      }
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  return make_op(std::move(out), {e}, [e, B, D](const Tensor& g) {
    Tensor* ge = grad_slot(e);
    if (!ge) return;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j) {
        if (i == j) continue;
        const double w = 2.0 * g.at(i, j);
        if (w == 0.0) continue;
        for (int d = 0; d < D; ++d) {
          const double diff = e.value().at(i, d) - e.value().at(j, d);
          ge->at(i, d) += w * diff;
          ge->at(j, d) -= w * diff;
        }
      }
  });
}

Var gather(const Var& a, const std::vector<std::size_t>& flat_index) {
  Tensor out({static_cast<int>(flat_index.size())});
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    require(flat_index[i] < a.value().size(), "gather: index out of range");
    out[i] = a.value()[flat_index[i]];
  }
  return make_op(std::move(out), {a}, [a, flat_index](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < flat_index.size(); ++i) (*ga)[flat_index[i]] += g[i];
  });
}

// ---------------------------------------------------------------- layout

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](const Tensor& g) {
    if (Tensor* ga = grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var concat1(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat1: no inputs");
  const auto& first = parts.front().value();
  require(first.rank() >= 2, "concat1: rank >= 2 required");
  const int B = first.dim(0);
  const std::size_t inner = first.size() / (static_cast<std::size_t>(B) * first.dim(1));
  int total = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    require(v.rank() == first.rank() && v.dim(0) == B, "concat1: leading dims differ");
    for (int i = 2; i < v.rank(); ++i) require(v.dim(i) == first.dim(i), "concat1: trailing dims differ");
    total += v.dim(1);
  }
  Shape s = first.shape();
  s[1] = total;
  Tensor out(s);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int b = 0; b < B; ++b) {
      const double* src = p.value().data() + static_cast<std::size_t>(b) * c * inner;
      double* dst = out.data() + (static_cast<std::size_t>(b) * total + off) * inner;
      std::copy(src, src + static_cast<std::size_t>(c) * inner, dst);
    }
    offsets.push_back(off);
    off += c;
  }
  return make_op(std::move(out), parts, [parts, offsets, B, total, inner](const Tensor& g) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      Tensor* gp = grad_slot(parts[k]);
      if (!gp) continue;
      const int c = parts[k].dim(1);
      for (int b = 0; b < B; ++b) {
        const double* src = g.data() + (static_cast<std::size_t>(b) * total + offsets[k]) * inner;
        double* dst = gp->data() + static_cast<std::size_t>(b) * c * inner;
        for (std::size_t i = 0; i < static_cast<std::size_t>(c) * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var to_rows(const Var& x) {
  require_rank(x, 4, "to_rows");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({B * H * W, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out.at((b * H + h) * W + w, c) = x.value().at(b, c, h, w);
  return make_op(std::move(out), {x}, [x, B, C, H, W](const Tensor& g) {
    Tensor* gx = grad_slot(x);
    if (!gx) return;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) gx->at(b, c, h, w) += g.at((b * H + h) * W + w, c);
  });
}

Var from_rows(const Var& rows, int batch, int h, int w) {
  require_rank(rows, 2, "from_rows");
  require(rows.dim(0) == batch * h * w, "from_rows: row count does not match batch*h*w");
  const int C = rows.dim(1);
  Tensor out({batch, C, h, w});
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(b, c, y, x) = rows.value().at((b * h + y) * w + x, c);
  return make_op(std::move(out), {rows}, [rows, batch, C, h, w](const Tensor& g) {
    Tensor* gr = grad_slot(rows);
    if (!gr) return;
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) gr->at((b * h + y) * w + x, c) += g.at(b, c, y, x);
  });
}

}  // namespace lcye::ag
