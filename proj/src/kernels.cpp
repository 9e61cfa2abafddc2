#include "changer/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace changer::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvDims {
  int n, cin, h, w;
  int cout, k;
  int cin_g, cout_g;
  int ho, wo;
};

ConvDims conv_dims(const Shape& x, const Shape& weight, ConvGeometry g) {
  if (g.stride < 1 || g.pad < 0 || g.groups < 1) {
    throw ShapeError("conv2d: invalid geometry stride=" + std::to_string(g.stride) +
                     " pad=" + std::to_string(g.pad) + " groups=" + std::to_string(g.groups));
  }
  if (x.c % g.groups != 0 || weight.n % g.groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(x.c) + "->" + std::to_string(weight.n) +
                     " not divisible by groups=" + std::to_string(g.groups));
  }
  if (weight.c != x.c / g.groups || weight.h != weight.w) {
    throw ShapeError("conv2d: weight shape " + weight.str() + " incompatible with input " + x.str() +
                     " and groups=" + std::to_string(g.groups));
  }
  ConvDims d{x.n, x.c, x.h, x.w, weight.n, weight.h, x.c / g.groups, weight.n / g.groups, 0, 0};
  d.ho = (x.h + 2 * g.pad - d.k) / g.stride + 1;
  d.wo = (x.w + 2 * g.pad - d.k) / g.stride + 1;
  if (x.h + 2 * g.pad < d.k || x.w + 2 * g.pad < d.k || d.ho < 1 || d.wo < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(d.k) + " larger than padded input " + x.str());
  }
  return d;
}

void check_bias(const Tensor4* bias, int cout) {
  if (bias && bias->numel() != static_cast<std::size_t>(cout)) {
    throw ShapeError("conv2d: bias " + bias->shape().str() + " does not have " + std::to_string(cout) +
                     " entries");
  }
}

void im2col(const double* src, int cin, int h, int w, int k, ConvGeometry g, int ho, int wo, double* col) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    const double* plane = src + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ky;
          double* row = dst + static_cast<std::size_t>(oh) * wo;
          if (ih < 0 || ih >= h) {
            std::fill(row, row + wo, 0.0);
            continue;
          }
          const double* in_row = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kx;
            row[ow] = (iw >= 0 && iw < w) ? in_row[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int cin, int h, int w, int k, ConvGeometry g, int ho, int wo, double* dst) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    double* plane = dst + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ky;
          if (ih < 0 || ih >= h) {
            continue;
          }
          const double* row = src + static_cast<std::size_t>(oh) * wo;
          double* out_row = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kx;
            if (iw >= 0 && iw < w) {
              out_row[iw] += row[ow];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvDims& d, ConvGeometry g) { return d.k == 1 && g.stride == 1 && g.pad == 0; }

// One input channel per group: the GEMM degenerates, loop directly.
bool is_depthwise(const ConvDims& d) { return d.cin_g == 1 && d.cout_g == 1; }

Tensor4 depthwise_forward(const Tensor4& x, const Tensor4& weight, const Tensor4* bias, const ConvDims& d,
                          ConvGeometry g) {
  Tensor4 y(Shape{d.n, d.cout, d.ho, d.wo});
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cout; ++c) {
      const double* src = x.plane(n, c);
      const double* ker = weight.plane(c, 0);
      double* out = y.plane(n, c);
      const double b = bias ? (*bias)[c] : 0.0;
      for (int oh = 0; oh < d.ho; ++oh) {
        for (int ow = 0; ow < d.wo; ++ow) {
          double acc = 0.0;
          for (int ky = 0; ky < d.k; ++ky) {
            const int ih = oh * g.stride - g.pad + ky;
            if (ih < 0 || ih >= d.h) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              const int iw = ow * g.stride - g.pad + kx;
              if (iw < 0 || iw >= d.w) continue;
              acc += src[ih * d.w + iw] * ker[ky * d.k + kx];
            }
          }
          out[oh * d.wo + ow] = acc + b;
        }
      }
    }
  }
  return y;
}

void depthwise_backward(const Tensor4& x, const Tensor4& weight, const Tensor4& gy, const ConvDims& d,
                        ConvGeometry g, Tensor4* gx, Tensor4* gw) {
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cout; ++c) {
      const double* src = x.plane(n, c);
      const double* ker = weight.plane(c, 0);
      const double* go = gy.plane(n, c);
      double* gsrc = gx ? gx->plane(n, c) : nullptr;
      double* gker = gw ? gw->plane(c, 0) : nullptr;
      for (int oh = 0; oh < d.ho; ++oh) {
        for (int ow = 0; ow < d.wo; ++ow) {
          const double gv = go[oh * d.wo + ow];
          for (int ky = 0; ky < d.k; ++ky) {
            const int ih = oh * g.stride - g.pad + ky;
            if (ih < 0 || ih >= d.h) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              const int iw = ow * g.stride - g.pad + kx;
              if (iw < 0 || iw >= d.w) continue;
              if (gsrc) gsrc[ih * d.w + iw] += gv * ker[ky * d.k + kx];
              if (gker) gker[ky * d.k + kx] += gv * src[ih * d.w + iw];
            }
          }
        }
      }
    }
  }
}

} // namespace

Shape conv_output_shape(const Shape& x, const Shape& weight, ConvGeometry g) {
  const ConvDims d = conv_dims(x, weight, g);
  return Shape{d.n, d.cout, d.ho, d.wo};
}

std::uint64_t conv2d_macs(const Shape& x, const Shape& weight, ConvGeometry g) {
  const ConvDims d = conv_dims(x, weight, g);
  return static_cast<std::uint64_t>(d.n) * d.cout * d.ho * d.wo * d.cin_g * d.k * d.k;
}

Tensor4 conv2d(const Tensor4& x, const Tensor4& weight, const Tensor4* bias, ConvGeometry g) {
  const ConvDims d = conv_dims(x.shape(), weight.shape(), g);
  check_bias(bias, d.cout);
  if (is_depthwise(d)) {
    return depthwise_forward(x, weight, bias, d, g);
  }
  Tensor4 y(Shape{d.n, d.cout, d.ho, d.wo});
  const int kk = d.cin_g * d.k * d.k;
  const int p = d.ho * d.wo;
  const bool pointwise = is_pointwise(d, g);
  RowMat col(pointwise ? 0 : kk, pointwise ? 0 : p);
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* src = x.plane(n, grp * d.cin_g);
      if (!pointwise) {
        im2col(src, d.cin_g, d.h, d.w, d.k, g, d.ho, d.wo, col.data());
      }
      ConstMatMap wmat(weight.plane(grp * d.cout_g, 0), d.cout_g, kk);
      MatMap out(y.plane(n, grp * d.cout_g), d.cout_g, p);
      if (pointwise) {
        out.noalias() = wmat * ConstMatMap(src, kk, p);
      } else {
        out.noalias() = wmat * col;
      }
    }
    if (bias) {
      for (int c = 0; c < d.cout; ++c) {
        Eigen::Map<Eigen::ArrayXd>(y.plane(n, c), p) += (*bias)[c];
      }
    }
  }
  return y;
}

Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& weight, const Tensor4* bias, ConvGeometry g) {
  const ConvDims d = conv_dims(x.shape(), weight.shape(), g);
  check_bias(bias, d.cout);
  Tensor4 y(Shape{d.n, d.cout, d.ho, d.wo});
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.cout; ++co) {
      const int grp = co / d.cout_g;
      for (int oh = 0; oh < d.ho; ++oh) {
        for (int ow = 0; ow < d.wo; ++ow) {
          double acc = 0.0;
          for (int ci = 0; ci < d.cin_g; ++ci) {
            for (int ky = 0; ky < d.k; ++ky) {
              const int ih = oh * g.stride - g.pad + ky;
              if (ih < 0 || ih >= d.h) continue;
              for (int kx = 0; kx < d.k; ++kx) {
                const int iw = ow * g.stride - g.pad + kx;
                if (iw < 0 || iw >= d.w) continue;
                acc += x(n, grp * d.cin_g + ci, ih, iw) * weight(co, ci, ky, kx);
              }
            }
          }
          y(n, co, oh, ow) = acc + (bias ? (*bias)[co] : 0.0);
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor4& x, const Tensor4& weight, const Tensor4& grad_out, ConvGeometry g,
                     Tensor4* grad_x, Tensor4* grad_weight, Tensor4* grad_bias) {
  const ConvDims d = conv_dims(x.shape(), weight.shape(), g);
  const int p = d.ho * d.wo;
  if (grad_bias) {
    for (int n = 0; n < d.n; ++n) {
      for (int c = 0; c < d.cout; ++c) {
        (*grad_bias)[c] += Eigen::Map<const Eigen::ArrayXd>(grad_out.plane(n, c), p).sum();
      }
    }
  }
  if (is_depthwise(d)) {
    depthwise_backward(x, weight, grad_out, d, g, grad_x, grad_weight);
    return;
  }
  const int kk = d.cin_g * d.k * d.k;
  const bool pointwise = is_pointwise(d, g);
  RowMat col(pointwise ? 0 : kk, pointwise ? 0 : p);
  RowMat gcol(grad_x && !pointwise ? kk : 0, grad_x && !pointwise ? p : 0);
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* src = x.plane(n, grp * d.cin_g);
      ConstMatMap gy(grad_out.plane(n, grp * d.cout_g), d.cout_g, p);
      ConstMatMap wmat(weight.plane(grp * d.cout_g, 0), d.cout_g, kk);
      if (grad_weight) {
        MatMap gw(grad_weight->plane(grp * d.cout_g, 0), d.cout_g, kk);
        if (pointwise) {
          gw.noalias() += gy * ConstMatMap(src, kk, p).transpose();
        } else {
          im2col(src, d.cin_g, d.h, d.w, d.k, g, d.ho, d.wo, col.data());
          gw.noalias() += gy * col.transpose();
        }
      }
      if (grad_x) {
        if (pointwise) {
          MatMap(grad_x->plane(n, grp * d.cin_g), kk, p).noalias() += wmat.transpose() * gy;
        } else {
          gcol.noalias() = wmat.transpose() * gy;
          col2im_add(gcol.data(), d.cin_g, d.h, d.w, d.k, g, d.ho, d.wo, grad_x->plane(n, grp * d.cin_g));
        }
      }
    }
  }
}

MaxPoolResult max_pool2d(const Tensor4& x, int kernel, int stride, int pad) {
  const Shape& s = x.shape();
  if (kernel < 1 || stride < 1 || pad < 0 || 2 * pad > kernel) {
    throw ShapeError("max_pool2d: invalid geometry");
  }
  const int ho = (s.h + 2 * pad - kernel) / stride + 1;
  const int wo = (s.w + 2 * pad - kernel) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("max_pool2d: window larger than input " + s.str());
  }
  MaxPoolResult r{Tensor4(Shape{s.n, s.c, ho, wo}), {}};
  r.argmax.resize(r.out.numel());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t arg = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const int ih = oh * stride - pad + ky;
            if (ih < 0 || ih >= s.h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int iw = ow * stride - pad + kx;
              if (iw < 0 || iw >= s.w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * s.w + iw;
              if (x[idx] > best || arg < 0 || std::isnan(x[idx])) {
                best = x[idx];
                arg = static_cast<std::int64_t>(idx);
              }
            }
          }
          r.out[o] = best;
          r.argmax[o] = arg;
        }
      }
    }
  }
  return r;
}

void max_pool2d_backward(const std::vector<std::int64_t>& argmax, const Tensor4& grad_out, Tensor4& grad_x) {
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    grad_x[static_cast<std::size_t>(argmax[o])] += grad_out[o];
  }
}

InstanceNormResult instance_norm(const Tensor4& x, const Tensor4& gamma, const Tensor4& beta, double eps) {
  const Shape& s = x.shape();
  if (gamma.numel() != static_cast<std::size_t>(s.c) || beta.numel() != static_cast<std::size_t>(s.c)) {
    throw ShapeError("instance_norm: affine parameters must have " + std::to_string(s.c) + " entries");
  }
  if (!(eps > 0.0)) {
    throw std::invalid_argument("instance_norm: eps must be positive");
  }
  InstanceNormResult r{Tensor4(s), Tensor4(s), std::vector<double>(static_cast<std::size_t>(s.n) * s.c)};
  const auto hw = static_cast<Eigen::Index>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      Eigen::Map<const Eigen::ArrayXd> in(x.plane(n, c), hw);
      const double mean = in.mean();
      const double var = (in - mean).square().mean();
      const double inv = 1.0 / std::sqrt(var + eps);
      Eigen::Map<Eigen::ArrayXd> xhat(r.normalized.plane(n, c), hw);
      xhat = (in - mean) * inv;
      Eigen::Map<Eigen::ArrayXd>(r.out.plane(n, c), hw) = xhat * gamma[c] + beta[c];
      r.inv_std[static_cast<std::size_t>(n) * s.c + c] = inv;
    }
  }
  return r;
}

void instance_norm_backward(const InstanceNormResult& saved, const Tensor4& gamma, const Tensor4& grad_out,
                            Tensor4* grad_x, Tensor4* grad_gamma, Tensor4* grad_beta) {
  const Shape& s = grad_out.shape();
  const auto hw = static_cast<Eigen::Index>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      Eigen::Map<const Eigen::ArrayXd> gy(grad_out.plane(n, c), hw);
      Eigen::Map<const Eigen::ArrayXd> xhat(saved.normalized.plane(n, c), hw);
      if (grad_gamma) (*grad_gamma)[c] += (gy * xhat).sum();
      if (grad_beta) (*grad_beta)[c] += gy.sum();
      if (grad_x) {
        const double inv = saved.inv_std[static_cast<std::size_t>(n) * s.c + c];
        const double mean_gy = gy.mean();
        const double mean_gy_xhat = (gy * xhat).mean();
        Eigen::Map<Eigen::ArrayXd>(grad_x->plane(n, c), hw) +=
            (gamma[c] * inv) * (gy - mean_gy - xhat * mean_gy_xhat);
      }
    }
  }
}

Tensor4 global_avg_pool(const Tensor4& x) {
  const Shape& s = x.shape();
  Tensor4 y(Shape{s.n, s.c, 1, 1});
  const auto hw = static_cast<Eigen::Index>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      y(n, c, 0, 0) = Eigen::Map<const Eigen::ArrayXd>(x.plane(n, c), hw).mean();
    }
  }
  return y;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Source taps for half-pixel-centre resampling along one axis.
std::vector<Tap> upsample_taps(int in, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    const int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = Tap{lo, hi, src - lo};
  }
  return taps;
}

} // namespace

Tensor4 bilinear_upsample(const Tensor4& x, int factor) {
  if (factor < 1) {
    throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
  }
  if (factor == 1) {
    return x;
  }
  const Shape& s = x.shape();
  const int ho = s.h * factor, wo = s.w * factor;
  const auto ty = upsample_taps(s.h, factor);
  const auto tx = upsample_taps(s.w, factor);
  Tensor4 y(Shape{s.n, s.c, ho, wo});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c);
      double* dst = y.plane(n, c);
      for (int oy = 0; oy < ho; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        const double* r0 = src + static_cast<std::size_t>(a.lo) * s.w;
        const double* r1 = src + static_cast<std::size_t>(a.hi) * s.w;
        for (int ox = 0; ox < wo; ++ox) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          const double top = r0[b.lo] + b.frac * (r0[b.hi] - r0[b.lo]);
          const double bot = r1[b.lo] + b.frac * (r1[b.hi] - r1[b.lo]);
          dst[oy * wo + ox] = top + a.frac * (bot - top);
        }
      }
    }
  }
  return y;
}

void bilinear_upsample_backward(const Tensor4& grad_out, int factor, Tensor4& grad_x) {
  const Shape& s = grad_x.shape();
  if (factor == 1) {
    grad_x.vec() += grad_out.vec();
    return;
  }
  const int ho = s.h * factor, wo = s.w * factor;
  const auto ty = upsample_taps(s.h, factor);
  const auto tx = upsample_taps(s.w, factor);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* gi = grad_x.plane(n, c);
      for (int oy = 0; oy < ho; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < wo; ++ox) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          const double g = go[oy * wo + ox];
          gi[a.lo * s.w + b.lo] += g * (1.0 - a.frac) * (1.0 - b.frac);
          gi[a.lo * s.w + b.hi] += g * (1.0 - a.frac) * b.frac;
          gi[a.hi * s.w + b.lo] += g * a.frac * (1.0 - b.frac);
          gi[a.hi * s.w + b.hi] += g * a.frac * b.frac;
        }
      }
    }
  }
}

namespace {

void check_flow(const Tensor4& x, const Tensor4& flow) {
  const Shape& s = x.shape();
  const Shape& f = flow.shape();
  if (f.n != s.n || f.c != 2 || f.h != s.h || f.w != s.w) {
    throw ShapeError("grid_sample: flow " + f.str() + " must be (" + std::to_string(s.n) + ",2," +
                     std::to_string(s.h) + "," + std::to_string(s.w) + ") for input " + s.str());
  }
}

struct SamplePoint {
  int y0, y1, x0, x1;
  double wy, wx;
  bool clamped_y, clamped_x;
};

SamplePoint locate(double y, double x, int h, int w) {
  SamplePoint p{};
  // NaN coordinates read pixel 0 with a NaN weight so the output stays NaN
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (std::isnan(y) || std::isnan(x)) {
    p.y1 = std::min(1, h - 1);
    p.x1 = std::min(1, w - 1);
    p.wy = std::isnan(y) ? nan : 0.0;
    p.wx = std::isnan(x) ? nan : 0.0;
    return p;
  }
  p.clamped_y = y < 0.0 || y > h - 1;
  p.clamped_x = x < 0.0 || x > w - 1;
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  p.y0 = static_cast<int>(std::floor(y));
  p.x0 = static_cast<int>(std::floor(x));
  p.y1 = std::min(p.y0 + 1, h - 1);
  p.x1 = std::min(p.x0 + 1, w - 1);
  p.wy = y - p.y0;
  p.wx = x - p.x0;
  return p;
}

} // namespace

Tensor4 grid_sample(const Tensor4& x, const Tensor4& flow) {
  check_flow(x, flow);
  const Shape& s = x.shape();
  Tensor4 y(s);
  for (int n = 0; n < s.n; ++n) {
    const double* fx = flow.plane(n, 0);
    const double* fy = flow.plane(n, 1);
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const int pix = i * s.w + j;
        const SamplePoint p = locate(i + fy[pix], j + fx[pix], s.h, s.w);
        const double w00 = (1.0 - p.wy) * (1.0 - p.wx), w01 = (1.0 - p.wy) * p.wx;
        const double w10 = p.wy * (1.0 - p.wx), w11 = p.wy * p.wx;
        for (int c = 0; c < s.c; ++c) {
          const double* src = x.plane(n, c);
          y.plane(n, c)[pix] = w00 * src[p.y0 * s.w + p.x0] + w01 * src[p.y0 * s.w + p.x1] +
                               w10 * src[p.y1 * s.w + p.x0] + w11 * src[p.y1 * s.w + p.x1];
        }
      }
    }
  }
  return y;
}

void grid_sample_backward(const Tensor4& x, const Tensor4& flow, const Tensor4& grad_out, Tensor4* grad_x,
                          Tensor4* grad_flow) {
  check_flow(x, flow);
  const Shape& s = x.shape();
  for (int n = 0; n < s.n; ++n) {
    const double* fx = flow.plane(n, 0);
    const double* fy = flow.plane(n, 1);
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const int pix = i * s.w + j;
        const SamplePoint p = locate(i + fy[pix], j + fx[pix], s.h, s.w);
        const double w00 = (1.0 - p.wy) * (1.0 - p.wx), w01 = (1.0 - p.wy) * p.wx;
        const double w10 = p.wy * (1.0 - p.wx), w11 = p.wy * p.wx;
        double dfx = 0.0, dfy = 0.0;
        for (int c = 0; c < s.c; ++c) {
          const double g = grad_out.plane(n, c)[pix];
          if (grad_x) {
            double* gx = grad_x->plane(n, c);
            gx[p.y0 * s.w + p.x0] += g * w00;
            gx[p.y0 * s.w + p.x1] += g * w01;
            gx[p.y1 * s.w + p.x0] += g * w10;
            gx[p.y1 * s.w + p.x1] += g * w11;
          }
          if (grad_flow) {
            const double* src = x.plane(n, c);
            const double v00 = src[p.y0 * s.w + p.x0], v01 = src[p.y0 * s.w + p.x1];
            const double v10 = src[p.y1 * s.w + p.x0], v11 = src[p.y1 * s.w + p.x1];
            dfx += g * ((1.0 - p.wy) * (v01 - v00) + p.wy * (v11 - v10));
            dfy += g * ((1.0 - p.wx) * (v10 - v00) + p.wx * (v11 - v01));
          }
        }
        if (grad_flow) {
          if (!p.clamped_x) grad_flow->plane(n, 0)[pix] += dfx;
          if (!p.clamped_y) grad_flow->plane(n, 1)[pix] += dfy;
        }
      }
    }
  }
}

} // namespace changer::kernels
