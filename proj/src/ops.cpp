#include "hrsketch/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hrsketch {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Geometry {
  bool batched = false;
  std::size_t n = 1, c = 0, h = 0, w = 0;
};

Geometry spatial_geometry(const Tensor& t, const char* op) {
  const Shape& s = t.shape();
  Geometry g;
  if (s.size() == 3) {
    g.c = s[0];
    g.h = s[1];
    g.w = s[2];
  } else if (s.size() == 4) {
    g.batched = true;
    g.n = s[0];
    g.c = s[1];
    g.h = s[2];
    g.w = s[3];
  } else {
    throw DimensionError(std::string(op) + " expects [C,H,W] or [N,C,H,W], got " +
                         shape_str(s));
  }
  return g;
}

Shape spatial_shape(const Geometry& g, std::size_t c, std::size_t h, std::size_t w) {
  if (g.batched) return {g.n, c, h, w};
  return {c, h, w};
}

void check_window(std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                  std::size_t padding, const char* op) {
  if (k == 0 || stride == 0) {
    throw DimensionError(std::string(op) + ": kernel and stride must be positive");
  }
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError(std::string(op) + ": window " + std::to_string(k) +
                         " larger than padded input " + std::to_string(h) + "x" +
                         std::to_string(w) + " (padding " + std::to_string(padding) + ")");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// Unfold one [C,H,W] image into a [C*k*k, Ho*Wo] column matrix.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t padding, std::size_t ho, std::size_t wo,
            double* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                          ? 0.0
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t padding, std::size_t ho, std::size_t wo,
            double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = img + (ci * h + static_cast<std::size_t>(iy)) * w;
          const double* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[static_cast<std::size_t>(ix)] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (stride == 0) throw DimensionError("stride must be positive");
  if (in + 2 * padding < kernel) {
    throw DimensionError("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
              std::size_t padding) {
  return conv2d(input, weight, Tensor(), stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  const Geometry g = spatial_geometry(input, "conv2d");
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[2] != ws[3]) {
    throw DimensionError("conv2d weight must be [C_out,C_in,k,k], got " + shape_str(ws));
  }
  if (ws[1] != g.c) {
    throw DimensionError("conv2d: weight expects " + std::to_string(ws[1]) +
                         " input channels, input has " + std::to_string(g.c));
  }
  const std::size_t cout = ws[0], k = ws[2];
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw DimensionError("conv2d bias must be [" + std::to_string(cout) + "]");
  }
  check_window(g.h, g.w, k, stride, padding, "conv2d");
  const std::size_t ho = conv_output_size(g.h, k, stride, padding);
  const std::size_t wo = conv_output_size(g.w, k, stride, padding);
  const std::size_t ck = g.c * k * k, hw = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  std::vector<double> out(g.n * cout * hw);
  std::vector<double> col(pointwise ? 0 : ck * hw);
  CMapMat wm(weight.values().data(), cout, ck);
  const double* x = input.values().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* img = x + n * g.c * g.h * g.w;
    const double* colp = img;
    if (!pointwise) {
      im2col(img, g.c, g.h, g.w, k, stride, padding, ho, wo, col.data());
      colp = col.data();
    }
    MapMat y(out.data() + n * cout * hw, cout, hw);
    y.noalias() = wm * CMapMat(colp, ck, hw);
    if (bias.defined()) {
      auto b = bias.values();
      for (std::size_t o = 0; o < cout; ++o) y.row(o).array() += b[o];
    }
  }

  return make_result(
      spatial_shape(g, cout, ho, wo), std::move(out), "conv2d", {input, weight, bias},
      [input, weight, bias, g, cout, k, stride, padding, ho, wo, ck, hw,
       pointwise](detail::Node& self) {
        const double* dy = self.grad.data();
        CMapMat wm(weight.values().data(), cout, ck);
        std::vector<double> col(pointwise ? 0 : ck * hw);
        std::vector<double> dcol(pointwise ? 0 : ck * hw);
        double* dw = weight.requires_grad() ? weight.node()->ensure_grad().data() : nullptr;
        double* dx = input.requires_grad() ? input.node()->ensure_grad().data() : nullptr;
        double* db = (bias.defined() && bias.requires_grad())
                         ? bias.node()->ensure_grad().data()
                         : nullptr;
        const double* x = input.values().data();
        for (std::size_t n = 0; n < g.n; ++n) {
          CMapMat dym(dy + n * cout * hw, cout, hw);
          const double* img = x + n * g.c * g.h * g.w;
          if (dw) {
            const double* colp = img;
            if (!pointwise) {
              im2col(img, g.c, g.h, g.w, k, stride, padding, ho, wo, col.data());
              colp = col.data();
            }
            MapMat(dw, cout, ck).noalias() += dym * CMapMat(colp, ck, hw).transpose();
          }
          if (dx) {
            double* dimg = dx + n * g.c * g.h * g.w;
            if (pointwise) {
              MapMat(dimg, ck, hw).noalias() += wm.transpose() * dym;
            } else {
              MapMat(dcol.data(), ck, hw).noalias() = wm.transpose() * dym;
              col2im(dcol.data(), g.c, g.h, g.w, k, stride, padding, ho, wo, dimg);
            }
          }
          if (db) {
            for (std::size_t o = 0; o < cout; ++o) db[o] += dym.row(o).sum();
          }
        }
      });
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding) {
  const Geometry g = spatial_geometry(input, "max_pool2d");
  check_window(g.h, g.w, kernel, stride, padding, "max_pool2d");
  if (padding >= kernel) throw DimensionError("max_pool2d: padding must be below kernel");
  const std::size_t ho = conv_output_size(g.h, kernel, stride, padding);
  const std::size_t wo = conv_output_size(g.w, kernel, stride, padding);
  const auto x = input.values();
  std::vector<double> out(g.n * g.c * ho * wo);
  std::vector<std::size_t> winner(out.size());
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
    const std::size_t base = plane * g.h * g.w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = std::numeric_limits<std::size_t>::max();
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            std::size_t idx = base + static_cast<std::size_t>(iy) * g.w +
                              static_cast<std::size_t>(ix);
            // strict comparison keeps the lowest flat index on ties; NaN wins
            if (arg == std::numeric_limits<std::size_t>::max() || x[idx] > best ||
                (std::isnan(x[idx]) && !std::isnan(best))) {
              best = x[idx];
              arg = idx;
            }
          }
        }
        out[o] = best;
        winner[o] = arg;
      }
    }
  }
  return make_result(spatial_shape(g, g.c, ho, wo), std::move(out), "max_pool2d", {input},
                     [input, winner = std::move(winner)](detail::Node& self) {
                       auto& dx = input.node()->ensure_grad();
                       for (std::size_t i = 0; i < winner.size(); ++i) {
                         dx[winner[i]] += self.grad[i];
                       }
                     });
}

Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  const Geometry g = spatial_geometry(input, "avg_pool2d");
  check_window(g.h, g.w, kernel, stride, 0, "avg_pool2d");
  const std::size_t ho = conv_output_size(g.h, kernel, stride, 0);
  const std::size_t wo = conv_output_size(g.w, kernel, stride, 0);
  const auto x = input.values();
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> out(g.n * g.c * ho * wo, 0.0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
    const std::size_t base = plane * g.h * g.w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::size_t row = base + (oy * stride + ky) * g.w + ox * stride;
          for (std::size_t kx = 0; kx < kernel; ++kx) acc += x[row + kx];
        }
        out[o] = acc * inv;
      }
    }
  }
  return make_result(
      spatial_shape(g, g.c, ho, wo), std::move(out), "avg_pool2d", {input},
      [input, g, kernel, stride, ho, wo, inv](detail::Node& self) {
        auto& dx = input.node()->ensure_grad();
        std::size_t o = 0;
        for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
          const std::size_t base = plane * g.h * g.w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
              const double d = self.grad[o] * inv;
              for (std::size_t ky = 0; ky < kernel; ++ky) {
                const std::size_t row = base + (oy * stride + ky) * g.w + ox * stride;
                for (std::size_t kx = 0; kx < kernel; ++kx) dx[row + kx] += d;
              }
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training) {
  const Shape& s = input.shape();
  std::size_t outer = 1, channels = 0, inner = 1;
  if (s.size() == 3) {
    channels = s[0];
    inner = s[1] * s[2];
  } else if (s.size() == 4) {
    outer = s[0];
    channels = s[1];
    inner = s[2] * s[3];
  } else if (s.size() == 2) {
    outer = s[0];
    channels = s[1];
  } else {
    throw DimensionError("batch_norm expects rank 2-4 input, got " + shape_str(s));
  }
  const Shape cshape{channels};
  if (gamma.shape() != cshape || beta.shape() != cshape ||
      state.running_mean.shape() != cshape || state.running_var.shape() != cshape) {
    throw DimensionError("batch_norm parameters must be [" + std::to_string(channels) + "]");
  }
  const std::size_t count = outer * inner;
  const auto x = input.values();
  const auto gm = gamma.values();
  const auto bt = beta.values();
  std::vector<double> mu(channels), invstd(channels);
  if (training) {
    auto rm = state.running_mean.mutable_values();
    auto rv = state.running_var.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < outer; ++n) {
        const double* p = x.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < outer; ++n) {
        const double* p = x.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / static_cast<double>(count);
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * m;
      rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    const auto rm = state.running_mean.values();
    const auto rv = state.running_var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(rv[c] + state.eps);
    }
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (x[base + i] - mu[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gm[c] * h + bt[c];
      }
    }
  }
  return make_result(
      s, std::move(out), "batch_norm", {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), outer,
       channels, inner, count, training](detail::Node& self) {
        const auto gm = gamma.values();
        const double* dy = self.grad.data();
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
        for (std::size_t n = 0; n < outer; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy[c] += dy[base + i];
              sum_dy_xhat[c] += dy[base + i] * xhat[base + i];
            }
          }
        }
        if (gamma.requires_grad()) {
          auto& dg = gamma.node()->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (beta.requires_grad()) {
          auto& db = beta.node()->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) db[c] += sum_dy[c];
        }
        if (!input.requires_grad()) return;
        auto& dx = input.node()->ensure_grad();
        const double cnt = static_cast<double>(count);
        for (std::size_t n = 0; n < outer; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * inner;
            const double gscale = gm[c] * invstd[c];
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                dx[base + i] += gscale / cnt *
                                (cnt * dy[base + i] - sum_dy[c] - xhat[base + i] * sum_dy_xhat[c]);
              } else {
                dx[base + i] += gscale * dy[base + i];
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  // NaN passes through so corrupt inputs stay visible downstream
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::isnan(v[i]) || v[i] > 0.0 ? v[i] : 0.0;
  return make_result(x.shape(), std::move(out), "relu", {x}, [x](detail::Node& self) {
    auto& dx = x.node()->ensure_grad();
    const auto v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

namespace {

template <typename Fwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, double sign_b,
              bool product) {
  check_same_shape(a, b, op);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return make_result(a.shape(), std::move(out), op, {a, b},
                     [a, b, sign_b, product](detail::Node& self) {
                       const auto& g = self.grad;
                       if (a.requires_grad()) {
                         auto& da = a.node()->ensure_grad();
                         const auto bv = b.values();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           da[i] += product ? g[i] * bv[i] : g[i];
                         }
                       }
                       if (b.requires_grad()) {
                         auto& db = b.node()->ensure_grad();
                         const auto av = a.values();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           db[i] += product ? g[i] * av[i] : sign_b * g[i];
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; }, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; }, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; }, 1.0, true);
}

Tensor scale(const Tensor& x, double s) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = s * v[i];
  return make_result(x.shape(), std::move(out), "scale", {x}, [x, s](detail::Node& self) {
    auto& dx = x.node()->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + s;
  return make_result(x.shape(), std::move(out), "add_scalar", {x}, [x](detail::Node& self) {
    auto& dx = x.node()->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Tensor square(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i];
  return make_result(x.shape(), std::move(out), "square", {x}, [x](detail::Node& self) {
    auto& dx = x.node()->ensure_grad();
    const auto v = x.values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * v[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result(Shape{}, {acc}, "sum", {x}, [x](detail::Node& self) {
    auto& dx = x.node()->ensure_grad();
    for (double& d : dx) d += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("sum_last on a scalar");
  const std::size_t d = s.back();
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  Shape out_shape(s.begin(), s.end() - 1);
  const auto v = x.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r] += v[r * d + j];
  }
  return make_result(std::move(out_shape), std::move(out), "sum_last", {x},
                     [x, d, rows](detail::Node& self) {
                       auto& dx = x.node()->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += self.grad[r];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto v = x.values();
  return make_result(std::move(shape), std::vector<double>(v.begin(), v.end()), "reshape",
                     {x}, [x](detail::Node& self) {
                       auto& dx = x.node()->ensure_grad();
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
  return make_result({m, n}, std::move(out), "matmul", {a, b},
                     [a, b, m, k, n](detail::Node& self) {
                       CMapMat g(self.grad.data(), m, n);
                       if (a.requires_grad()) {
                         MapMat(a.node()->ensure_grad().data(), m, k).noalias() +=
                             g * CMapMat(b.values().data(), k, n).transpose();
                       }
                       if (b.requires_grad()) {
                         MapMat(b.node()->ensure_grad().data(), k, n).noalias() +=
                             CMapMat(a.values().data(), m, k).transpose() * g;
                       }
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.dim() != 2) throw DimensionError("gather_rows expects a matrix");
  const std::size_t k = table.size(0), d = table.size(1);
  const auto v = table.values();
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= k) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range for " +
                       std::to_string(k) + " rows");
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() +
                static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), d}, std::move(out), "gather_rows", {table},
                     [table, idx = std::move(idx), d](detail::Node& self) {
                       auto& dt = table.node()->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           dt[idx[i] * d + j] += self.grad[i * d + j];
                         }
                       }
                     });
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax of empty range");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t one[] = {label};
  return softmax_cross_entropy(logits, std::span<const std::size_t>(one));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t batch = 1, classes = 0;
  if (logits.dim() == 1) {
    classes = logits.size(0);
  } else if (logits.dim() == 2) {
    batch = logits.size(0);
    classes = logits.size(1);
  } else {
    throw DimensionError("softmax_cross_entropy expects [n] or [N,n] logits");
  }
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  const auto v = logits.values();
  std::vector<double> probs(v.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= classes) {
      throw IndexError("label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    auto row = v.subspan(r * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[labels[r]];
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(batch);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result(Shape{}, {loss}, "softmax_cross_entropy", {logits},
                     [logits, probs = std::move(probs), lab = std::move(lab), batch,
                      classes](detail::Node& self) {
                       auto& dx = logits.node()->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t r = 0; r < batch; ++r) {
                         for (std::size_t j = 0; j < classes; ++j) {
                           const double onehot = (j == lab[r]) ? 1.0 : 0.0;
                           dx[r * classes + j] += g * (probs[r * classes + j] - onehot);
                         }
                       }
                     });
}

}  // namespace hrsketch
