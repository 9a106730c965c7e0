#include "mlrn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mlrn {

namespace {

bool tracking(const Tape* tape, std::initializer_list<const TensorPtr*> ins) {
  if (!tape) return false;
  for (const TensorPtr* t : ins) {
    if ((*t)->requires_grad) return true;
  }
  return false;
}

struct ConvGeom {
  std::size_t n, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel,
                       const Tensor& bias, std::size_t stride,
                       std::size_t padding) {
  if (input.shape.size() != 4) {
    throw ShapeError("conv2d: input must be [N,Cin,H,W], got " +
                     shape_str(input.shape));
  }
  if (kernel.shape.size() != 4) {
    throw ShapeError("conv2d: kernel must be [Cout,Cin,kH,kW], got " +
                     shape_str(kernel.shape));
  }
  ConvGeom g;
  g.n = input.shape[0];
  g.cin = input.shape[1];
  g.h = input.shape[2];
  g.w = input.shape[3];
  g.cout = kernel.shape[0];
  g.kh = kernel.shape[2];
  g.kw = kernel.shape[3];
  g.stride = stride;
  g.pad = padding;
  if (kernel.shape[1] != g.cin) {
    throw ShapeError("conv2d: kernel expects " +
                     std::to_string(kernel.shape[1]) +
                     " input channels, input has " + std::to_string(g.cin));
  }
  if (bias.shape.size() != 1 || bias.shape[0] != g.cout) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.cout) +
                     "], got " + shape_str(bias.shape));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t hp = g.h + 2 * padding;
  const std::size_t wp = g.w + 2 * padding;
  if (hp < g.kh || wp < g.kw || (hp - g.kh) % stride != 0 ||
      (wp - g.kw) % stride != 0) {
    throw ConfigError("conv2d: output size (" + std::to_string(g.h) + "+2*" +
                      std::to_string(padding) + "-" + std::to_string(g.kh) +
                      ")/" + std::to_string(stride) +
                      "+1 is not a positive integer");
  }
  g.ho = (hp - g.kh) / stride + 1;
  g.wo = (wp - g.kw) / stride + 1;
  return g;
}

// Output rows hit by kernel row kh: ih = oh*stride + kh - pad in [0, h).
void tap_range(std::size_t k, std::size_t pad, std::size_t stride,
               std::size_t extent, std::size_t out_extent, std::size_t* lo,
               std::size_t* hi) {
  *lo = (pad > k) ? (pad - k + stride - 1) / stride : 0;
  const std::size_t max_in = extent - 1 + pad;
  if (max_in < k) {
    *lo = 1;
    *hi = 0;  // empty
    return;
  }
  *hi = std::min(out_extent - 1, (max_in - k) / stride);
}

void conv_forward(const double* in, const double* ker, const double* bias,
                  double* out, const ConvGeom& g) {
  parallel_for(g.n * g.cout, [&](std::size_t begin, std::size_t end) {
    for (std::size_t nc = begin; nc < end; ++nc) {
      const std::size_t n = nc / g.cout;
      const std::size_t co = nc % g.cout;
      double* oplane = out + nc * g.ho * g.wo;
      std::fill(oplane, oplane + g.ho * g.wo, bias[co]);
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* iplane = in + (n * g.cin + ci) * g.h * g.w;
        const double* kplane = ker + (co * g.cin + ci) * g.kh * g.kw;
        for (std::size_t kh = 0; kh < g.kh; ++kh) {
          std::size_t oh_lo, oh_hi;
          tap_range(kh, g.pad, g.stride, g.h, g.ho, &oh_lo, &oh_hi);
          for (std::size_t kw = 0; kw < g.kw; ++kw) {
            const double wv = kplane[kh * g.kw + kw];
            if (wv == 0.0) continue;
            std::size_t ow_lo, ow_hi;
            tap_range(kw, g.pad, g.stride, g.w, g.wo, &ow_lo, &ow_hi);
            for (std::size_t oh = oh_lo; oh <= oh_hi; ++oh) {
              const std::size_t ih = oh * g.stride + kh - g.pad;
              const double* irow =
                  iplane + ih * g.w + (ow_lo * g.stride + kw - g.pad);
              double* orow = oplane + oh * g.wo + ow_lo;
              const std::size_t len = ow_hi - ow_lo + 1;
              if (g.stride == 1) {
                for (std::size_t t = 0; t < len; ++t) orow[t] += wv * irow[t];
              } else {
                for (std::size_t t = 0; t < len; ++t)
                  orow[t] += wv * irow[t * g.stride];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, std::size_t stride,
                 std::size_t padding, Tape* tape) {
  const ConvGeom g = conv_geometry(*input, *kernel, *bias, stride, padding);
  const bool track = tracking(tape, {&input, &kernel, &bias});

  auto out = zeros({g.n, g.cout, g.ho, g.wo}, track);
  conv_forward(input->data.data(), kernel->data.data(), bias->data.data(),
               out->data.data(), g);
  MLRN_DEBUG_CHECK_FINITE(*out, "conv2d");

  if (track) {
    tape->record({input, kernel, bias, out}, [input, kernel, bias, out, g] {
      const double* go = out->grad.data();
      if (input->requires_grad) {
        double* gi = input->grad.data();
        const double* ker = kernel->data.data();
        parallel_for(g.n, [&](std::size_t nb, std::size_t ne) {
          for (std::size_t n = nb; n < ne; ++n) {
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* gplane = go + (n * g.cout + co) * g.ho * g.wo;
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                double* giplane = gi + (n * g.cin + ci) * g.h * g.w;
                const double* kplane = ker + (co * g.cin + ci) * g.kh * g.kw;
                for (std::size_t kh = 0; kh < g.kh; ++kh) {
                  std::size_t oh_lo, oh_hi;
                  tap_range(kh, g.pad, g.stride, g.h, g.ho, &oh_lo, &oh_hi);
                  for (std::size_t kw = 0; kw < g.kw; ++kw) {
                    const double wv = kplane[kh * g.kw + kw];
                    if (wv == 0.0) continue;
                    std::size_t ow_lo, ow_hi;
                    tap_range(kw, g.pad, g.stride, g.w, g.wo, &ow_lo, &ow_hi);
                    for (std::size_t oh = oh_lo; oh <= oh_hi; ++oh) {
                      const std::size_t ih = oh * g.stride + kh - g.pad;
                      double* girow = giplane + ih * g.w +
                                      (ow_lo * g.stride + kw - g.pad);
                      const double* grow = gplane + oh * g.wo + ow_lo;
                      const std::size_t len = ow_hi - ow_lo + 1;
                      for (std::size_t t = 0; t < len; ++t)
                        girow[t * g.stride] += wv * grow[t];
                    }
                  }
                }
              }
            }
          }
        });
      }
      if (kernel->requires_grad || bias->requires_grad) {
        double* gk = kernel->requires_grad ? kernel->grad.data() : nullptr;
        double* gb = bias->requires_grad ? bias->grad.data() : nullptr;
        const double* in = input->data.data();
        parallel_for(g.cout, [&](std::size_t cb, std::size_t ce) {
          for (std::size_t co = cb; co < ce; ++co) {
            for (std::size_t n = 0; n < g.n; ++n) {
              const double* gplane = go + (n * g.cout + co) * g.ho * g.wo;
              if (gb) {
                double s = 0.0;
                for (std::size_t i = 0; i < g.ho * g.wo; ++i) s += gplane[i];
                gb[co] += s;
              }
              if (!gk) continue;
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const double* iplane = in + (n * g.cin + ci) * g.h * g.w;
                double* gkplane = gk + (co * g.cin + ci) * g.kh * g.kw;
                for (std::size_t kh = 0; kh < g.kh; ++kh) {
                  std::size_t oh_lo, oh_hi;
                  tap_range(kh, g.pad, g.stride, g.h, g.ho, &oh_lo, &oh_hi);
                  for (std::size_t kw = 0; kw < g.kw; ++kw) {
                    std::size_t ow_lo, ow_hi;
                    tap_range(kw, g.pad, g.stride, g.w, g.wo, &ow_lo, &ow_hi);
                    double s = 0.0;
                    for (std::size_t oh = oh_lo; oh <= oh_hi; ++oh) {
                      const std::size_t ih = oh * g.stride + kh - g.pad;
                      const double* irow = iplane + ih * g.w +
                                           (ow_lo * g.stride + kw - g.pad);
                      const double* grow = gplane + oh * g.wo + ow_lo;
                      const std::size_t len = ow_hi - ow_lo + 1;
                      for (std::size_t t = 0; t < len; ++t)
                        s += irow[t * g.stride] * grow[t];
                    }
                    gkplane[kh * g.kw + kw] += s;
                  }
                }
              }
            }
          }
        });
      }
    });
  }
  return out;
}

TensorPtr relu(const TensorPtr& x, Tape* tape) {
  const bool track = tracking(tape, {&x});
  auto out = zeros(x->shape, track);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "relu");
  if (track) {
    tape->record({x, out}, [x, out] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < x->numel(); ++i) {
        if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (a->shape != b->shape) {
    throw ShapeError("add: shapes differ, " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
  const bool track = tracking(tape, {&a, &b});
  auto out = zeros(a->shape, track);
  for (std::size_t i = 0; i < a->numel(); ++i) {
    out->data[i] = a->data[i] + b->data[i];
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "add");
  if (track) {
    tape->record({a, b, out}, [a, b, out] {
      if (a->requires_grad) {
        for (std::size_t i = 0; i < a->numel(); ++i)
          a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        for (std::size_t i = 0; i < b->numel(); ++i)
          b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& scale,
                     const TensorPtr& shift, BatchNormState& state,
                     BatchNormMode mode, double epsilon, double ema,
                     Tape* tape) {
  if (x->shape.size() != 4) {
    throw ShapeError("batch_norm: input must be [N,C,H,W], got " +
                     shape_str(x->shape));
  }
  const std::size_t n = x->shape[0], c = x->shape[1];
  const std::size_t plane = x->shape[2] * x->shape[3];
  const std::size_t m = n * plane;  // samples per channel
  if (scale->numel() != c || shift->numel() != c) {
    throw ShapeError("batch_norm: scale/shift must have " + std::to_string(c) +
                     " entries");
  }
  if (state.running_mean->numel() != c || state.running_var->numel() != c) {
    throw ShapeError("batch_norm: running stats sized for " +
                     std::to_string(state.running_mean->numel()) +
                     " channels, input has " + std::to_string(c));
  }
  if (epsilon <= 0.0) throw ConfigError("batch_norm: epsilon must be > 0");

  std::vector<double> mean(c), inv_std(c);
  if (mode == BatchNormMode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x->data.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x->data.data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
      state.running_mean->data[ch] =
          (1.0 - ema) * state.running_mean->data[ch] + ema * mu;
      state.running_var->data[ch] =
          (1.0 - ema) * state.running_var->data[ch] + ema * var;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean->data[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var->data[ch] + epsilon);
    }
  }

  const bool track = tracking(tape, {&x, &scale, &shift});
  auto out = zeros(x->shape, track);
  // x_hat is kept for the backward rule; harmless to compute otherwise.
  auto x_hat = std::make_shared<std::vector<double>>(x->numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x->data.data() + (i * c + ch) * plane;
      double* q = out->data.data() + (i * c + ch) * plane;
      double* xh = x_hat->data() + (i * c + ch) * plane;
      const double g = scale->data[ch], b = shift->data[ch];
      const double mu = mean[ch], is = inv_std[ch];
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - mu) * is;
        q[j] = g * xh[j] + b;
      }
    }
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "batch_norm");

  if (track) {
    auto inv_std_copy = std::make_shared<std::vector<double>>(inv_std);
    tape->record(
        {x, scale, shift, out},
        [x, scale, shift, out, x_hat, inv_std_copy, mode, n, c, plane, m] {
          const double* go = out->grad.data();
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = scale->data[ch];
            const double is = (*inv_std_copy)[ch];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t base = (i * c + ch) * plane;
              for (std::size_t j = 0; j < plane; ++j) {
                sum_dy += go[base + j];
                sum_dy_xhat += go[base + j] * (*x_hat)[base + j];
              }
            }
            if (shift->requires_grad) shift->grad[ch] += sum_dy;
            if (scale->requires_grad) scale->grad[ch] += sum_dy_xhat;
            if (!x->requires_grad) continue;
            if (mode == BatchNormMode::kFrozen) {
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                  x->grad[base + j] += go[base + j] * g * is;
                }
              }
            } else {
              const double inv_m = 1.0 / static_cast<double>(m);
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                  const double dxhat = go[base + j] * g;
                  x->grad[base + j] +=
                      is * (dxhat - inv_m * sum_dy * g -
                            (*x_hat)[base + j] * inv_m * sum_dy_xhat * g);
                }
              }
            }
          }
        });
  }
  return out;
}

TensorPtr global_avg_pool(const TensorPtr& x, Tape* tape) {
  if (x->shape.size() != 4) {
    throw ShapeError("global_avg_pool: input must be [N,C,H,W], got " +
                     shape_str(x->shape));
  }
  const std::size_t n = x->shape[0], c = x->shape[1];
  const std::size_t plane = x->shape[2] * x->shape[3];
  const bool track = tracking(tape, {&x});
  auto out = zeros({n, c}, track);
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* p = x->data.data() + i * plane;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    out->data[i] = s / static_cast<double>(plane);
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "global_avg_pool");
  if (track) {
    tape->record({x, out}, [x, out, n, c, plane] {
      if (!x->requires_grad) return;
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t i = 0; i < n * c; ++i) {
        const double g = out->grad[i] * inv;
        double* p = x->grad.data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] += g;
      }
    });
  }
  return out;
}

TensorPtr dense(const TensorPtr& x, const TensorPtr& weight,
                const TensorPtr& bias, Tape* tape) {
  if (x->shape.size() != 2 || weight->shape.size() != 2) {
    throw ShapeError("dense: expected x [N,D] and weight [C,D], got " +
                     shape_str(x->shape) + " and " + shape_str(weight->shape));
  }
  const std::size_t n = x->shape[0], d = x->shape[1];
  const std::size_t c = weight->shape[0];
  if (weight->shape[1] != d) {
    throw ShapeError("dense: weight expects " +
                     std::to_string(weight->shape[1]) + " features, x has " +
                     std::to_string(d));
  }
  if (bias->numel() != c) {
    throw ShapeError("dense: bias must have " + std::to_string(c) +
                     " entries, got " + std::to_string(bias->numel()));
  }
  const bool track = tracking(tape, {&x, &weight, &bias});
  auto out = zeros({n, c}, track);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x->data.data() + i * d;
    double* yr = out->data.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const double* wr = weight->data.data() + j * d;
      double s = bias->data[j];
      for (std::size_t k = 0; k < d; ++k) s += xr[k] * wr[k];
      yr[j] = s;
    }
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "dense");
  if (track) {
    tape->record({x, weight, bias, out}, [x, weight, bias, out, n, d, c] {
      const double* go = out->grad.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* gr = go + i * c;
        const double* xr = x->data.data() + i * d;
        for (std::size_t j = 0; j < c; ++j) {
          const double g = gr[j];
          if (g == 0.0) continue;
          if (x->requires_grad) {
            const double* wr = weight->data.data() + j * d;
            double* gx = x->grad.data() + i * d;
            for (std::size_t k = 0; k < d; ++k) gx[k] += g * wr[k];
          }
          if (weight->requires_grad) {
            double* gw = weight->grad.data() + j * d;
            for (std::size_t k = 0; k < d; ++k) gw[k] += g * xr[k];
          }
          if (bias->requires_grad) bias->grad[j] += g;
        }
      }
    });
  }
  return out;
}

double sigmoid_scalar(double x) {
  double r;
  if (x >= 0.0) {
    const double e = std::exp(-x);
    r = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(x);
    r = e / (1.0 + e);
  }
  // Pin saturated values just inside (0,1).
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::clamp(r, lo, hi);
}

TensorPtr sigmoid(const TensorPtr& x, Tape* tape) {
  const bool track = tracking(tape, {&x});
  auto out = zeros(x->shape, track);
  for (std::size_t i = 0; i < x->numel(); ++i) {
    out->data[i] = sigmoid_scalar(x->data[i]);
  }
  MLRN_DEBUG_CHECK_FINITE(*out, "sigmoid");
  if (track) {
    tape->record({x, out}, [x, out] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < x->numel(); ++i) {
        const double s = out->data[i];
        x->grad[i] += s * (1.0 - s) * out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr bce_loss(const TensorPtr& logits, const TensorPtr& targets,
                   Tape* tape) {
  if (logits->shape.size() != 2) {
    throw ShapeError("bce_loss: logits must be [N,C], got " +
                     shape_str(logits->shape));
  }
  if (logits->shape != targets->shape) {
    throw ShapeError("bce_loss: logits " + shape_str(logits->shape) +
                     " and targets " + shape_str(targets->shape) +
                     " must match");
  }
  for (double y : targets->data) {
    if (y != 0.0 && y != 1.0) {
      throw ValidationError("bce_loss: targets must be exactly 0 or 1, got " +
                            std::to_string(y));
    }
  }
  const std::size_t n = logits->shape[0];
  const bool track = tracking(tape, {&logits, &targets});
  double total = 0.0;
  for (std::size_t i = 0; i < logits->numel(); ++i) {
    const double z = logits->data[i];
    const double y = targets->data[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  auto out = make_tensor({1}, {total / static_cast<double>(n)}, track);
  MLRN_DEBUG_CHECK_FINITE(*out, "bce_loss");
  if (track) {
    tape->record({logits, targets, out}, [logits, targets, out, n] {
      if (!logits->requires_grad) return;
      const double g = out->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < logits->numel(); ++i) {
        logits->grad[i] +=
            g * (sigmoid_scalar(logits->data[i]) - targets->data[i]);
      }
    });
  }
  return out;
}

TensorPtr sum(const TensorPtr& x, Tape* tape) {
  const bool track = tracking(tape, {&x});
  double s = 0.0;
  for (double v : x->data) s += v;
  auto out = make_tensor({1}, {s}, track);
  MLRN_DEBUG_CHECK_FINITE(*out, "sum");
  if (track) {
    tape->record({x, out}, [x, out] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0];
    });
  }
  return out;
}

}  // namespace mlrn
