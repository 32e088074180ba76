#include <algorithm>
#include <cmath>
#include <cstring>

#include "wavesplit/errors.hpp"
#include "wavesplit/tensor.hpp"
#include "wavesplit/threading.hpp"

namespace wavesplit {
namespace ops {
namespace {

inline void axpy(float* __restrict dst, float a, const float* __restrict src, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw ContractViolation(std::string(op) + ": operand shapes differ");
}

void require_scalar(const TensorPtr& s, const char* op) {
  if (s->numel() != 1) throw ContractViolation(std::string(op) + ": expected a scalar tensor");
}

}  // namespace

float sqdist(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

float log_sum_exp_neg(std::span<const float> d) {
  float m = -d[0];
  for (std::size_t i = 1; i < d.size(); ++i) m = std::max(m, -d[i]);
  float s = 0.0f;
  for (std::size_t i = 0; i < d.size(); ++i) s += std::exp(-d[i] - m);
  return m + std::log(s);
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  Tensor* self = out.get();
  attach(out, {a, b}, [self, pa = a.get(), pb = b.get()] {
    if (pa->requires_grad) pa->accumulate_grad(self->grad);
    if (pb->requires_grad) pb->accumulate_grad(self->grad);
  });
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
  Tensor* self = out.get();
  attach(out, {a, b}, [self, pa = a.get(), pb = b.get()] {
    if (pa->requires_grad) pa->accumulate_grad(self->grad);
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self->grad[i];
    }
  });
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
  Tensor* self = out.get();
  attach(out, {a, b}, [self, pa = a.get(), pb = b.get()] {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * pa->data[i];
    }
  });
  return out;
}

TensorPtr scale(const TensorPtr& a, float s) {
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * s;
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get(), s] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * s;
  });
  return out;
}

TensorPtr offset(const TensorPtr& a, float s) {
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + s;
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get()] { pa->accumulate_grad(self->grad); });
  return out;
}

TensorPtr exp_elem(const TensorPtr& a) {
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = std::exp(a->data[i]);
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get()] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * self->data[i];
  });
  return out;
}

TensorPtr scale_by(const TensorPtr& a, const TensorPtr& s) {
  require_scalar(s, "scale_by");
  const float sv = s->data[0];
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * sv;
  Tensor* self = out.get();
  attach(out, {a, s}, [self, pa = a.get(), ps = s.get(), sv] {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * sv;
    }
    if (ps->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        acc += static_cast<double>(self->grad[i]) * pa->data[i];
      ps->ensure_grad()[0] += static_cast<float>(acc);
    }
  });
  return out;
}

TensorPtr shift_by(const TensorPtr& a, const TensorPtr& s) {
  require_scalar(s, "shift_by");
  const float sv = s->data[0];
  auto out = Tensor::create(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + sv;
  Tensor* self = out.get();
  attach(out, {a, s}, [self, pa = a.get(), ps = s.get()] {
    if (pa->requires_grad) pa->accumulate_grad(self->grad);
    if (ps->requires_grad) {
      double acc = 0.0;
      for (float g : self->grad) acc += g;
      ps->ensure_grad()[0] += static_cast<float>(acc);
    }
  });
  return out;
}

TensorPtr sum(const TensorPtr& a) {
  double acc = 0.0;
  for (float v : a->data) acc += v;
  auto out = Tensor::scalar(static_cast<float>(acc));
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get()] {
    const float g = self->grad[0];
    auto& dst = pa->ensure_grad();
    for (auto& v : dst) v += g;
  });
  return out;
}

TensorPtr mean(const TensorPtr& a) {
  const float inv = 1.0f / static_cast<float>(a->numel());
  double acc = 0.0;
  for (float v : a->data) acc += v;
  auto out = Tensor::scalar(static_cast<float>(acc) * inv);
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get(), inv] {
    const float g = self->grad[0] * inv;
    auto& dst = pa->ensure_grad();
    for (auto& v : dst) v += g;
  });
  return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> new_shape) {
  auto out = Tensor::from(a->data, std::move(new_shape));
  if (out->numel() != a->numel()) throw ContractViolation("reshape: element count changed");
  Tensor* self = out.get();
  attach(out, {a}, [self, pa = a.get()] { pa->accumulate_grad(self->grad); });
  return out;
}

TensorPtr conv1d_dilated(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                         std::int64_t dilation) {
  if (x->ndim() != 2 || w->ndim() != 3 || b->ndim() != 1)
    throw ContractViolation("conv1d_dilated: expected x[TxC_in], w[KxC_inxC_out], b[C_out]");
  const std::int64_t T = x->dim(0), c_in = x->dim(1);
  const std::int64_t K = w->dim(0), c_out = w->dim(2);
  if (w->dim(1) != c_in) throw ContractViolation("conv1d_dilated: weight C_in mismatch");
  if (b->dim(0) != c_out) throw ContractViolation("conv1d_dilated: bias C_out mismatch");
  if (K % 2 == 0) throw ContractViolation("conv1d_dilated: kernel size must be odd");
  if (dilation < 1) throw ContractViolation("conv1d_dilated: dilation must be >= 1");
  const std::int64_t center = (K - 1) / 2;

  auto out = Tensor::create({T, c_out});
  {
    const float* xd = x->data.data();
    const float* wd = w->data.data();
    const float* bd = b->data.data();
    float* od = out->data.data();
    parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        float* orow = od + t * c_out;
        std::memcpy(orow, bd, sizeof(float) * static_cast<std::size_t>(c_out));
        for (std::int64_t k = 0; k < K; ++k) {
          const std::int64_t tt = t + (k - center) * dilation;
          if (tt < 0 || tt >= T) continue;  // zero padding
          const float* xrow = xd + tt * c_in;
          const float* wk = wd + k * c_in * c_out;
          for (std::int64_t i = 0; i < c_in; ++i) axpy(orow, xrow[i], wk + i * c_out, c_out);
        }
      }
    });
  }

  Tensor* self = out.get();
  attach(out, {x, w, b},
         [self, px = x.get(), pw = w.get(), pb = b.get(), T, c_in, c_out, K, center, dilation] {
           const float* gd = self->grad.data();
           if (px->requires_grad) {
             // Transposed kernel view so the inner accumulation stays contiguous.
             std::vector<float> wt(static_cast<std::size_t>(K * c_out * c_in));
             for (std::int64_t k = 0; k < K; ++k)
               for (std::int64_t i = 0; i < c_in; ++i)
                 for (std::int64_t o = 0; o < c_out; ++o)
                   wt[(k * c_out + o) * c_in + i] = pw->data[(k * c_in + i) * c_out + o];
             float* dx = px->ensure_grad().data();
             parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
               for (std::int64_t tt = lo; tt < hi; ++tt) {
                 float* dxrow = dx + tt * c_in;
                 for (std::int64_t k = 0; k < K; ++k) {
                   const std::int64_t t = tt - (k - center) * dilation;
                   if (t < 0 || t >= T) continue;
                   const float* grow = gd + t * c_out;
                   const float* wtk = wt.data() + k * c_out * c_in;
                   for (std::int64_t o = 0; o < c_out; ++o)
                     axpy(dxrow, grow[o], wtk + o * c_in, c_in);
                 }
               }
             });
           }
           if (pw->requires_grad) {
             float* dw = pw->ensure_grad().data();
             const float* xd = px->data.data();
             // Each (k, i) slice is written by exactly one task.
             parallel_for(K * c_in, [&](std::int64_t lo, std::int64_t hi) {
               for (std::int64_t ki = lo; ki < hi; ++ki) {
                 const std::int64_t k = ki / c_in, i = ki % c_in;
                 float* dwrow = dw + ki * c_out;
                 for (std::int64_t t = 0; t < T; ++t) {
                   const std::int64_t tt = t + (k - center) * dilation;
                   if (tt < 0 || tt >= T) continue;
                   axpy(dwrow, xd[tt * c_in + i], gd + t * c_out, c_out);
                 }
               }
             });
           }
           if (pb->requires_grad) {
             float* db = pb->ensure_grad().data();
             for (std::int64_t t = 0; t < T; ++t) axpy(db, 1.0f, gd + t * c_out, c_out);
           }
         });
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& shift,
                     float eps) {
  if (x->ndim() != 2) throw ContractViolation("layer_norm: expected x[TxC]");
  const std::int64_t T = x->dim(0), C = x->dim(1);
  if (gain->numel() != C || shift->numel() != C)
    throw ContractViolation("layer_norm: gain/shift length must equal C");

  auto out = Tensor::create({T, C});
  auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(T * C));
  auto invstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(T));
  {
    const float* xd = x->data.data();
    const float* gd = gain->data.data();
    const float* sd = shift->data.data();
    float* od = out->data.data();
    float* xh = xhat->data();
    float* is = invstd->data();
    parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        const float* xrow = xd + t * C;
        double m = 0.0;
        for (std::int64_t c = 0; c < C; ++c) m += xrow[c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          const double d = xrow[c] - m;
          var += d * d;
        }
        var /= static_cast<double>(C);
        const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        is[t] = istd;
        const float mf = static_cast<float>(m);
        float* xhrow = xh + t * C;
        float* orow = od + t * C;
        for (std::int64_t c = 0; c < C; ++c) {
          const float v = (xrow[c] - mf) * istd;
          xhrow[c] = v;
          orow[c] = gd[c] * v + sd[c];
        }
      }
    });
  }

  Tensor* self = out.get();
  attach(out, {x, gain, shift},
         [self, px = x.get(), pg = gain.get(), ps = shift.get(), xhat, invstd, T, C] {
           const float* gd = self->grad.data();
           const float* xh = xhat->data();
           if (px->requires_grad) {
             float* dx = px->ensure_grad().data();
             const float* gains = pg->data.data();
             const float* is = invstd->data();
             parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
               for (std::int64_t t = lo; t < hi; ++t) {
                 const float* grow = gd + t * C;
                 const float* xhrow = xh + t * C;
                 double m1 = 0.0, m2 = 0.0;
                 for (std::int64_t c = 0; c < C; ++c) {
                   const double a = static_cast<double>(grow[c]) * gains[c];
                   m1 += a;
                   m2 += a * xhrow[c];
                 }
                 m1 /= static_cast<double>(C);
                 m2 /= static_cast<double>(C);
                 float* dxrow = dx + t * C;
                 for (std::int64_t c = 0; c < C; ++c) {
                   const double a = static_cast<double>(grow[c]) * gains[c];
                   dxrow[c] += static_cast<float>((a - m1 - xhrow[c] * m2) * is[t]);
                 }
               }
             });
           }
           if (pg->requires_grad) {
             float* dgain = pg->ensure_grad().data();
             for (std::int64_t t = 0; t < T; ++t)
               for (std::int64_t c = 0; c < C; ++c) dgain[c] += gd[t * C + c] * xh[t * C + c];
           }
           if (ps->requires_grad) {
             float* dshift = ps->ensure_grad().data();
             for (std::int64_t t = 0; t < T; ++t) axpy(dshift, 1.0f, gd + t * C, C);
           }
         });
  return out;
}

TensorPtr prelu(const TensorPtr& x, const TensorPtr& slope) {
  if (x->ndim() != 2) throw ContractViolation("prelu: expected x[TxC]");
  const std::int64_t T = x->dim(0), C = x->dim(1);
  if (slope->numel() != C) throw ContractViolation("prelu: one slope per channel required");

  auto out = Tensor::create({T, C});
  {
    const float* xd = x->data.data();
    const float* sd = slope->data.data();
    float* od = out->data.data();
    parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t)
        for (std::int64_t c = 0; c < C; ++c) {
          const float v = xd[t * C + c];
          od[t * C + c] = v >= 0.0f ? v : sd[c] * v;
        }
    });
  }

  Tensor* self = out.get();
  attach(out, {x, slope}, [self, px = x.get(), ps = slope.get(), T, C] {
    const float* gd = self->grad.data();
    const float* xd = px->data.data();
    if (px->requires_grad) {
      float* dx = px->ensure_grad().data();
      const float* sd = ps->data.data();
      parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t t = lo; t < hi; ++t)
          for (std::int64_t c = 0; c < C; ++c) {
            const std::int64_t idx = t * C + c;
            dx[idx] += gd[idx] * (xd[idx] >= 0.0f ? 1.0f : sd[c]);
          }
      });
    }
    if (ps->requires_grad) {
      float* dslope = ps->ensure_grad().data();
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t idx = t * C + c;
          if (xd[idx] < 0.0f) dslope[c] += gd[idx] * xd[idx];
        }
    }
  });
  return out;
}

TensorPtr l2_normalize(const TensorPtr& x, float eps) {
  if (x->ndim() < 1) throw ContractViolation("l2_normalize: rank >= 1 required");
  const std::int64_t d = x->shape.back();
  const std::int64_t rows = x->numel() / d;

  auto out = Tensor::create(x->shape);
  auto norms = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
  {
    const float* xd = x->data.data();
    float* od = out->data.data();
    float* nd = norms->data();
    parallel_for(rows, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t r = lo; r < hi; ++r) {
        const float* v = xd + r * d;
        double acc = 0.0;
        for (std::int64_t i = 0; i < d; ++i) acc += static_cast<double>(v[i]) * v[i];
        const float n = static_cast<float>(std::sqrt(acc));
        nd[r] = n;
        const float inv = 1.0f / std::max(n, eps);
        for (std::int64_t i = 0; i < d; ++i) od[r * d + i] = v[i] * inv;
      }
    });
  }

  Tensor* self = out.get();
  attach(out, {x}, [self, px = x.get(), norms, rows, d, eps] {
    const float* gd = self->grad.data();
    const float* od = self->data.data();
    float* dx = px->ensure_grad().data();
    const float* nd = norms->data();
    parallel_for(rows, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t r = lo; r < hi; ++r) {
        const float* grow = gd + r * d;
        float* dxrow = dx + r * d;
        if (nd[r] > eps) {
          const float* yrow = od + r * d;
          double dot = 0.0;
          for (std::int64_t i = 0; i < d; ++i) dot += static_cast<double>(yrow[i]) * grow[i];
          const float proj = static_cast<float>(dot);
          const float inv = 1.0f / nd[r];
          for (std::int64_t i = 0; i < d; ++i)
            dxrow[i] += (grow[i] - yrow[i] * proj) * inv;
        } else {
          const float inv = 1.0f / eps;
          for (std::int64_t i = 0; i < d; ++i) dxrow[i] += grow[i] * inv;
        }
      }
    });
  });
  return out;
}

TensorPtr log_sum_exp(const TensorPtr& v) {
  if (v->numel() < 1) throw ContractViolation("log_sum_exp: empty input");
  float m = v->data[0];
  for (float x : v->data) m = std::max(m, x);
  double s = 0.0;
  for (float x : v->data) s += std::exp(static_cast<double>(x) - m);
  auto out = Tensor::scalar(m + static_cast<float>(std::log(s)));

  Tensor* self = out.get();
  attach(out, {v}, [self, pv = v.get(), m, s] {
    const float g = self->grad[0];
    auto& dst = pv->ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] += g * static_cast<float>(std::exp(static_cast<double>(pv->data[i]) - m) / s);
  });
  return out;
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->ndim() != 2 || w->ndim() != 2 || b->ndim() != 1)
    throw ContractViolation("linear: expected x[TxC_in], w[C_inxC_out], b[C_out]");
  const std::int64_t T = x->dim(0), c_in = x->dim(1), c_out = w->dim(1);
  if (w->dim(0) != c_in || b->dim(0) != c_out)
    throw ContractViolation("linear: weight/bias shape mismatch");

  auto out = Tensor::create({T, c_out});
  {
    const float* xd = x->data.data();
    const float* wd = w->data.data();
    const float* bd = b->data.data();
    float* od = out->data.data();
    parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        float* orow = od + t * c_out;
        std::memcpy(orow, bd, sizeof(float) * static_cast<std::size_t>(c_out));
        const float* xrow = xd + t * c_in;
        for (std::int64_t i = 0; i < c_in; ++i) axpy(orow, xrow[i], wd + i * c_out, c_out);
      }
    });
  }

  Tensor* self = out.get();
  attach(out, {x, w, b}, [self, px = x.get(), pw = w.get(), pb = b.get(), T, c_in, c_out] {
    const float* gd = self->grad.data();
    if (px->requires_grad) {
      std::vector<float> wt(static_cast<std::size_t>(c_out * c_in));
      for (std::int64_t i = 0; i < c_in; ++i)
        for (std::int64_t o = 0; o < c_out; ++o) wt[o * c_in + i] = pw->data[i * c_out + o];
      float* dx = px->ensure_grad().data();
      parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t t = lo; t < hi; ++t) {
          float* dxrow = dx + t * c_in;
          const float* grow = gd + t * c_out;
          for (std::int64_t o = 0; o < c_out; ++o) axpy(dxrow, grow[o], wt.data() + o * c_in, c_in);
        }
      });
    }
    if (pw->requires_grad) {
      float* dw = pw->ensure_grad().data();
      const float* xd = px->data.data();
      parallel_for(c_in, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          float* dwrow = dw + i * c_out;
          for (std::int64_t t = 0; t < T; ++t) axpy(dwrow, xd[t * c_in + i], gd + t * c_out, c_out);
        }
      });
    }
    if (pb->requires_grad) {
      float* db = pb->ensure_grad().data();
      for (std::int64_t t = 0; t < T; ++t) axpy(db, 1.0f, gd + t * c_out, c_out);
    }
  });
  return out;
}

TensorPtr rowwise_affine(const TensorPtr& x, const TensorPtr& a, const TensorPtr& b) {
  if (x->ndim() != 2) throw ContractViolation("rowwise_affine: expected x[TxC]");
  const std::int64_t T = x->dim(0), C = x->dim(1);
  if (a->numel() != C || b->numel() != C)
    throw ContractViolation("rowwise_affine: modulation length must equal C");

  auto out = Tensor::create({T, C});
  {
    const float* xd = x->data.data();
    const float* ad = a->data.data();
    const float* bd = b->data.data();
    float* od = out->data.data();
    parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t)
        for (std::int64_t c = 0; c < C; ++c) od[t * C + c] = ad[c] * xd[t * C + c] + bd[c];
    });
  }

  Tensor* self = out.get();
  attach(out, {x, a, b}, [self, px = x.get(), pa = a.get(), pb = b.get(), T, C] {
    const float* gd = self->grad.data();
    if (px->requires_grad) {
      float* dx = px->ensure_grad().data();
      const float* ad = pa->data.data();
      parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t t = lo; t < hi; ++t)
          for (std::int64_t c = 0; c < C; ++c) dx[t * C + c] += gd[t * C + c] * ad[c];
      });
    }
    if (pa->requires_grad) {
      float* da = pa->ensure_grad().data();
      const float* xd = px->data.data();
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < C; ++c) da[c] += gd[t * C + c] * xd[t * C + c];
    }
    if (pb->requires_grad) {
      float* db = pb->ensure_grad().data();
      for (std::int64_t t = 0; t < T; ++t) axpy(db, 1.0f, gd + t * C, C);
    }
  });
  return out;
}

}  // namespace ops
}  // namespace wavesplit
