// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xmodlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "xmodlab/kernels.hpp"

namespace xmodlab {

namespace {

template <typename T>
void require_same_record(Var<T> a, Var<T> b) {
  if (a.record != b.record) throw GraphError("operands from different records");
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

template <typename T>
void add_into(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_record(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  BasicTensor<T> out(with_last(av.shape(), n));
  kernels::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k,
                   n, false);
  return a.record->record(
      std::move(out), {a.id, b.id},
      [ai = a.id, bi = b.id, m, k, n](ComputationRecord<T>& r, std::size_t self) {
        const auto& dc = r.grad(self);
        if (r.requires_grad(ai)) {
          kernels::gemm_nt(dc.data(), r.value(bi).data().data(),
                           r.grad(ai).data(), m, n, k, true);
        }
        if (r.requires_grad(bi)) {
          kernels::gemm_tn(r.value(ai).data().data(), dc.data(),
                           r.grad(bi).data(), k, m, n, true);
        }
      });
}

template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b) {
  require_same_record(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(1)) {
    throw DimensionError("matmul_transposed shape mismatch: " +
                         shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()) + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(0);
  BasicTensor<T> out(with_last(av.shape(), n));
  kernels::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k,
                   n, false);
  return a.record->record(
      std::move(out), {a.id, b.id},
      [ai = a.id, bi = b.id, m, k, n](ComputationRecord<T>& r, std::size_t self) {
        const auto& dc = r.grad(self);
        if (r.requires_grad(ai)) {
          kernels::gemm_nn(dc.data(), r.value(bi).data().data(),
                           r.grad(ai).data(), m, n, k, true);
        }
        if (r.requires_grad(bi)) {
          kernels::gemm_tn(dc.data(), r.value(ai).data().data(),
                           r.grad(bi).data(), n, m, k, true);
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_record(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add shape mismatch: " + shape_string(av.shape()) +
                         " vs " + shape_string(bv.shape()));
  }
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.record->record(
      std::move(out), {a.id, b.id},
      [ai = a.id, bi = b.id](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        if (r.requires_grad(ai)) add_into<T>(r.grad(ai), g);
        if (r.requires_grad(bi)) add_into<T>(r.grad(bi), g);
      });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_record(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.numel() != xv.cols()) {
    throw DimensionError("bias " + shape_string(bv.shape()) +
                         " does not match rows of " + shape_string(xv.shape()));
  }
  BasicTensor<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.record->record(
      std::move(out), {x.id, bias.id},
      [xi = x.id, bi = bias.id, rows, cols](ComputationRecord<T>& r,
                                            std::size_t self) {
        const auto& g = r.grad(self);
        if (r.requires_grad(xi)) add_into<T>(r.grad(xi), g);
        if (r.requires_grad(bi)) {
          auto& gb = r.grad(bi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[i * cols + c];
        }
      });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  return add_bias(matmul(x, w), bias);
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.record->record(
      std::move(out), {x.id},
      [xi = x.id, factor](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        auto& gx = r.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  return x.record->record(
      BasicTensor<T>::scalar(total), {x.id},
      [xi = x.id](ComputationRecord<T>& r, std::size_t self) {
        const T g = r.grad(self)[0];
        for (auto& v : r.grad(xi)) v += g;
      });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("softmax axis " + std::to_string(axis) +
                         " invalid for shape " + shape_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  BasicTensor<T> out(xv.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return x.record->record(
      std::move(out), {x.id},
      [xi = x.id, outer, inner, len](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        const auto& yv = r.value(self);
        auto& gx = r.grad(xi);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j)
              dot += g[base + j * inner] * yv[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              gx[idx] += yv[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  require_same_record(x, gamma);
  require_same_record(x, beta);
  const auto& xv = x.value();
  const std::size_t d = xv.cols();
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm width " + std::to_string(d) +
                         " does not match gamma " +
                         shape_string(gamma.value().shape()) + " / beta " +
                         shape_string(beta.value().shape()));
  }
  const std::size_t rows = xv.rows();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> xhat(xv.numel());
  std::vector<T> rstd(rows);
  BasicTensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data().data() + r * d;
    double mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = row[c] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = static_cast<T>(row[c] - mean) * rs;
      xhat[r * d + c] = xh;
      out[r * d + c] = xh * gv[c] + bv[c];
    }
  }
  return x.record->record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, rows, d, xhat = std::move(xhat),
       rstd = std::move(rstd)](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        if (r.requires_grad(gi)) {
          auto& gg = r.grad(gi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g[i * d + c] * xhat[i * d + c];
        }
        if (r.requires_grad(bi)) {
          auto& gb = r.grad(bi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[i * d + c];
        }
        if (r.requires_grad(xi)) {
          const auto& gv = r.value(gi);
          auto& gx = r.grad(xi);
          std::vector<T> dxhat(d);
          for (std::size_t i = 0; i < rows; ++i) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = g[i * d + c] * gv[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[i * d + c];
            }
            mean_d /= static_cast<T>(d);
            mean_dx /= static_cast<T>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx[i * d + c] +=
                  rstd[i] * (dxhat[c] - mean_d - xhat[i * d + c] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = gelu_value(v);
  return x.record->record(
      std::move(out), {x.id}, [xi = x.id](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        const auto& xv = r.value(xi);
        auto& gx = r.grad(xi);
        const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T v = xv[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
          gx[i] += g[i] * (cdf + v * pdf);
        }
      });
}

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) {
    throw DimensionError("embedding table must be 2-D, got " +
                         shape_string(tv.shape()));
  }
  if (ids.empty()) throw DimensionError("embedding_lookup needs at least one id");
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding id " + std::to_string(ids[i]) +
                       " out of range [0, " + std::to_string(vocab) + ")");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  BasicTensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(tv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
  return table.record->record(
      std::move(out), {table.id},
      [ti = table.id, rows = std::move(rows), d](ComputationRecord<T>& r,
                                                  std::size_t self) {
        const auto& g = r.grad(self);
        auto& gt = r.grad(ti);
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) gt[rows[i] * d + c] += g[i * d + c];
      });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets,
                     Reduction reduction, bool* all_ignored) {
  const auto& lv = logits.value();
  const std::size_t n = lv.rows(), v = lv.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy has " + std::to_string(n) +
                         " rows but " + std::to_string(targets.size()) +
                         " targets");
  }
  std::size_t count = 0;
  double total = 0;
  std::vector<T> lse(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
    const T* row = lv.data().data() + i * v;
    T mx = *std::max_element(row, row + v);
    double s = 0;
    for (std::size_t c = 0; c < v; ++c) s += std::exp(static_cast<double>(row[c] - mx));
    lse[i] = static_cast<T>(mx + std::log(s));
    total += static_cast<double>(lse[i]) - static_cast<double>(row[t]);
    ++count;
  }
  if (all_ignored) *all_ignored = count == 0;
  T denom = T(1);
  if (reduction == Reduction::kMean && count > 0) denom = static_cast<T>(count);
  const T loss = count == 0 ? T(0) : static_cast<T>(total / static_cast<double>(denom));
  if (!std::isfinite(loss)) throw NumericError("cross_entropy produced a non-finite loss");
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.record->record(
      BasicTensor<T>::scalar(loss), {logits.id},
      [li = logits.id, tg = std::move(tg), lse = std::move(lse), n, v, denom](
          ComputationRecord<T>& r, std::size_t self) {
        const T g = r.grad(self)[0] / denom;
        const auto& lv = r.value(li);
        auto& gl = r.grad(li);
        for (std::size_t i = 0; i < n; ++i) {
          if (tg[i] == kIgnoreIndex) continue;
          for (std::size_t c = 0; c < v; ++c)
            gl[i * v + c] += g * std::exp(lv[i * v + c] - lse[i]);
          gl[i * v + static_cast<std::size_t>(tg[i])] -= g;
        }
      });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> out = x.value();
  std::vector<T> mask(out.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] *= mask[i];
  }
  return x.record->record(
      std::move(out), {x.id},
      [xi = x.id, mask = std::move(mask)](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        auto& gx = r.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
      });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  const auto& xv = x.value();
  const std::size_t d = xv.cols(), n = xv.rows();
  if (rows.empty()) throw DimensionError("gather_rows needs at least one row");
  BasicTensor<T> out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
    std::copy_n(xv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.record->record(
      std::move(out), {x.id},
      [xi = x.id, idx = std::move(idx), d](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        auto& gx = r.grad(xi);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) gx[idx[i] * d + c] += g[i * d + c];
      });
}

template <typename T>
Var<T> index_add_rows(Var<T> base, Var<T> src, std::span<const std::size_t> rows) {
  require_same_record(base, src);
  const auto& bv = base.value();
  const auto& sv = src.value();
  const std::size_t d = bv.cols(), n = bv.rows();
  if (sv.cols() != d || sv.rows() != rows.size()) {
    throw DimensionError("index_add_rows source " + shape_string(sv.shape()) +
                         " does not fit " + std::to_string(rows.size()) +
                         " rows of " + shape_string(bv.shape()));
  }
  BasicTensor<T> out = bv;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
    for (std::size_t c = 0; c < d; ++c) out[rows[i] * d + c] += sv[i * d + c];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return base.record->record(
      std::move(out), {base.id, src.id},
      [bi = base.id, si = src.id, idx = std::move(idx), d](ComputationRecord<T>& r,
                                                          std::size_t self) {
        const auto& g = r.grad(self);
        if (r.requires_grad(bi)) add_into<T>(r.grad(bi), g);
        if (r.requires_grad(si)) {
          auto& gs = r.grad(si);
          for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) gs[i * d + c] += g[idx[i] * d + c];
        }
      });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, AttentionShape shape,
                 std::span<const std::uint8_t> key_valid) {
  require_same_record(q, k);
  require_same_record(q, v);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t B = shape.batch, L = shape.seq_len, H = shape.heads;
  const std::size_t d = qv.cols();
  if (qv.rows() != B * L || kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw DimensionError("attention projections " + shape_string(qv.shape()) +
                         ", " + shape_string(kv.shape()) + ", " +
                         shape_string(vv.shape()) + " do not match batch " +
                         std::to_string(B) + " x seq " + std::to_string(L));
  }
  if (H == 0 || d % H != 0) {
    throw DimensionError("width " + std::to_string(d) + " not divisible by " +
                         std::to_string(H) + " heads");
  }
  if (key_valid.size() != B * L) {
    throw DimensionError("attention mask has " + std::to_string(key_valid.size()) +
                         " entries, expected " + std::to_string(B * L));
  }
  const std::size_t dh = d / H;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> probs(B * H * L * L, T(0));
  BasicTensor<T> out(qv.shape());
  std::vector<T> srow(L);
  for (std::size_t b = 0; b < B; ++b) {
    const std::uint8_t* valid = key_valid.data() + b * L;
    for (std::size_t h = 0; h < H; ++h) {
      T* P = probs.data() + ((b * H + h) * L) * L;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = qv.data().data() + (b * L + i) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[j]) continue;
          const T* kj = kv.data().data() + (b * L + j) * d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          srow[j] = s * sc;
          mx = std::max(mx, srow[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[j]) continue;
          const T e = std::exp(srow[j] - mx);
          P[i * L + j] = e;
          total += e;
        }
        if (total > T(0))
          for (std::size_t j = 0; j < L; ++j) P[i * L + j] /= total;
        T* oi = out.data().data() + (b * L + i) * d + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          const T p = P[i * L + j];
          if (p == T(0)) continue;
          const T* vj = vv.data().data() + (b * L + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  return q.record->record(
      std::move(out), {q.id, k.id, v.id},
      [qi_ = q.id, ki_ = k.id, vi_ = v.id, B, L, H, d, dh, sc,
       probs = std::move(probs)](ComputationRecord<T>& r, std::size_t self) {
        const auto& g = r.grad(self);
        const auto& qv = r.value(qi_);
        const auto& kv = r.value(ki_);
        const auto& vv = r.value(vi_);
        const bool need_q = r.requires_grad(qi_);
        const bool need_k = r.requires_grad(ki_);
        const bool need_v = r.requires_grad(vi_);
        T* gq = need_q ? r.grad(qi_).data() : nullptr;
        T* gk = need_k ? r.grad(ki_).data() : nullptr;
        T* gv = need_v ? r.grad(vi_).data() : nullptr;
        std::vector<T> dp(L), ds(L);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const T* P = probs.data() + ((b * H + h) * L) * L;
            for (std::size_t i = 0; i < L; ++i) {
              const T* gi = g.data() + (b * L + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < L; ++j) {
                const T p = P[i * L + j];
                if (p == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const T* vj = vv.data().data() + (b * L + j) * d + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dp[j] = s;
                dot += p * s;
                if (need_v) {
                  T* gvj = gv + (b * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * gi[c];
                }
              }
              for (std::size_t j = 0; j < L; ++j) ds[j] = P[i * L + j] * (dp[j] - dot) * sc;
              const T* qi = qv.data().data() + (b * L + i) * d + h * dh;
              T* gqi = need_q ? gq + (b * L + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < L; ++j) {
                if (ds[j] == T(0)) continue;
                const T* kj = kv.data().data() + (b * L + j) * d + h * dh;
                if (need_q)
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds[j] * kj[c];
                if (need_k) {
                  T* gkj = gk + (b * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

#define XMODLAB_INSTANTIATE_OPS(T)                                              \
  template T gelu_value<T>(T);                                                  \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                    \
  template Var<T> matmul_transposed<T>(Var<T>, Var<T>);                         \
  template Var<T> add<T>(Var<T>, Var<T>);                                       \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                  \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                            \
  template Var<T> scale<T>(Var<T>, T);                                          \
  template Var<T> sum<T>(Var<T>);                                               \
  template Var<T> softmax<T>(Var<T>, std::size_t);                              \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, double);                \
  template Var<T> gelu<T>(Var<T>);                                              \
  template Var<T> embedding_lookup<T>(Var<T>, std::span<const int>);            \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>, Reduction,     \
                                   bool*);                                      \
  template Var<T> dropout<T>(Var<T>, double, Rng&);                             \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::size_t>);         \
  template Var<T> index_add_rows<T>(Var<T>, Var<T>,                             \
                                    std::span<const std::size_t>);              \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, AttentionShape,          \
                               std::span<const std::uint8_t>);

XMODLAB_INSTANTIATE_OPS(float)
XMODLAB_INSTANTIATE_OPS(double)

#undef XMODLAB_INSTANTIATE_OPS

}  // namespace xmodlab
