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

#ifndef XMODLAB_KERNELS_HPP_
#define XMODLAB_KERNELS_HPP_

#include <cstddef>
#include <vector>

namespace xmodlab::kernels {

// Row-major GEMM kernels. Every output element is accumulated over the inner
// dimension in ascending order and independently of the other rows, so a
// row's result does not depend on how many rows are in the call.

// c[m x n] (+)= a[m x k] * b[k x n]
// Four rows of c share each pass over b; every element still sums its terms
// one after another in p order.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = brow[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const T* __restrict b0 = b + p * n;
    const T* __restrict b1 = b0 + n;
    const T* __restrict b2 = b1 + n;
    const T* __restrict b3 = b2 + n;
    for (std::size_t i = 0; i < m; ++i) {
      const T x0 = a[p * m + i], x1 = a[(p + 1) * m + i], x2 = a[(p + 2) * m + i],
              x3 = a[(p + 3) * m + i];
      T* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        T t = crow[j];
        t += x0 * b0[j];
        t += x1 * b1[j];
        t += x2 * b2[j];
        t += x3 * b3[j];
        crow[j] = t;
      }
    }
  }
  for (; p < k; ++p) {
    const T* arow = a + p * m;
    const T* __restrict brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

}  // namespace xmodlab::kernels

#endif  // XMODLAB_KERNELS_HPP_
