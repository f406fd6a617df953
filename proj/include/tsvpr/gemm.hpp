#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

// Row-major matrix-product kernels shared by the layers and the matcher.
// All kernels accumulate into the destination (c += ...). The inner tile uses
// GCC/Clang vector extensions so it maps onto whatever SIMD width -march gives.

namespace tsvpr::gemm {

namespace detail {

constexpr std::size_t kVectorBytes = 64;
constexpr std::size_t kRowTile = 8;
constexpr std::size_t kVectorsPerTile = 2;
constexpr std::size_t kDepthBlock = 256;

template <class T>
struct Vec {
    typedef T type __attribute__((vector_size(kVectorBytes)));
};

template <class T>
constexpr std::size_t lanes() {
    return kVectorBytes / sizeof(T);
}

template <class T>
constexpr std::size_t col_tile() {
    return kVectorsPerTile * lanes<T>();
}

// kRowTile x col_tile register block over one packed depth panel.
template <class T>
inline void tile(const T* __restrict a, std::size_t lda, const T* __restrict panel, T* __restrict c,
                 std::size_t ldc, std::size_t depth) {
    using vec = typename Vec<T>::type;
    constexpr std::size_t L = lanes<T>();
    constexpr std::size_t NR = col_tile<T>();
    vec acc[kRowTile][kVectorsPerTile];
    for (std::size_t r = 0; r < kRowTile; ++r)
        for (std::size_t v = 0; v < kVectorsPerTile; ++v)
            std::memcpy(&acc[r][v], c + r * ldc + v * L, sizeof(vec));
    for (std::size_t p = 0; p < depth; ++p) {
        vec b[kVectorsPerTile];
        for (std::size_t v = 0; v < kVectorsPerTile; ++v)
            std::memcpy(&b[v], panel + p * NR + v * L, sizeof(vec));
        for (std::size_t r = 0; r < kRowTile; ++r) {
            const T av = a[r * lda + p];
            for (std::size_t v = 0; v < kVectorsPerTile; ++v) acc[r][v] += av * b[v];
        }
    }
    for (std::size_t r = 0; r < kRowTile; ++r)
        for (std::size_t v = 0; v < kVectorsPerTile; ++v)
            std::memcpy(c + r * ldc + v * L, &acc[r][v], sizeof(vec));
}

}  // namespace detail

/// c[m x n] += a[m x k] * b[k x n]
template <class T>
void nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    using namespace detail;
    constexpr std::size_t NR = col_tile<T>();
    const std::size_t m_main = m - m % kRowTile;
    const std::size_t n_main = n - n % NR;
    std::vector<T> panel(std::min(kDepthBlock, k) * n_main);
    for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
        const std::size_t depth = std::min(kDepthBlock, k - p0);
        for (std::size_t j = 0; j < n_main; j += NR)
            for (std::size_t p = 0; p < depth; ++p)
                std::memcpy(&panel[j * depth + p * NR], b + (p0 + p) * n + j, NR * sizeof(T));

        for (std::size_t j = 0; j < n_main; j += NR) {
            const T* packed = panel.data() + j * depth;
            for (std::size_t i = 0; i < m_main; i += kRowTile)
                tile(a + i * k + p0, k, packed, c + i * n + j, n, depth);
            for (std::size_t i = m_main; i < m; ++i) {
                T* crow = c + i * n + j;
                for (std::size_t p = 0; p < depth; ++p) {
                    const T av = a[i * k + p0 + p];
                    const T* brow = packed + p * NR;
                    for (std::size_t q = 0; q < NR; ++q) crow[q] += av * brow[q];
                }
            }
        }
        if (n_main < n) {
            for (std::size_t i = 0; i < m; ++i) {
                T* crow = c + i * n;
                for (std::size_t p = 0; p < depth; ++p) {
                    const T av = a[i * k + p0 + p];
                    const T* brow = b + (p0 + p) * n;
                    for (std::size_t q = n_main; q < n; ++q) crow[q] += av * brow[q];
                }
            }
        }
    }
}

/// c[k x n] += a[m x k]^T * b[m x n]
template <class T>
void tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<T> at(k * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
    nn(at.data(), b, c, k, m, n);
}

/// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    nn(a, bt.data(), c, m, k, n);
}

}  // namespace tsvpr::gemm
