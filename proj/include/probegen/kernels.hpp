#pragma once

#include <cstddef>

namespace probegen {

// Dense kernels shared by the graph ops and the direct forward paths.
// All matrices are row-major; accumulation order within one output element is
// fixed, so results are bitwise reproducible.

// C(M,N) = A(M,K) * B(N,K)^T, i.e. C[m][n] = dot(A row m, B row n).
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    for (std::size_t m = 0; m < M; ++m) {
        const T* a = A + m * K;
        T* c = C + m * N;
        for (std::size_t n = 0; n < N; ++n) {
            const T* b = B + n * K;
            T acc = accumulate ? c[n] : T(0);
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[n] = acc;
        }
    }
}

// C(M,N) = A(M,K) * B(K,N)
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    for (std::size_t m = 0; m < M; ++m) {
        T* c = C + m * N;
        if (!accumulate)
            for (std::size_t n = 0; n < N; ++n) c[n] = T(0);
        const T* a = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            T av = a[k];
            const T* b = B + k * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C(M,N) = A(K,M)^T * B(K,N)
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    if (!accumulate)
        for (std::size_t i = 0; i < M * N; ++i) C[i] = T(0);
    for (std::size_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (std::size_t m = 0; m < M; ++m) {
            T av = a[m];
            T* c = C + m * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

inline std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                             std::size_t pad) {
    return (in - 1) * stride + kernel - 2 * pad;
}

// cols is (Ho*Wo, C*k*k) row-major; out-of-image taps read as zero.
template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t stride, std::size_t pad, T* cols) {
    std::size_t Ho = conv_out_extent(H, k, stride, pad);
    std::size_t Wo = conv_out_extent(W, k, stride, pad);
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            T* row = cols + (oy * Wo + ox) * C * k * k;
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t u = 0; u < k; ++u) {
                    long iy = static_cast<long>(oy * stride + u) - static_cast<long>(pad);
                    for (std::size_t v = 0; v < k; ++v) {
                        long ix = static_cast<long>(ox * stride + v) - static_cast<long>(pad);
                        T val = T(0);
                        if (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 && ix < static_cast<long>(W))
                            val = img[(c * H + static_cast<std::size_t>(iy)) * W +
                                      static_cast<std::size_t>(ix)];
                        row[(c * k + u) * k + v] = val;
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col; img must be zeroed by the caller when a
// fresh accumulation is wanted.
template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t stride, std::size_t pad, T* img) {
    std::size_t Ho = conv_out_extent(H, k, stride, pad);
    std::size_t Wo = conv_out_extent(W, k, stride, pad);
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            const T* row = cols + (oy * Wo + ox) * C * k * k;
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t u = 0; u < k; ++u) {
                    long iy = static_cast<long>(oy * stride + u) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        long ix = static_cast<long>(ox * stride + v) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                        img[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] +=
                            row[(c * k + u) * k + v];
                    }
                }
            }
        }
    }
}

}  // namespace probegen
