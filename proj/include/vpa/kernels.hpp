#pragma once

#include <cstddef>

namespace vpa::kernels {

// c[n x p] = a[n x m] * b[m x p], OpenMP over output rows. Rows are
// independent, so results are bit-identical to the serial path for any
// thread count.
void matmul(const double* a, const double* b, double* c, int n, int m, int p);

// c[n x p] = a[n x m] * b[p x m]^T
void matmul_bt(const double* a, const double* b, double* c, int n, int m,
               int p);

// c[m x p] += a[n x m]^T * b[n x p]
void matmul_at_acc(const double* a, const double* b, double* c, int n, int m,
                   int p);

namespace serial {
// reference implementations kept for testing and benchmarking
void matmul(const double* a, const double* b, double* c, int n, int m, int p);
void matmul_bt(const double* a, const double* b, double* c, int n, int m,
               int p);
void matmul_at_acc(const double* a, const double* b, double* c, int n, int m,
                   int p);
}  // namespace serial

}  // namespace vpa::kernels
