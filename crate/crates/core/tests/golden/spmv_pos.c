/* y(i) = A(i,j) * x(j) */
#include <stdint.h>
#include <string.h>

static int32_t search_before(const int32_t* pos, int32_t lo, int32_t hi, int32_t key) {
  /* largest k in [lo, hi) with pos[k] <= key */
  int32_t start = lo;
  while (hi - lo > 1) {
    int32_t mid = lo + (hi - lo) / 2;
    if (pos[mid] <= key) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo > start ? lo : start;
}

/*
 * out: y (dense, row-major)
 * dims[0]: y1_dimension
 * dims[1]: A1_dimension
 * dims[2]: A2_dimension
 * dims[3]: x1_dimension
 * pos[0], crd[0]: A2_pos, A2_crd
 * vals[0]: A_vals
 * vals[1]: x_vals
 */
void compute(double* out, const double** vals, const int32_t** pos, const int32_t** crd, const int32_t* dims) {
  const int32_t y1_dimension = dims[0];
  const int32_t A1_dimension = dims[1];
  const int32_t A2_dimension = dims[2];
  const int32_t x1_dimension = dims[3];
  const int32_t* A2_pos = pos[0];
  const int32_t* A2_crd = crd[0];
  const double* A_vals = vals[0];
  const double* x_vals = vals[1];
  double* y = out;
  memset(out, 0, sizeof(double) * (size_t)y1_dimension);
  {
    int32_t fpos_start_d_fpos = A2_pos[0];
    int32_t pA0 = search_before(A2_pos, 0, A1_dimension, fpos_start_d_fpos);
    for (int32_t fpos = A2_pos[0]; fpos < A2_pos[A1_dimension]; fpos++) {
      int32_t pA1 = fpos;
      while (A2_pos[pA0 + 1] <= pA1) {
        pA0 = pA0 + 1;
      }
      int32_t j = A2_crd[pA1];
      int32_t i = pA0;
      int32_t px0 = j;
      y[i] += A_vals[pA1] * x_vals[px0];
    }
  }
}
