#pragma once

#include <complex>
#include <vector>

namespace rcn {

struct EigResult {
  std::vector<std::complex<double>> values;
  bool converged = true;
};

// Eigenvalues of a dense real N x N matrix (row-major), via Householder
// reduction to upper Hessenberg form followed by Francis double-shift QR
// iteration with deflation. Matrices that fail to deflate within the
// iteration cap are flagged (converged = false) with the values computed so
// far.
EigResult eigenvalues(const std::vector<double>& a, int n);

}  // namespace rcn
