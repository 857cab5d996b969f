#include "rcn/eig.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rcn {

namespace {

inline double sign_of(double a, double b) { return b >= 0 ? std::abs(a) : -std::abs(a); }

// Householder reduction to upper Hessenberg form, in place.
void hessenberg(std::vector<double>& h, int n) {
  std::vector<double> v(n);
  for (int k = 0; k + 2 < n; ++k) {
    double norm2 = 0;
    for (int i = k + 1; i < n; ++i) norm2 += h[i * n + k] * h[i * n + k];
    if (norm2 == 0) continue;
    const double alpha = -sign_of(std::sqrt(norm2), h[(k + 1) * n + k]);
    double vnorm2 = norm2 - 2 * alpha * h[(k + 1) * n + k] + alpha * alpha;
    if (vnorm2 == 0) continue;
    for (int i = k + 1; i < n; ++i) v[i] = h[i * n + k];
    v[k + 1] -= alpha;
    const double beta = 2.0 / vnorm2;
    // left: H = (I - beta v v^T) H
    for (int j = k; j < n; ++j) {
      double dot = 0;
      for (int i = k + 1; i < n; ++i) dot += v[i] * h[i * n + j];
      dot *= beta;
      for (int i = k + 1; i < n; ++i) h[i * n + j] -= dot * v[i];
    }
    // right: H = H (I - beta v v^T)
    for (int i = 0; i < n; ++i) {
      double dot = 0;
      for (int j = k + 1; j < n; ++j) dot += h[i * n + j] * v[j];
      dot *= beta;
      for (int j = k + 1; j < n; ++j) h[i * n + j] -= dot * v[j];
    }
  }
  for (int i = 2; i < n; ++i)
    for (int j = 0; j < i - 1; ++j) h[i * n + j] = 0;
}

}  // namespace

// Francis double-shift QR with deflation on the Hessenberg form.
EigResult eigenvalues(const std::vector<double>& a, int n) {
  if (n < 0 || static_cast<int>(a.size()) != n * n)
    throw std::invalid_argument("eigenvalues: matrix size does not match n");
  EigResult res;
  res.values.assign(n, {0.0, 0.0});
  if (n == 0) return res;

  std::vector<double> h = a;
  hessenberg(h, n);
  auto H = [&](int i, int j) -> double& { return h[i * n + j]; };

  const double eps = std::numeric_limits<double>::epsilon();
  double anorm = 0;
  for (int i = 0; i < n; ++i)
    for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(H(i, j));
  if (anorm == 0) anorm = 1;

  int nn = n - 1;
  double t = 0;
  double p = 0, q = 0, r = 0, x = 0, y = 0, z = 0, s = 0, w = 0;
  while (nn >= 0) {
    int its = 0;
    int l;
    do {
      for (l = nn; l >= 1; --l) {
        s = std::abs(H(l - 1, l - 1)) + std::abs(H(l, l));
        if (s == 0) s = anorm;
        if (std::abs(H(l, l - 1)) <= eps * s) {
          H(l, l - 1) = 0;
          break;
        }
      }
      x = H(nn, nn);
      if (l == nn) {  // one real eigenvalue
        res.values[nn] = {x + t, 0.0};
        --nn;
        continue;
      }
      y = H(nn - 1, nn - 1);
      w = H(nn, nn - 1) * H(nn - 1, nn);
      if (l == nn - 1) {  // 2x2 block
        p = 0.5 * (y - x);
        q = p * p + w;
        z = std::sqrt(std::abs(q));
        x += t;
        if (q >= 0) {  // real pair
          z = p + sign_of(z, p);
          res.values[nn - 1] = res.values[nn] = {x + z, 0.0};
          if (z != 0) res.values[nn] = {x - w / z, 0.0};
        } else {
          res.values[nn - 1] = {x + p, z};
          res.values[nn] = {x + p, -z};
        }
        nn -= 2;
      } else {
        if (its == 30) {
          res.converged = false;
          // abandon this block; record diagonal as the best estimate
          for (int i = l; i <= nn; ++i) res.values[i] = {H(i, i) + t, 0.0};
          nn = l - 1;
          break;
        }
        if (its == 10 || its == 20) {  // exceptional shift
          t += x;
          for (int i = 0; i <= nn; ++i) H(i, i) -= x;
          s = std::abs(H(nn, nn - 1)) + std::abs(H(nn - 1, nn - 2));
          y = x = 0.75 * s;
          w = -0.4375 * s * s;
        }
        ++its;
        int m;
        for (m = nn - 2; m >= l; --m) {
          z = H(m, m);
          r = x - z;
          s = y - z;
          p = (r * s - w) / H(m + 1, m) + H(m, m + 1);
          q = H(m + 1, m + 1) - z - r - s;
          r = H(m + 2, m + 1);
          s = std::abs(p) + std::abs(q) + std::abs(r);
          p /= s;
          q /= s;
          r /= s;
          if (m == l) break;
          const double u = std::abs(H(m, m - 1)) * (std::abs(q) + std::abs(r));
          const double v = std::abs(p) * (std::abs(H(m - 1, m - 1)) +
                                          std::abs(z) +
                                          std::abs(H(m + 1, m + 1)));
          if (u <= eps * v) break;
        }
        for (int i = m + 2; i <= nn; ++i) {
          H(i, i - 2) = 0;
          if (i > m + 2) H(i, i - 3) = 0;
        }
        for (int k = m; k <= nn - 1; ++k) {  // bulge chase
          if (k != m) {
            p = H(k, k - 1);
            q = H(k + 1, k - 1);
            r = k != nn - 1 ? H(k + 2, k - 1) : 0.0;
            x = std::abs(p) + std::abs(q) + std::abs(r);
            if (x != 0) {
              p /= x;
              q /= x;
              r /= x;
            }
          }
          s = sign_of(std::sqrt(p * p + q * q + r * r), p);
          if (s == 0) continue;
          if (k == m) {
            if (l != m) H(k, k - 1) = -H(k, k - 1);
          } else {
            H(k, k - 1) = -s * x;
          }
          p += s;
          x = p / s;
          y = q / s;
          z = r / s;
          q /= p;
          r /= p;
          for (int j = k; j <= nn; ++j) {  // row transform
            p = H(k, j) + q * H(k + 1, j);
            if (k != nn - 1) {
              p += r * H(k + 2, j);
              H(k + 2, j) -= p * z;
            }
            H(k + 1, j) -= p * y;
            H(k, j) -= p * x;
          }
          const int mmin = nn < k + 3 ? nn : k + 3;
          for (int i = l; i <= mmin; ++i) {  // column transform
            p = x * H(i, k) + y * H(i, k + 1);
            if (k != nn - 1) {
              p += z * H(i, k + 2);
              H(i, k + 2) -= p * r;
            }
            H(i, k + 1) -= p * q;
            H(i, k) -= p;
          }
        }
      }
    } while (l < nn - 1);
  }
  return res;
}

}  // namespace rcn
