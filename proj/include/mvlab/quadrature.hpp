#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace mvlab {

// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  std::vector<double> x;
  std::vector<double> w;

  explicit GaussLegendre(int n) : x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double dz = p0 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[static_cast<std::size_t>(i)] = z;
      w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }

  template <class F>
  double integrate(F&& f, double a, double b) const {
    const double h = 0.5 * (b - a), c = 0.5 * (a + b);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * f(c + h * x[i]);
    return s * h;
  }

  // Composite rule over [a, b] with panels no wider than `width`.
  template <class F>
  double composite(F&& f, double a, double b, double width) const {
    if (b <= a) return 0.0;
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / width)));
    const double h = (b - a) / panels;
    double s = 0.0;
    for (int p = 0; p < panels; ++p) s += integrate(f, a + p * h, a + (p + 1) * h);
    return s;
  }
};

}  // namespace mvlab
