#pragma once

// Reference computations written independently of the library: plain
// loops, no FFTW, no runtime.

#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <numbers>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

/// Naive O(n^2) DFT of one sequence, exp(-2 pi i k m / n) with exact
/// reduction of k*m modulo n before the angle is formed.
inline std::vector<cd> dft(const std::vector<cd>& x) {
  const std::size_t n = x.size();
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    long double re = 0, im = 0;
    for (std::size_t m = 0; m < n; ++m) {
      const long double a = -2.0L * std::numbers::pi_v<long double> *
                            static_cast<long double>((k * m) % n) / static_cast<long double>(n);
      const long double c = std::cos(a), s = std::sin(a);
      re += x[m].real() * c - x[m].imag() * s;
      im += x[m].real() * s + x[m].imag() * c;
    }
    out[k] = cd(static_cast<double>(re), static_cast<double>(im));
  }
  return out;
}

/// 3D DFT of a row-major n1 x n2 x n3 array (dimension 3 fastest), one axis
/// at a time.
inline std::vector<cd> dft3(std::vector<cd> a, std::size_t n1, std::size_t n2, std::size_t n3) {
  auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> cd& {
    return a[(i * n2 + j) * n3 + k];
  };
  std::vector<cd> line;
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      line.assign(n3, 0);
      for (std::size_t k = 0; k < n3; ++k) line[k] = at(i, j, k);
      line = dft(line);
      for (std::size_t k = 0; k < n3; ++k) at(i, j, k) = line[k];
    }
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t k = 0; k < n3; ++k) {
      line.assign(n2, 0);
      for (std::size_t j = 0; j < n2; ++j) line[j] = at(i, j, k);
      line = dft(line);
      for (std::size_t j = 0; j < n2; ++j) at(i, j, k) = line[j];
    }
  for (std::size_t j = 0; j < n2; ++j)
    for (std::size_t k = 0; k < n3; ++k) {
      line.assign(n1, 0);
      for (std::size_t i = 0; i < n1; ++i) line[i] = at(i, j, k);
      line = dft(line);
      for (std::size_t i = 0; i < n1; ++i) at(i, j, k) = line[i];
    }
  return a;
}

/// Breadth-first levels from `root`; -1 when unreachable.
inline std::vector<std::int64_t> bfs_levels(const std::vector<std::vector<std::uint64_t>>& adj,
                                            std::uint64_t root) {
  std::vector<std::int64_t> level(adj.size(), -1);
  std::deque<std::uint64_t> queue{root};
  level[root] = 0;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : adj[u]) {
      if (level[v] < 0) {
        level[v] = level[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return level;
}

/// Sum of squares accumulated in index order.
inline double sum_of_squares(const std::vector<double>& x) {
  double total = 0.0;
  for (double v : x) total += v * v;
  return total;
}

}  // namespace oracle
