#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace dva {

// Partition of example indices into G blocks of near-equal size, formed by
// ranking examples by input value. G=1 is global normalization.
struct Segmentation {
  std::size_t G = 1;
  std::vector<std::uint32_t> assign;  // example index -> segment id

  static Segmentation build(std::span<const double> x, std::size_t G) {
    if (G == 0) throw std::invalid_argument("segmentation: G must be positive");
    const std::size_t m = x.size();
    if (m < 2 * G) throw std::invalid_argument("segmentation: segments need at least 2 elements");
    std::vector<std::uint32_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return x[a] != x[b] ? x[a] < x[b] : a < b;
    });
    Segmentation s;
    s.G = G;
    s.assign.resize(m);
    for (std::size_t rank = 0; rank < m; ++rank)
      s.assign[order[rank]] = static_cast<std::uint32_t>(rank * G / m);
    return s;
  }

  std::size_t size() const { return assign.size(); }
};

struct SegmentMoments {
  std::vector<double> mean;
  std::vector<double> var;  // population variance
  std::vector<std::size_t> count;
};

inline SegmentMoments segment_moments(std::span<const double> v, const Segmentation& seg) {
  if (v.size() != seg.size()) throw std::invalid_argument("segmentation: index misalignment");
  SegmentMoments m;
  m.mean.assign(seg.G, 0.0);
  m.var.assign(seg.G, 0.0);
  m.count.assign(seg.G, 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    m.mean[seg.assign[i]] += v[i];
    ++m.count[seg.assign[i]];
  }
  for (std::size_t g = 0; g < seg.G; ++g) m.mean[g] /= double(m.count[g]);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - m.mean[seg.assign[i]];
    m.var[seg.assign[i]] += d * d;
  }
  for (std::size_t g = 0; g < seg.G; ++g) m.var[g] /= double(m.count[g]);
  return m;
}

// Per-segment projection onto { zero mean, unit population variance }.
inline void normalize(std::span<double> eps_hat, const Segmentation& seg) {
  SegmentMoments m = segment_moments(eps_hat, seg);
  for (std::size_t g = 0; g < seg.G; ++g) {
    if (m.count[g] < 2) throw std::invalid_argument("normalize: segment with fewer than 2 elements");
    if (m.var[g] == 0.0) throw std::runtime_error("normalize: degenerate segment (zero variance)");
  }
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    const std::uint32_t g = seg.assign[i];
    eps_hat[i] = (eps_hat[i] - m.mean[g]) / std::sqrt(m.var[g]);
  }
}

}  // namespace dva
