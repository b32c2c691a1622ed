#pragma once

// Hard partitions of {0..n-1} and pair-counting comparisons.

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "dynclust/common.hpp"

namespace dynclust {

using Partition = std::vector<int>;  // cluster label per unit

// Canonical labeling: clusters numbered by first appearance.
inline Partition canonicalize(const Partition& part) {
  std::unordered_map<int, int> relabel;
  Partition out(part.size());
  int next = 0;
  for (std::size_t i = 0; i < part.size(); ++i) {
    auto it = relabel.find(part[i]);
    if (it == relabel.end()) it = relabel.emplace(part[i], next++).first;
    out[i] = it->second;
  }
  return out;
}

inline int num_clusters(const Partition& part) {
  int mx = -1;
  for (int c : canonicalize(part)) mx = std::max(mx, c);
  return mx + 1;
}

// Adjusted Rand index by the standard pair-counting formula.
inline double adjusted_rand_index(const Partition& u, const Partition& v) {
  if (u.size() != v.size())
    throw invalid_parameter("adjusted_rand_index: partitions differ in size");
  Partition a = canonicalize(u), b = canonicalize(v);
  int ka = num_clusters(a), kb = num_clusters(b);
  std::vector<std::vector<long>> table(ka, std::vector<long>(kb, 0));
  std::vector<long> row(ka, 0), col(kb, 0);
  long n = static_cast<long>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[a[i]][b[i]] += 1;
    row[a[i]] += 1;
    col[b[i]] += 1;
  }
  auto choose2 = [](long x) { return 0.5 * x * (x - 1); };
  double sum_nij = 0.0, sum_row = 0.0, sum_col = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) sum_nij += choose2(table[i][j]);
  for (int i = 0; i < ka; ++i) sum_row += choose2(row[i]);
  for (int j = 0; j < kb; ++j) sum_col += choose2(col[j]);
  double total = choose2(n);
  double expected = sum_row * sum_col / total;
  double max_index = 0.5 * (sum_row + sum_col);
  if (std::abs(max_index - expected) < 1e-12) return 1.0;  // both trivial partitions
  return (sum_nij - expected) / (max_index - expected);
}

// Variation of information between two hard partitions, in bits.
inline double variation_of_information(const Partition& u, const Partition& v) {
  Partition a = canonicalize(u), b = canonicalize(v);
  int ka = num_clusters(a), kb = num_clusters(b);
  double n = static_cast<double>(a.size());
  std::vector<std::vector<double>> joint(ka, std::vector<double>(kb, 0.0));
  std::vector<double> pa(ka, 0.0), pb(kb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[a[i]][b[i]] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double h_a = 0.0, h_b = 0.0, mi = 0.0;
  for (int i = 0; i < ka; ++i)
    if (pa[i] > 0) h_a -= pa[i] * std::log2(pa[i]);
  for (int j = 0; j < kb; ++j)
    if (pb[j] > 0) h_b -= pb[j] * std::log2(pb[j]);
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j)
      if (joint[i][j] > 0) mi += joint[i][j] * std::log2(joint[i][j] / (pa[i] * pb[j]));
  return h_a + h_b - 2.0 * mi;
}

}  // namespace dynclust
