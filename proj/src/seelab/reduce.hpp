#pragma once

#include <algorithm>
#include <vector>

namespace seelab {

/// Mean with terms added in ascending order, so permuting the input cannot
/// change a single bit of the result.
inline double order_free_mean(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return terms.empty() ? 0.0 : s / static_cast<double>(terms.size());
}

}  // namespace seelab
