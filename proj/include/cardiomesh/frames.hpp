#pragma once

#include <algorithm>
#include <vector>

#include "cardiomesh/labelgrid.hpp"

namespace cardio {

enum class EdPolicy { FirstFrame, MaxLv };

namespace frames_detail {

// Per-frame LV-cavity voxel counts summed across views. The SAX contribution
// is restricted to its five mid-slices floor(nz/2)±2, clipped to the valid
// range. Views without an LV-cavity label contribute nothing. Optionally each
// view's transient is normalized by its own maximum before summing.
inline std::vector<double> lv_transient(const ViewSet& views, bool normalize_per_view) {
  require(!views.volumes.empty(), "lv_transient: no views present");
  int nt = views.nt();
  std::vector<double> total(nt, 0.0);
  for (const auto& [view, vol] : views.volumes) {
    auto code = vol.label_code(label::LV_CAVITY);
    if (!code) continue;
    std::optional<std::pair<int, int>> slices;
    if (view == View::SAX) {
      int m = vol.nz() / 2;
      slices = {std::max(0, m - 2), std::min(vol.nz() - 1, m + 2)};
    }
    std::vector<double> counts(nt);
    for (int t = 0; t < nt; ++t)
      counts[t] = static_cast<double>(count_label(vol, t, *code, slices));
    if (normalize_per_view) {
      double mx = *std::max_element(counts.begin(), counts.end());
      if (mx > 0)
        for (double& c : counts) c /= mx;
    }
    for (int t = 0; t < nt; ++t) total[t] += counts[t];
  }
  return total;
}

}  // namespace frames_detail

inline int select_ed(const ViewSet& views, EdPolicy policy = EdPolicy::FirstFrame,
                     bool normalize_per_view = false) {
  if (policy == EdPolicy::FirstFrame) return 0;
  auto total = frames_detail::lv_transient(views, normalize_per_view);
  double mx = *std::max_element(total.begin(), total.end());
  require(mx > 0, "select_ed: no LV-cavity voxels in any frame of any view");
  for (int t = 0; t < static_cast<int>(total.size()); ++t)
    if (total[t] == mx) return t;
  return 0;
}

// ES = frame minimizing the summed LV-cavity transient; ties broken by the
// smallest frame index.
inline int select_es(const ViewSet& views, bool normalize_per_view = false) {
  auto total = frames_detail::lv_transient(views, normalize_per_view);
  double sum = 0;
  for (double v : total) sum += v;
  require(sum > 0, "select_es: no LV-cavity voxels in any frame (segmentation failure?)");
  double mn = *std::min_element(total.begin(), total.end());
  for (int t = 0; t < static_cast<int>(total.size()); ++t)
    if (total[t] == mn) return t;
  return 0;
}

}  // namespace cardio
