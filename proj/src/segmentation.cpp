#include "ponet/segmentation.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace ponet {

void SegmentMap::validate() const {
  if (ids.empty()) throw ShapeError("SegmentMap covers no tokens");
  if (k <= 0) throw ShapeError("SegmentMap has no segments");
  if (ids.front() != 0) throw ShapeError("SegmentMap ids must start at 0");
  for (size_t i = 1; i < ids.size(); ++i) {
    const int64_t step = ids[i] - ids[i - 1];
    if (step < 0 || step > 1)
      throw ShapeError("SegmentMap ids must be non-decreasing without gaps");
  }
  if (ids.back() != k - 1)
    throw ShapeError("SegmentMap ids must cover [0, K)");
  if (boundaries.size() != static_cast<size_t>(k) || boundaries.front() != 0)
    throw ShapeError("SegmentMap boundaries malformed");
  for (size_t s = 1; s < boundaries.size(); ++s)
    if (boundaries[s] <= boundaries[s - 1])
      throw ShapeError("SegmentMap boundaries must be strictly increasing");
}

SegmentMap SegmentMap::from_ids(std::vector<int64_t> ids) {
  SegmentMap m;
  m.ids = std::move(ids);
  if (m.ids.empty()) throw ShapeError("SegmentMap covers no tokens");
  m.k = m.ids.back() + 1;
  m.boundaries.push_back(0);
  for (size_t i = 1; i < m.ids.size(); ++i)
    if (m.ids[i] != m.ids[i - 1])
      m.boundaries.push_back(static_cast<int64_t>(i));
  m.validate();
  return m;
}

SegmentMap segment_even(int64_t n_tokens, int64_t k) {
  if (k <= 0 || k > n_tokens)
    throw ConfigError("segment_even requires 1 <= k <= n_tokens, got k=" +
                      std::to_string(k) + " n=" + std::to_string(n_tokens));
  const int64_t base = n_tokens / k;
  const int64_t extra = n_tokens % k;
  std::vector<int64_t> ids;
  ids.reserve(static_cast<size_t>(n_tokens));
  for (int64_t s = 0; s < k; ++s) {
    const int64_t len = base + (s < extra ? 1 : 0);
    ids.insert(ids.end(), static_cast<size_t>(len), s);
  }
  return SegmentMap::from_ids(std::move(ids));
}

SegmentMap segment_by_separators(const std::vector<int64_t>& tokens,
                                 int64_t cls_id, int64_t sep_id) {
  if (tokens.empty())
    throw InputError("segment_by_separators on empty sequence");
  // A token is "special" (its own segment) if it is the leading cls or any
  // sep; a new segment starts whenever this token or the previous one is
  // special.
  auto special = [&](size_t i) {
    return (i == 0 && tokens[i] == cls_id) || tokens[i] == sep_id;
  };
  std::vector<int64_t> ids(tokens.size());
  ids[0] = 0;
  for (size_t i = 1; i < tokens.size(); ++i)
    ids[i] = ids[i - 1] + ((special(i) || special(i - 1)) ? 1 : 0);
  return SegmentMap::from_ids(std::move(ids));
}

SegmentMap segment_by_markers(const std::vector<int64_t>& marker_positions,
                              int64_t n_tokens) {
  if (n_tokens <= 0) throw InputError("segment_by_markers on empty sequence");
  std::set<int64_t> breaks;
  for (int64_t p : marker_positions) {
    if (p < 0 || p >= n_tokens)
      throw InputError("marker position out of range: " + std::to_string(p));
    if (p + 1 < n_tokens) breaks.insert(p + 1);  // break after the marker
  }
  std::vector<int64_t> ids(static_cast<size_t>(n_tokens));
  int64_t seg = 0;
  for (int64_t i = 0; i < n_tokens; ++i) {
    if (breaks.count(i)) ++seg;
    ids[static_cast<size_t>(i)] = seg;
  }
  return SegmentMap::from_ids(std::move(ids));
}

}  // namespace ponet
