#pragma once

// Contiguous segment maps consumed by segment max-pooling. Three policies:
// even-K split, separator-token split, and explicit break markers.

#include <cstdint>
#include <vector>

#include "ponet/common.hpp"

namespace ponet {

struct SegmentMap {
  std::vector<int64_t> ids;         // per-token segment index, non-decreasing
  int64_t k = 0;                    // segment count
  std::vector<int64_t> boundaries;  // start offset of each segment

  int64_t tokens() const { return static_cast<int64_t>(ids.size()); }
  int64_t segment_of(int64_t n) const { return ids[static_cast<size_t>(n)]; }
  int64_t segment_begin(int64_t s) const {
    return boundaries[static_cast<size_t>(s)];
  }
  int64_t segment_end(int64_t s) const {
    return s + 1 < k ? boundaries[static_cast<size_t>(s + 1)] : tokens();
  }

  static SegmentMap from_ids(std::vector<int64_t> ids);
  void validate() const;
};

// Split n_tokens into k segments whose lengths differ by at most one;
// the first (n_tokens mod k) segments take the extra token.
SegmentMap segment_even(int64_t n_tokens, int64_t k);

// Leading cls token and every sep token form their own segments; each maximal
// run of other tokens between them is one segment.
SegmentMap segment_by_separators(const std::vector<int64_t>& tokens,
                                 int64_t cls_id, int64_t sep_id);

// Segments break immediately after each marker position.
SegmentMap segment_by_markers(const std::vector<int64_t>& marker_positions,
                              int64_t n_tokens);

}  // namespace ponet
