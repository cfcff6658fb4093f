#pragma once

#include <span>
#include <vector>

#include "koi/common.h"
#include "koi/keystates.h"

namespace koi {

// Per-pixel displacement in pixels/frame; u is horizontal (column), v is
// vertical (row).
struct FlowField {
  Frame u;
  Frame v;
};

struct FlowParams {
  // Downscale factor between pyramid levels.
  double pyr_scale = 0.5;
  // Pyramid levels including full resolution. Levels smaller than the
  // expansion window are dropped.
  int levels = 2;
  // Side of the box window over which the displacement constraints are
  // averaged.
  int winsize = 13;
  // Half-size of the polynomial-expansion neighborhood.
  int poly_n = 5;
  // Std-dev of the Gaussian applicability in the expansion.
  double poly_sigma = 1.1;
  int iterations = 3;
};

// Dense flow from `a` to `b` by two-frame polynomial-expansion
// displacement estimation, refined coarse to fine.
FlowField farneback_flow(const Frame& a, const Frame& b,
                         const FlowParams& params = {});

// Mean over pixels of sqrt(u^2 + v^2).
double flow_magnitude(const FlowField& flow);

// Magnitudes m[j] = |F(frames[j-1], frames[j])| for j in [1, n); m[0] = 0.
std::vector<double> consecutive_flow_magnitudes(std::span<const Frame> frames,
                                                const FlowParams& params = {});

// For each open interval (I^s_{p-1}, I^s_p), with I^s_0 taken as frame 0,
// picks the j maximizing magnitudes[j]; ties go to the smallest j.
// Intervals with no interior index are skipped.
MotionIndexSet motion_keystates_from_magnitudes(
    std::span<const double> magnitudes, const SemanticIndexSet& semantic);

MotionIndexSet motion_keystates(std::span<const Frame> frames,
                                const SemanticIndexSet& semantic,
                                const FlowParams& params = {});

// The open intervals searched by motion_keystates, as (lo, hi) pairs.
std::vector<std::pair<int, int>> semantic_intervals(
    const SemanticIndexSet& semantic);

}  // namespace koi
