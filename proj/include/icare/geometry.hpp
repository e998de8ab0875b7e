#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "icare/tape.hpp"
#include "icare/tensor.hpp"

namespace icare {

/// Axis-aligned box in raster-pixel coordinates; y grows downward, so the
/// bottom edge (y_max) is the edge nearest the ego vehicle.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_max >= x_min && y_max >= y_min; }

  Box clipped(double w, double h) const {
    return Box{std::clamp(x_min, 0.0, w), std::clamp(y_min, 0.0, h), std::clamp(x_max, 0.0, w),
               std::clamp(y_max, 0.0, h)};
  }

  bool operator==(const Box&) const = default;
};

/// Total order used wherever box ties must break deterministically.
inline bool box_less(const Box& a, const Box& b) {
  if (a.x_min != b.x_min) return a.x_min < b.x_min;
  if (a.y_min != b.y_min) return a.y_min < b.y_min;
  if (a.x_max != b.x_max) return a.x_max < b.x_max;
  return a.y_max < b.y_max;
}

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

/// Greedy non-maximum suppression. Returns indices into `boxes` in
/// descending score order (ties broken by lower index); a box is suppressed
/// iff its IoU with an already-kept box exceeds `iou_threshold` strictly.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                                    const std::vector<double>& scores, double iou_threshold) {
  if (boxes.size() != scores.size())
    throw UsageError("nms: " + std::to_string(boxes.size()) + " boxes vs " +
                     std::to_string(scores.size()) + " scores");
  for (double s : scores)
    if (!std::isfinite(s)) throw UsageError("nms: non-finite score");
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw UsageError("nms: threshold must be in [0,1]");

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });

  std::vector<std::size_t> kept;
  for (std::size_t cand : order) {
    bool suppressed = false;
    for (std::size_t k : kept)
      if (iou(boxes[cand], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Eq.-style location descriptor of a box: bottom-center point, height,
/// width — raw raster pixels plus the normalized variant.
struct LocationFeature {
  double cx_bottom = 0, y_bottom = 0, h = 0, w = 0;
  double norm_cx = 0, norm_y = 0, norm_h = 0, norm_w = 0;

  std::array<double, 4> raw() const { return {cx_bottom, y_bottom, h, w}; }
  std::array<double, 4> normalized() const { return {norm_cx, norm_y, norm_h, norm_w}; }
};

inline LocationFeature location_feature(const Box& b, double raster_w, double raster_h) {
  LocationFeature f;
  f.cx_bottom = 0.5 * (b.x_min + b.x_max);
  f.y_bottom = b.y_max;
  f.h = b.y_max - b.y_min;
  f.w = b.x_max - b.x_min;
  f.norm_cx = f.cx_bottom / raster_w;
  f.norm_y = f.y_bottom / raster_h;
  f.norm_h = f.h / raster_h;
  f.norm_w = f.w / raster_w;
  return f;
}

// ---------------------------------------------------------------------------
// RoI max pooling
// ---------------------------------------------------------------------------

namespace detail {

struct RoiBins {
  // per bin: [start, end) cell ranges, clamped, at least one cell
  std::vector<Index> r0, r1, c0, c1;
};

inline RoiBins roi_bins(const Box& roi, Index H, Index W, Index P) {
  auto edges = [P](double lo, double hi, Index n_cells, std::vector<Index>& starts,
                   std::vector<Index>& ends) {
    const double extent = hi - lo;
    for (Index i = 0; i < P; ++i) {
      double a = lo + static_cast<double>(i) * extent / static_cast<double>(P);
      double b = lo + static_cast<double>(i + 1) * extent / static_cast<double>(P);
      Index s = static_cast<Index>(std::floor(a));
      Index e = static_cast<Index>(std::ceil(b));
      s = std::clamp<Index>(s, 0, n_cells - 1);
      e = std::clamp<Index>(e, 0, n_cells);
      if (e <= s) e = s + 1;  // min one cell
      starts.push_back(s);
      ends.push_back(e);
    }
  };
  RoiBins bins;
  edges(roi.y_min, roi.y_max, H, bins.r0, bins.r1);
  edges(roi.x_min, roi.x_max, W, bins.c0, bins.c1);
  return bins;
}

}  // namespace detail

/// Max-pools `roi` of a [C x H x W] map into [C x P x P]; `argmax` (same
/// shape, flat cell indices into the map) records which cell won each bin,
/// first cell in row-major scan order on ties.
template <typename S>
Tensor<S> roi_pool_with_argmax(const Tensor<S>& map, const Box& roi, Index P,
                               std::vector<Index>* argmax = nullptr) {
  if (map.rank() != 3)
    throw ShapeError("roi_pool: expected [C x H x W] map, got " + shape_str(map.shape()));
  if (P < 1) throw ConfigError("roi_pool: output size must be >= 1");
  const Index C = map.extent(0), H = map.extent(1), W = map.extent(2);
  const auto bins = detail::roi_bins(roi, H, W, P);
  Tensor<S> out({C, P, P});
  if (argmax) argmax->assign(static_cast<std::size_t>(C * P * P), -1);
  for (Index c = 0; c < C; ++c) {
    const S* plane = map.data() + c * H * W;
    for (Index i = 0; i < P; ++i)
      for (Index j = 0; j < P; ++j) {
        S best = std::numeric_limits<S>::lowest();
        Index best_cell = -1;
        for (Index r = bins.r0[static_cast<std::size_t>(i)]; r < bins.r1[static_cast<std::size_t>(i)]; ++r)
          for (Index col = bins.c0[static_cast<std::size_t>(j)]; col < bins.c1[static_cast<std::size_t>(j)];
               ++col) {
            const S v = plane[r * W + col];
            if (v > best) {
              best = v;
              best_cell = r * W + col;
            }
          }
        out[(c * P + i) * P + j] = best;
        if (argmax) (*argmax)[static_cast<std::size_t>((c * P + i) * P + j)] = best_cell;
      }
  }
  return out;
}

/// Tape op: gradient flows only to each bin's argmax cell.
template <typename S>
Var roi_pool(Tape<S>& t, Var map, const Box& roi, Index P) {
  std::vector<Index> argmax;
  Tensor<S> out = roi_pool_with_argmax(t.value(map), roi, P, &argmax);
  const Index C = t.value(map).extent(0), H = t.value(map).extent(1), W = t.value(map).extent(2);
  Var yv = t.make(std::move(out), nullptr);
  t.set_backward(yv, [&t, map, yv, C, H, W, argmax = std::move(argmax)]() {
    const Tensor<S>& gy = t.grad(yv);
    Tensor<S>& gx = t.grad(map);
    const Index plane = H * W;
    const Index bins_per_c = gy.size() / C;
    for (Index c = 0; c < C; ++c)
      for (Index k = 0; k < bins_per_c; ++k) {
        const Index cell = argmax[static_cast<std::size_t>(c * bins_per_c + k)];
        if (cell >= 0) gx[c * plane + cell] += gy[c * bins_per_c + k];
      }
  });
  return yv;
}

}  // namespace icare
