#include "koi/motion.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace koi {
namespace {

// The solver works on 8-bit-scaled intensities so that the determinant
// regularizer below has a fixed meaning regardless of input range.
constexpr double kIntensityScale = 255.0;
constexpr double kDetRegularizer = 1e-3;

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

double sample_bilinear(const Frame& f, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(f.cols() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(f.rows() - 1));
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  int x1 = std::min<int>(x0 + 1, f.cols() - 1);
  int y1 = std::min<int>(y0 + 1, f.rows() - 1);
  double ax = x - x0, ay = y - y0;
  return (1 - ay) * ((1 - ax) * f(y0, x0) + ax * f(y0, x1)) +
         ay * ((1 - ax) * f(y1, x0) + ax * f(y1, x1));
}

Frame resize_bilinear(const Frame& src, int rows, int cols) {
  Frame dst(rows, cols);
  double sy = static_cast<double>(src.rows()) / rows;
  double sx = static_cast<double>(src.cols()) / cols;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst(r, c) = sample_bilinear(src, (c + 0.5) * sx - 0.5, (r + 0.5) * sy - 0.5);
  return dst;
}

Frame gaussian_blur(const Frame& src, double sigma) {
  if (sigma <= 0.0) return src;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i)
    s += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& w : k) w /= s;
  const int rows = src.rows(), cols = src.cols();
  Frame tmp(rows, cols), dst(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * src(r, clamp_index(c + i, cols));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp(clamp_index(r + i, rows), c);
      dst(r, c) = acc;
    }
  return dst;
}

Frame box_blur(const Frame& src, int size) {
  const int rows = src.rows(), cols = src.cols();
  const int lo = -(size / 2), hi = size - 1 - size / 2;
  const double norm = 1.0 / size;
  Frame tmp(rows, cols), dst(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = lo; i <= hi; ++i) acc += src(r, clamp_index(c + i, cols));
      tmp(r, c) = acc * norm;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = lo; i <= hi; ++i) acc += tmp(clamp_index(r + i, rows), c);
      dst(r, c) = acc * norm;
    }
  return dst;
}

// Local quadratic model f(x, y) ~ c + bx x + by y + axx x^2 + ayy y^2 +
// axy x y, fitted per pixel by Gaussian-weighted least squares.
struct PolyExpansion {
  Frame bx, by, axx, ayy, axy;
};

PolyExpansion poly_expand(const Frame& img, int n, double sigma) {
  const int side = 2 * n + 1;
  auto basis = [](int dx, int dy) {
    return std::array<double, 6>{1.0, double(dx), double(dy), double(dx * dx),
                                 double(dy * dy), double(dx * dy)};
  };
  std::vector<double> w(side * side);
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (int dy = -n; dy <= n; ++dy)
    for (int dx = -n; dx <= n; ++dx) {
      double wt = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[(dy + n) * side + dx + n] = wt;
      auto phi = basis(dx, dy);
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) gram(a, b) += wt * phi[a] * phi[b];
    }
  Eigen::Matrix<double, 6, 6> inv = gram.inverse();

  // Coefficient k at a pixel is sum_d kernel_k(d) * img(p + d).
  std::array<std::vector<double>, 6> kernel;
  for (auto& k : kernel) k.assign(side * side, 0.0);
  for (int dy = -n; dy <= n; ++dy)
    for (int dx = -n; dx <= n; ++dx) {
      auto phi = basis(dx, dy);
      double wt = w[(dy + n) * side + dx + n];
      for (int k = 0; k < 6; ++k) {
        double acc = 0.0;
        for (int b = 0; b < 6; ++b) acc += inv(k, b) * phi[b];
        kernel[k][(dy + n) * side + dx + n] = wt * acc;
      }
    }

  const int rows = img.rows(), cols = img.cols();
  PolyExpansion out{Frame(rows, cols), Frame(rows, cols), Frame(rows, cols),
                    Frame(rows, cols), Frame(rows, cols)};
  Frame* dst[6] = {nullptr, &out.bx, &out.by, &out.axx, &out.ayy, &out.axy};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc[6] = {0, 0, 0, 0, 0, 0};
      for (int dy = -n; dy <= n; ++dy) {
        int rr = clamp_index(r + dy, rows);
        for (int dx = -n; dx <= n; ++dx) {
          double v = img(rr, clamp_index(c + dx, cols));
          int idx = (dy + n) * side + dx + n;
          for (int k = 1; k < 6; ++k) acc[k] += kernel[k][idx] * v;
        }
      }
      for (int k = 1; k < 6; ++k) (*dst[k])(r, c) = acc[k];
    }
  return out;
}

// One refinement: average the per-pixel constraints A d = delta_b over the
// window and solve the 2x2 system.
void refine_flow(const PolyExpansion& p1, const PolyExpansion& p2,
                 FlowField& flow, int winsize) {
  const int rows = flow.u.rows(), cols = flow.u.cols();
  Frame g11(rows, cols), g12(rows, cols), g22(rows, cols), h1(rows, cols),
      h2(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double du = flow.u(r, c), dv = flow.v(r, c);
      double x = c + du, y = r + dv;
      // Quadratic form x^T A x with A = [[axx, axy/2], [axy/2, ayy]].
      double a11 = 0.5 * (p1.axx(r, c) + sample_bilinear(p2.axx, x, y));
      double a22 = 0.5 * (p1.ayy(r, c) + sample_bilinear(p2.ayy, x, y));
      double a12 = 0.25 * (p1.axy(r, c) + sample_bilinear(p2.axy, x, y));
      double b1 = -0.5 * (sample_bilinear(p2.bx, x, y) - p1.bx(r, c)) +
                  a11 * du + a12 * dv;
      double b2 = -0.5 * (sample_bilinear(p2.by, x, y) - p1.by(r, c)) +
                  a12 * du + a22 * dv;
      g11(r, c) = a11 * a11 + a12 * a12;
      g12(r, c) = a12 * (a11 + a22);
      g22(r, c) = a12 * a12 + a22 * a22;
      h1(r, c) = a11 * b1 + a12 * b2;
      h2(r, c) = a12 * b1 + a22 * b2;
    }
  g11 = box_blur(g11, winsize);
  g12 = box_blur(g12, winsize);
  g22 = box_blur(g22, winsize);
  h1 = box_blur(h1, winsize);
  h2 = box_blur(h2, winsize);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double det = g11(r, c) * g22(r, c) - g12(r, c) * g12(r, c) +
                   kDetRegularizer;
      flow.u(r, c) = (g22(r, c) * h1(r, c) - g12(r, c) * h2(r, c)) / det;
      flow.v(r, c) = (g11(r, c) * h2(r, c) - g12(r, c) * h1(r, c)) / det;
    }
}

}  // namespace

FlowField farneback_flow(const Frame& a, const Frame& b,
                         const FlowParams& params) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("flow frames differ in size");
  if (params.poly_n < 1 || params.winsize < 1 || params.iterations < 1 ||
      params.levels < 1 || !(params.pyr_scale > 0.0 && params.pyr_scale < 1.0) ||
      !(params.poly_sigma > 0.0))
    throw InvariantError("invalid flow parameters");
  const int window = 2 * params.poly_n + 1;
  if (a.rows() < window || a.cols() < window)
    throw DimensionError("frame " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) +
                         " is smaller than the expansion window " +
                         std::to_string(window));

  int levels = 1;
  double scale = 1.0;
  while (levels < params.levels) {
    double next = scale * params.pyr_scale;
    if (std::lround(a.rows() * next) < window ||
        std::lround(a.cols() * next) < window)
      break;
    scale = next;
    ++levels;
  }

  Frame fa = a * kIntensityScale, fb = b * kIntensityScale;
  FlowField flow;
  for (int k = levels - 1; k >= 0; --k) {
    double s = std::pow(params.pyr_scale, k);
    int rows = static_cast<int>(std::lround(a.rows() * s));
    int cols = static_cast<int>(std::lround(a.cols() * s));
    double sigma = (1.0 / s - 1.0) * 0.5;
    auto level_image = [&](const Frame& f) {
      return k == 0 ? f : resize_bilinear(gaussian_blur(f, sigma), rows, cols);
    };
    PolyExpansion p1 = poly_expand(level_image(fa), params.poly_n,
                                   params.poly_sigma);
    PolyExpansion p2 = poly_expand(level_image(fb), params.poly_n,
                                   params.poly_sigma);
    if (flow.u.size() == 0) {
      flow.u = Frame::Zero(rows, cols);
      flow.v = Frame::Zero(rows, cols);
    } else {
      double up = 1.0 / params.pyr_scale;
      flow.u = resize_bilinear(flow.u, rows, cols) * up;
      flow.v = resize_bilinear(flow.v, rows, cols) * up;
    }
    for (int it = 0; it < params.iterations; ++it)
      refine_flow(p1, p2, flow, params.winsize);
  }
  return flow;
}

double flow_magnitude(const FlowField& flow) {
  if (flow.u.size() == 0) return 0.0;
  return (flow.u.array().square() + flow.v.array().square()).sqrt().mean();
}

std::vector<double> consecutive_flow_magnitudes(std::span<const Frame> frames,
                                                const FlowParams& params) {
  std::vector<double> m(frames.size(), 0.0);
  for (std::size_t j = 1; j < frames.size(); ++j)
    m[j] = flow_magnitude(farneback_flow(frames[j - 1], frames[j], params));
  return m;
}

std::vector<std::pair<int, int>> semantic_intervals(
    const SemanticIndexSet& semantic) {
  std::vector<std::pair<int, int>> out;
  int prev = 0;
  for (int idx : semantic.indices) {
    out.emplace_back(prev, idx);
    prev = idx;
  }
  return out;
}

MotionIndexSet motion_keystates_from_magnitudes(
    std::span<const double> magnitudes, const SemanticIndexSet& semantic) {
  const int n = static_cast<int>(magnitudes.size());
  int prev = -1;
  for (int idx : semantic.indices) {
    if (idx <= prev || idx >= n)
      throw InvariantError("semantic indices must be strictly increasing and "
                           "inside the sequence");
    prev = idx;
  }
  MotionIndexSet out;
  for (auto [lo, hi] : semantic_intervals(semantic)) {
    int best = -1;
    for (int j = lo + 1; j < hi; ++j)
      if (best < 0 || magnitudes[j] > magnitudes[best]) best = j;
    if (best >= 0) out.indices.push_back(best);
  }
  return out;
}

MotionIndexSet motion_keystates(std::span<const Frame> frames,
                                const SemanticIndexSet& semantic,
                                const FlowParams& params) {
  // Only pairs whose later index lies inside some interval are needed.
  std::vector<double> m(frames.size(), 0.0);
  for (auto [lo, hi] : semantic_intervals(semantic))
    for (int j = lo + 1; j < hi && j < static_cast<int>(frames.size()); ++j)
      m[j] = flow_magnitude(farneback_flow(frames[j - 1], frames[j], params));
  return motion_keystates_from_magnitudes(m, semantic);
}

}  // namespace koi
