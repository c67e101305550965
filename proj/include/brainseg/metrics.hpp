#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "brainseg/array.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

using Mask = Array<std::uint8_t>;  // [S,H,W], nonzero = foreground
using Spacing = std::array<double, 3>;

enum class Connectivity { face = 6, edge = 18, full = 26 };

/// Connected foreground components. Component ids follow raster order of each component's
/// first voxel; voxel lists are sorted.
struct LesionSet {
  Shape shape;
  std::vector<std::vector<std::size_t>> components;

  std::size_t size() const { return components.size(); }
};

namespace detail {

inline void require_3d(const Shape& s, const char* who) {
  if (s.size() != 3) throw ShapeError(std::string(who) + ": expected [S,H,W], got " + shape_str(s));
}

inline bool neighbor_allowed(int dz, int dy, int dx, Connectivity conn) {
  const int n = std::abs(dz) + std::abs(dy) + std::abs(dx);
  if (n == 0) return false;
  switch (conn) {
    case Connectivity::face: return n == 1;
    case Connectivity::edge: return n <= 2;
    case Connectivity::full: return true;
  }
  return false;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

inline LesionSet label_components(const Mask& mask, Connectivity conn = Connectivity::full) {
  detail::require_3d(mask.shape(), "label_components");
  const long S = long(mask.dim(0)), H = long(mask.dim(1)), W = long(mask.dim(2));
  detail::UnionFind uf(mask.size());
  // Scan each voxel against its already-visited (raster-earlier) neighbours.
  for (long z = 0; z < S; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const std::size_t i = std::size_t((z * H + y) * W + x);
        if (!mask[i]) continue;
        for (int dz = -1; dz <= 0; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              if (!detail::neighbor_allowed(dz, dy, dx, conn)) continue;
              const long nz = z + dz, ny = y + dy, nx = x + dx;
              if (nz < 0 || ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
              const std::size_t j = std::size_t((nz * H + ny) * W + nx);
              if (mask[j]) uf.unite(i, j);
            }
      }
  LesionSet out;
  out.shape = mask.shape();
  std::map<std::size_t, std::size_t> root_to_id;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const std::size_t r = uf.find(i);
    auto [it, inserted] = root_to_id.try_emplace(r, out.components.size());
    if (inserted) out.components.emplace_back();
    out.components[it->second].push_back(i);
  }
  return out;
}

inline std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

struct LesionMatch {
  std::size_t truth = 0, pred = 0, overlap = 0;
};

struct LesionPairing {
  std::vector<LesionMatch> pairs;  // ordered by truth id
  std::vector<std::size_t> unmatched_pred, unmatched_truth;
};

/// Greedy maximum-overlap matching: candidate (truth, pred) pairs with positive overlap are taken
/// in order of decreasing overlap (ties: smaller truth id, then smaller pred id), each component
/// used at most once.
inline LesionPairing match_lesions(const LesionSet& pred, const LesionSet& truth) {
  if (pred.shape != truth.shape) throw ShapeError("match_lesions: lesion sets from different shapes");
  std::vector<std::size_t> owner(shape_size(pred.shape), std::numeric_limits<std::size_t>::max());
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (auto v : pred.components[p]) owner[v] = p;
  std::vector<LesionMatch> cand;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    std::map<std::size_t, std::size_t> overlap;
    for (auto v : truth.components[t])
      if (owner[v] != std::numeric_limits<std::size_t>::max()) ++overlap[owner[v]];
    for (auto [p, n] : overlap) cand.push_back({t, p, n});
  }
  std::sort(cand.begin(), cand.end(), [](const LesionMatch& a, const LesionMatch& b) {
    return std::tie(b.overlap, a.truth, a.pred) < std::tie(a.overlap, b.truth, b.pred);
  });
  std::vector<bool> used_t(truth.size(), false), used_p(pred.size(), false);
  LesionPairing out;
  for (const auto& c : cand) {
    if (used_t[c.truth] || used_p[c.pred]) continue;
    used_t[c.truth] = used_p[c.pred] = true;
    out.pairs.push_back(c);
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& a, const auto& b) { return a.truth < b.truth; });
  for (std::size_t t = 0; t < truth.size(); ++t)
    if (!used_t[t]) out.unmatched_truth.push_back(t);
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!used_p[p]) out.unmatched_pred.push_back(p);
  return out;
}

/// 2|P & T| / (|P| + |T|) on sorted voxel index sets.
inline double lesion_dice(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t) {
  if (p.empty() && t.empty()) throw DataError("lesion_dice: both lesions empty");
  return 2.0 * double(intersection_size(p, t)) / double(p.size() + t.size());
}

struct SensSpec {
  std::optional<double> sens;  // missing when T is empty
  std::optional<double> spec;  // missing when T covers every voxel
};

/// sens = |P & T| / |T|, spec = |~P & ~T| / |~T| over a grid of `total` voxels.
inline SensSpec lesion_sens_spec(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t,
                                 std::size_t total) {
  const std::size_t inter = intersection_size(p, t);
  SensSpec out;
  if (!t.empty()) out.sens = double(inter) / double(t.size());
  const std::size_t t0 = total - t.size();
  const std::size_t both0 = total - (p.size() + t.size() - inter);
  if (t0 > 0) out.spec = double(both0) / double(t0);
  return out;
}

/// Surface voxels of a mask: foreground voxels with a face neighbour that is background or lies
/// outside the grid. Axes of extent 1 are ignored, so a single-slice volume behaves as 2D.
inline std::vector<std::size_t> boundary_voxels(const Mask& mask) {
  detail::require_3d(mask.shape(), "boundary_voxels");
  const long S = long(mask.dim(0)), H = long(mask.dim(1)), W = long(mask.dim(2));
  const long ext[3] = {S, H, W};
  std::vector<std::size_t> out;
  for (long z = 0; z < S; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const std::size_t i = std::size_t((z * H + y) * W + x);
        if (!mask[i]) continue;
        bool edge = false;
        const long c[3] = {z, y, x};
        for (int axis = 0; axis < 3 && !edge; ++axis) {
          if (ext[axis] == 1) continue;
          for (int d : {-1, 1}) {
            long n[3] = {c[0], c[1], c[2]};
            n[axis] += d;
            if (n[axis] < 0 || n[axis] >= ext[axis] || !mask[std::size_t((n[0] * H + n[1]) * W + n[2])]) {
              edge = true;
              break;
            }
          }
        }
        if (edge) out.push_back(i);
      }
  return out;
}

namespace detail {

// 1D squared distance transform (lower envelope of parabolas), grid spacing h.
inline void edt_1d(const double* f, double* d, std::size_t n, double h, std::vector<std::size_t>& v,
                   std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  long k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double fq = f[q] + (double(q) * h) * (double(q) * h);
    while (k >= 0) {
      const double pv = double(v[std::size_t(k)]) * h;
      const double s = (fq - (f[v[std::size_t(k)]] + pv * pv)) / (2.0 * (double(q) * h - pv));
      if (s <= z[std::size_t(k)]) {
        --k;
        continue;
      }
      ++k;
      v[std::size_t(k)] = q;
      z[std::size_t(k)] = s;
      z[std::size_t(k) + 1] = inf;
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
    }
  }
  if (k < 0) {
    for (std::size_t q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  long j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double x = double(q) * h;
    while (z[std::size_t(j) + 1] < x) ++j;
    const double dx = x - double(v[std::size_t(j)]) * h;
    d[q] = dx * dx + f[v[std::size_t(j)]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest listed feature voxel.
inline std::vector<double> squared_distance_map(const Shape& shape, const std::vector<std::size_t>& features,
                                                const Spacing& spacing) {
  const std::size_t S = shape[0], H = shape[1], W = shape[2];
  std::vector<double> dist(S * H * W, std::numeric_limits<double>::infinity());
  for (auto i : features) dist[i] = 0.0;
  std::vector<double> f, d;
  std::vector<std::size_t> v;
  std::vector<double> z;
  auto pass = [&](std::size_t n, std::size_t stride, double h, auto&& starts) {
    f.resize(n);
    d.resize(n);
    for (std::size_t base : starts) {
      for (std::size_t q = 0; q < n; ++q) f[q] = dist[base + q * stride];
      detail::edt_1d(f.data(), d.data(), n, h, v, z);
      for (std::size_t q = 0; q < n; ++q) dist[base + q * stride] = d[q];
    }
  };
  std::vector<std::size_t> starts;
  starts.clear();
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t r = 0; r < H; ++r) starts.push_back((s * H + r) * W);
  pass(W, 1, spacing[2], starts);
  starts.clear();
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t c = 0; c < W; ++c) starts.push_back(s * H * W + c);
  pass(H, W, spacing[1], starts);
  starts.clear();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) starts.push_back(r * W + c);
  pass(S, H * W, spacing[0], starts);
  return dist;
}

/// Linear-interpolated percentile (q in [0,100]) of a nonempty sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(q, 0.0, 100.0) / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(rank)), hi = std::size_t(std::ceil(rank));
  return values[lo] + (values[hi] - values[lo]) * (rank - double(lo));
}

/// Surface points on a grid with voxel spacing.
struct BoundarySet {
  Shape shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::size_t> voxels;
};

inline BoundarySet boundary_of(const Mask& mask, const Spacing& spacing) {
  return {mask.shape(), spacing, boundary_voxels(mask)};
}

/// Length of the grid's bounding-box diagonal in mm; used as the one-sided-empty penalty.
inline double grid_diagonal(const Shape& shape, const Spacing& spacing) {
  double s = 0.0;
  for (std::size_t k = 0; k < 3; ++k) s += (double(shape[k]) * spacing[k]) * (double(shape[k]) * spacing[k]);
  return std::sqrt(s);
}

/// Directed surface distances from every point of `from` to the nearest point of `to`.
inline std::vector<double> directed_distances(const BoundarySet& from, const BoundarySet& to) {
  const auto dist = squared_distance_map(to.shape, to.voxels, to.spacing);
  std::vector<double> out;
  out.reserve(from.voxels.size());
  for (auto i : from.voxels) out.push_back(std::sqrt(dist[i]));
  return out;
}

/// Percentile of the pooled (both directions) surface distances. percentile = 100 gives the
/// classic Hausdorff distance. Both empty -> 0; one empty -> grid diagonal penalty.
inline double hausdorff(const BoundarySet& p, const BoundarySet& t, double pct = 100.0) {
  if (p.shape != t.shape) throw ShapeError("hausdorff: boundary sets from different grids");
  if (p.voxels.empty() && t.voxels.empty()) return 0.0;
  if (p.voxels.empty() || t.voxels.empty()) return grid_diagonal(p.shape, p.spacing);
  auto d = directed_distances(p, t);
  const auto back = directed_distances(t, p);
  d.insert(d.end(), back.begin(), back.end());
  if (pct >= 100.0) return *std::max_element(d.begin(), d.end());
  return percentile(std::move(d), pct);
}

inline double hausdorff(const Mask& p, const Mask& t, const Spacing& spacing, double pct = 100.0) {
  return hausdorff(boundary_of(p, spacing), boundary_of(t, spacing), pct);
}

/// BraTS evaluation regions.
enum class Region { wt, tc, et };
inline constexpr std::array<Region, 3> kRegions = {Region::wt, Region::tc, Region::et};

inline const char* region_name(Region r) {
  switch (r) {
    case Region::wt: return "WT";
    case Region::tc: return "TC";
    case Region::et: return "ET";
  }
  return "?";
}

inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
    case Region::wt: return label == 1 || label == 2 || label == 4;
    case Region::tc: return label == 1 || label == 4;
    case Region::et: return label == 4;
  }
  return false;
}

inline Mask region_mask(const Array<std::uint8_t>& labels, Region r) {
  Mask m(labels.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = in_region(labels[i], r) ? 1 : 0;
  return m;
}

struct LesionPairScore {
  std::size_t truth = 0, pred = 0;
  double dice = 0.0, sens = 0.0, hd95 = 0.0;
};

struct LesionReport {
  std::string region;
  double dice = 0.0;  // global voxel Dice of the region masks
  double lw_dice = 0.0;
  std::optional<double> lw_sens;
  std::optional<double> spec;
  double lw_hd95 = 0.0;
  double hd95 = 0.0;  // global masks, 95th percentile
  double haus = 0.0;  // global masks, maximum
  std::vector<LesionPairScore> pairs;
  std::vector<std::size_t> unmatched_pred;   // lesion-level false positives
  std::vector<std::size_t> unmatched_truth;  // lesion-level false negatives
  std::size_t truth_lesions = 0, pred_lesions = 0;
};

struct EvalOptions {
  Connectivity connectivity = Connectivity::full;
  double percentile = 95.0;
};

/// Global and lesion-wise scores of one binary region. Unmatched components score Dice 0 and
/// HD95 equal to the grid diagonal; lw_dice of two empty masks is 1.
inline LesionReport evaluate_masks(const Mask& pred, const Mask& truth, const Spacing& spacing,
                                   const EvalOptions& opt = {}) {
  if (pred.shape() != truth.shape()) throw ShapeError("evaluate: prediction and truth shapes differ");
  LesionReport rep;
  std::size_t np = 0, nt = 0, inter = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] ? 1 : 0;
    nt += truth[i] ? 1 : 0;
    inter += (pred[i] && truth[i]) ? 1 : 0;
  }
  rep.dice = (np + nt) == 0 ? 1.0 : 2.0 * double(inter) / double(np + nt);
  const std::size_t total = pred.size();
  if (total > nt) rep.spec = double(total - (np + nt - inter)) / double(total - nt);

  const BoundarySet bp = boundary_of(pred, spacing), bt = boundary_of(truth, spacing);
  rep.hd95 = hausdorff(bp, bt, opt.percentile);
  rep.haus = hausdorff(bp, bt, 100.0);

  const LesionSet pl = label_components(pred, opt.connectivity), tl = label_components(truth, opt.connectivity);
  rep.truth_lesions = tl.size();
  rep.pred_lesions = pl.size();
  const LesionPairing pairing = match_lesions(pl, tl);
  rep.unmatched_pred = pairing.unmatched_pred;
  rep.unmatched_truth = pairing.unmatched_truth;
  const double penalty = grid_diagonal(pred.shape(), spacing);

  auto component_mask = [&](const std::vector<std::size_t>& vox) {
    Mask m(pred.shape());
    for (auto v : vox) m[v] = 1;
    return m;
  };
  double dice_sum = 0.0, sens_sum = 0.0, hd_sum = 0.0;
  for (const auto& m : pairing.pairs) {
    const auto& P = pl.components[m.pred];
    const auto& T = tl.components[m.truth];
    LesionPairScore s;
    s.truth = m.truth;
    s.pred = m.pred;
    s.dice = lesion_dice(P, T);
    s.sens = double(intersection_size(P, T)) / double(T.size());
    s.hd95 = hausdorff(component_mask(P), component_mask(T), spacing, opt.percentile);
    dice_sum += s.dice;
    sens_sum += s.sens;
    hd_sum += s.hd95;
    rep.pairs.push_back(s);
  }
  const std::size_t units = pairing.pairs.size() + pairing.unmatched_pred.size() + pairing.unmatched_truth.size();
  rep.lw_dice = units == 0 ? 1.0 : dice_sum / double(units);
  rep.lw_hd95 = units == 0 ? 0.0 : (hd_sum + penalty * double(units - pairing.pairs.size())) / double(units);
  if (tl.size() > 0) rep.lw_sens = sens_sum / double(tl.size());
  return rep;
}

inline std::vector<LesionReport> evaluate(const Array<std::uint8_t>& pred_labels, const Array<std::uint8_t>& truth_labels,
                                          const Spacing& spacing, const EvalOptions& opt = {}) {
  detail::require_3d(pred_labels.shape(), "evaluate");
  if (pred_labels.shape() != truth_labels.shape()) throw ShapeError("evaluate: label volumes differ in shape");
  std::vector<LesionReport> out;
  for (Region r : kRegions) {
    LesionReport rep = evaluate_masks(region_mask(pred_labels, r), region_mask(truth_labels, r), spacing, opt);
    rep.region = region_name(r);
    out.push_back(std::move(rep));
  }
  return out;
}

/// Jaccard index from Dice: J = D / (2 - D).
inline double jaccard_from_dice(double dice) { return dice / (2.0 - dice); }

}  // namespace brainseg
