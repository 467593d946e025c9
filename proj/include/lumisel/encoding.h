// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/geometry.h>
#include <lumisel/scene.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

namespace lumisel {

inline constexpr int kShCoefficients = 16;  // bands l = 0..3
inline constexpr int kOneBlobBins = 32;
inline constexpr int kNormalFeatures = 3 * kOneBlobBins;

// Discrete-input ablation: position snapped to this many cells per axis and each
// direction component to this many buckets.
inline constexpr int kDiscretePositionCells = 32;
inline constexpr int kDiscreteDirectionBuckets = 8;

enum class InputMode { Continuous, Discrete };

// Trilinear footprint of one grid lookup, recorded for backpropagation.
struct GridFootprint {
    std::array<uint32_t, 8> vertex{};
    std::array<double, 8> weight{};
};

// Single-level dense grid of learnable feature vectors. The table itself lives in
// the owning network's parameter vector; this class only knows the layout.
// Vertex v = (iz * R + iy) * R + ix stores features [v * F, (v + 1) * F).
class GridEncoding {
  public:
    GridEncoding() = default;
    // Positions are normalized by sceneBounds padded by 1% of its extent per side.
    GridEncoding(int resolution, int features, const Bounds3 &sceneBounds)
        : resolution(resolution), features(features), bounds(sceneBounds.Expanded(0.01)) {}

    int Resolution() const { return resolution; }
    int Features() const { return features; }
    const Bounds3 &NormalizationBounds() const { return bounds; }
    size_t NumParameters() const { return size_t(resolution) * resolution * resolution * features; }

    Vec3 NormalizePosition(const Vec3 &x) const {
        Vec3 t = bounds.Offset(x);
        return {std::clamp<double>(t.x, 0, 1), std::clamp<double>(t.y, 0, 1),
                std::clamp<double>(t.z, 0, 1)};
    }

    GridFootprint Footprint(const Vec3 &x) const {
        Vec3 t = NormalizePosition(x);
        std::array<int, 3> cell;
        std::array<double, 3> frac;
        for (int a = 0; a < 3; ++a) {
            double g = t[a] * (resolution - 1);
            int i = std::min(int(std::floor(g)), resolution - 2);
            cell[a] = std::max(i, 0);
            frac[a] = g - cell[a];
        }
        GridFootprint fp;
        for (int corner = 0; corner < 8; ++corner) {
            int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
            uint32_t ix = cell[0] + dx, iy = cell[1] + dy, iz = cell[2] + dz;
            fp.vertex[corner] = (iz * resolution + iy) * resolution + ix;
            fp.weight[corner] = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) *
                                (dz ? frac[2] : 1 - frac[2]);
        }
        return fp;
    }

    template <typename T>
    void Encode(std::span<const T> table, const GridFootprint &fp, std::span<T> out) const {
        for (int f = 0; f < features; ++f)
            out[f] = 0;
        for (int corner = 0; corner < 8; ++corner) {
            const T *v = table.data() + size_t(fp.vertex[corner]) * features;
            T w = T(fp.weight[corner]);
            for (int f = 0; f < features; ++f)
                out[f] += w * v[f];
        }
    }

    // Adds weight * upstream to each touched vertex; additive across calls.
    template <typename T, typename G>
    void Backprop(const GridFootprint &fp, std::span<const T> upstream,
                  std::span<G> tableGrad) const {
        for (int corner = 0; corner < 8; ++corner) {
            G *g = tableGrad.data() + size_t(fp.vertex[corner]) * features;
            for (int f = 0; f < features; ++f)
                g[f] += G(fp.weight[corner]) * G(upstream[f]);
        }
    }

  private:
    int resolution = 32;
    int features = 8;
    Bounds3 bounds;
};

// Real spherical harmonics, bands 0..3, Condon-Shortley phase, index l*l + l + m.
template <typename T>
void EncodeDirection(const Vec3 &d, std::span<T> out) {
    double x = d.x, y = d.y, z = d.z;
    double x2 = x * x, y2 = y * y, z2 = z * z, xy = x * y, yz = y * z, xz = x * z;
    out[0] = T(0.28209479177387814);
    out[1] = T(-0.48860251190291987 * y);
    out[2] = T(0.48860251190291987 * z);
    out[3] = T(-0.48860251190291987 * x);
    out[4] = T(1.0925484305920792 * xy);
    out[5] = T(-1.0925484305920792 * yz);
    out[6] = T(0.94617469575755997 * z2 - 0.31539156525251999);
    out[7] = T(-1.0925484305920792 * xz);
    out[8] = T(0.54627421529603959 * x2 - 0.54627421529603959 * y2);
    out[9] = T(0.59004358992664352 * y * (-3.0 * x2 + y2));
    out[10] = T(2.8906114426405538 * xy * z);
    out[11] = T(0.45704579946446572 * y * (1.0 - 5.0 * z2));
    out[12] = T(0.3731763325901154 * z * (5.0 * z2 - 3.0));
    out[13] = T(0.45704579946446572 * x * (1.0 - 5.0 * z2));
    out[14] = T(1.4453057213202769 * z * (x2 - y2));
    out[15] = T(0.59004358992664352 * x * (-x2 + 3.0 * y2));
}

// One-blob: each component mapped from [-1,1] to [0,1], then a Gaussian kernel with
// sigma = 1/32 evaluated at 32 bin centers.
template <typename T>
void EncodeNormal(const Vec3 &n, std::span<T> out) {
    constexpr double sigma = 1.0 / kOneBlobBins;
    for (int a = 0; a < 3; ++a) {
        double t = std::clamp((n[a] + 1) / 2, 0.0, 1.0);
        for (int k = 0; k < kOneBlobBins; ++k) {
            double c = (k + 0.5) / kOneBlobBins;
            out[a * kOneBlobBins + k] = T(std::exp(-Sqr(t - c) / (2 * sigma * sigma)));
        }
    }
}

// Snaps the network inputs for the discrete-input ablation.
inline ShadingQuery DiscretizeQuery(const ShadingQuery &q, const GridEncoding &grid) {
    ShadingQuery r = q;
    const Bounds3 &b = grid.NormalizationBounds();
    Vec3 t = grid.NormalizePosition(q.position);
    for (int a = 0; a < 3; ++a) {
        int cell = std::min(int(t[a] * kDiscretePositionCells), kDiscretePositionCells - 1);
        double center = (cell + 0.5) / kDiscretePositionCells;
        r.position[a] = b.pMin[a] + center * (b.pMax[a] - b.pMin[a]);
    }
    Vec3 d;
    for (int a = 0; a < 3; ++a) {
        double u = std::clamp((q.outDir[a] + 1) / 2, 0.0, 1.0);
        int bucket = std::min(int(u * kDiscreteDirectionBuckets), kDiscreteDirectionBuckets - 1);
        d[a] = 2 * (bucket + 0.5) / kDiscreteDirectionBuckets - 1;
    }
    r.outDir = Normalize(d);
    return r;
}

// Feature layout: grid (F) | spherical harmonics (16) | one-blob normal (96).
class FeatureEncoder {
  public:
    FeatureEncoder() = default;
    explicit FeatureEncoder(const GridEncoding &grid, InputMode mode = InputMode::Continuous)
        : grid(grid), mode(mode) {}

    const GridEncoding &Grid() const { return grid; }
    InputMode Mode() const { return mode; }
    int Length() const { return grid.Features() + kShCoefficients + kNormalFeatures; }

    template <typename T>
    void Encode(std::span<const T> table, const ShadingQuery &query, std::span<T> out,
                GridFootprint *footprint) const {
        ShadingQuery q = mode == InputMode::Discrete ? DiscretizeQuery(query, grid) : query;
        GridFootprint fp = grid.Footprint(q.position);
        int f = grid.Features();
        grid.Encode<T>(table, fp, out.first(f));
        EncodeDirection<T>(q.outDir, out.subspan(f, kShCoefficients));
        EncodeNormal<T>(q.normal, out.subspan(f + kShCoefficients, kNormalFeatures));
        if (footprint)
            *footprint = fp;
    }

  private:
    GridEncoding grid;
    InputMode mode = InputMode::Continuous;
};

}  // namespace lumisel
