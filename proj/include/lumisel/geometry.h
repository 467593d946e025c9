// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace lumisel {

using Float = double;

inline constexpr Float Pi = std::numbers::pi_v<Float>;
inline constexpr Float InvPi = 1 / Pi;
inline constexpr Float Infinity = std::numeric_limits<Float>::infinity();

template <typename T>
constexpr T Sqr(T v) {
    return v * v;
}

inline Float SafeSqrt(Float x) { return std::sqrt(std::max<Float>(0, x)); }
inline Float SafeACos(Float x) { return std::acos(std::clamp<Float>(x, -1, 1)); }

struct Vec3 {
    Float x = 0, y = 0, z = 0;

    constexpr Vec3() = default;
    constexpr Vec3(Float x, Float y, Float z) : x(x), y(y), z(z) {}

    constexpr Float operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr Float &operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(Float s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(Float s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3 &operator+=(const Vec3 &o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr Vec3 &operator*=(Float s) {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }
    constexpr bool operator==(const Vec3 &o) const = default;
};

constexpr Vec3 operator*(Float s, const Vec3 &v) { return v * s; }

constexpr Float Dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Float AbsDot(const Vec3 &a, const Vec3 &b) { return std::abs(Dot(a, b)); }
constexpr Vec3 Cross(const Vec3 &a, const Vec3 &b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr Float LengthSquared(const Vec3 &v) { return Dot(v, v); }
inline Float Length(const Vec3 &v) { return std::sqrt(LengthSquared(v)); }
inline Vec3 Normalize(const Vec3 &v) { return v / Length(v); }
inline Float Distance(const Vec3 &a, const Vec3 &b) { return Length(a - b); }
inline Float DistanceSquared(const Vec3 &a, const Vec3 &b) { return LengthSquared(a - b); }
inline Vec3 Min(const Vec3 &a, const Vec3 &b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 Max(const Vec3 &a, const Vec3 &b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}
inline Float MaxComponent(const Vec3 &v) { return std::max({v.x, v.y, v.z}); }
inline Vec3 Reflect(const Vec3 &wo, const Vec3 &n) { return -wo + n * (2 * Dot(wo, n)); }

// Angle between two unit vectors, stable for nearly parallel inputs.
inline Float AngleBetween(const Vec3 &a, const Vec3 &b) {
    if (Dot(a, b) < 0)
        return Pi - 2 * std::asin(std::min<Float>(1, Length(a + b) / 2));
    return 2 * std::asin(std::min<Float>(1, Length(b - a) / 2));
}

// Rodrigues rotation of v about unit axis by angle theta.
inline Vec3 RotateAbout(const Vec3 &v, const Vec3 &axis, Float theta) {
    Float c = std::cos(theta), s = std::sin(theta);
    return v * c + Cross(axis, v) * s + axis * (Dot(axis, v) * (1 - c));
}

inline void CoordinateSystem(const Vec3 &v1, Vec3 *v2, Vec3 *v3) {
    Float sign = std::copysign(Float(1), v1.z);
    Float a = -1 / (sign + v1.z);
    Float b = v1.x * v1.y * a;
    *v2 = Vec3(1 + sign * Sqr(v1.x) * a, sign * b, -sign * v1.x);
    *v3 = Vec3(b, sign + Sqr(v1.y) * a, -v1.y);
}

struct Ray {
    Vec3 o, d;
    Vec3 operator()(Float t) const { return o + d * t; }
};

struct Bounds3 {
    Vec3 pMin{Infinity, Infinity, Infinity};
    Vec3 pMax{-Infinity, -Infinity, -Infinity};

    Bounds3() = default;
    explicit Bounds3(const Vec3 &p) : pMin(p), pMax(p) {}
    Bounds3(const Vec3 &a, const Vec3 &b) : pMin(Min(a, b)), pMax(Max(a, b)) {}

    bool IsEmpty() const { return pMin.x > pMax.x || pMin.y > pMax.y || pMin.z > pMax.z; }
    Vec3 Diagonal() const { return IsEmpty() ? Vec3() : pMax - pMin; }
    Vec3 Centroid() const { return (pMin + pMax) * 0.5; }
    Float SurfaceArea() const {
        Vec3 d = Diagonal();
        return 2 * (d.x * d.y + d.x * d.z + d.y * d.z);
    }
    int MaxDimension() const {
        Vec3 d = Diagonal();
        if (d.x > d.y && d.x > d.z)
            return 0;
        return d.y > d.z ? 1 : 2;
    }
    // Position of p relative to the box corners, 0 at pMin and 1 at pMax per axis.
    Vec3 Offset(const Vec3 &p) const {
        Vec3 o = p - pMin;
        for (int i = 0; i < 3; ++i)
            if (pMax[i] > pMin[i])
                o[i] /= pMax[i] - pMin[i];
        return o;
    }
    bool Inside(const Vec3 &p) const {
        return p.x >= pMin.x && p.x <= pMax.x && p.y >= pMin.y && p.y <= pMax.y &&
               p.z >= pMin.z && p.z <= pMax.z;
    }
    bool Contains(const Bounds3 &b) const {
        return b.IsEmpty() || (Inside(b.pMin) && Inside(b.pMax));
    }
    void BoundingSphere(Vec3 *center, Float *radius) const {
        *center = Centroid();
        *radius = Inside(*center) ? Distance(*center, pMax) : 0;
    }
    Bounds3 Expanded(Float fraction) const {
        Vec3 pad = Diagonal() * fraction;
        Bounds3 r;
        r.pMin = pMin - pad;
        r.pMax = pMax + pad;
        return r;
    }
    // Slab test; returns whether the ray overlaps the box within [tMin, tMax].
    bool IntersectP(const Ray &ray, const Vec3 &invDir, Float tMin, Float tMax) const {
        for (int i = 0; i < 3; ++i) {
            Float t0 = (pMin[i] - ray.o[i]) * invDir[i];
            Float t1 = (pMax[i] - ray.o[i]) * invDir[i];
            if (t0 > t1)
                std::swap(t0, t1);
            // NaN from 0 * inf keeps the previous interval
            tMin = t0 > tMin ? t0 : tMin;
            tMax = t1 < tMax ? t1 : tMax;
            if (tMin > tMax)
                return false;
        }
        return true;
    }
};

inline Bounds3 Union(const Bounds3 &b, const Vec3 &p) {
    Bounds3 r;
    r.pMin = Min(b.pMin, p);
    r.pMax = Max(b.pMax, p);
    return r;
}

inline Bounds3 Union(const Bounds3 &a, const Bounds3 &b) {
    Bounds3 r;
    r.pMin = Min(a.pMin, b.pMin);
    r.pMax = Max(a.pMax, b.pMax);
    return r;
}

std::string ToString(const Vec3 &v);

}  // namespace lumisel
