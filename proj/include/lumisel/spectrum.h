// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

namespace lumisel {

// Linear RGB radiance triple in relative units.
struct Spectrum {
    double r = 0, g = 0, b = 0;

    constexpr Spectrum() = default;
    constexpr explicit Spectrum(double v) : r(v), g(v), b(v) {}
    constexpr Spectrum(double r, double g, double b) : r(r), g(g), b(b) {}

    constexpr double operator[](int i) const { return i == 0 ? r : (i == 1 ? g : b); }
    constexpr double &operator[](int i) { return i == 0 ? r : (i == 1 ? g : b); }

    constexpr Spectrum operator+(const Spectrum &o) const { return {r + o.r, g + o.g, b + o.b}; }
    constexpr Spectrum operator-(const Spectrum &o) const { return {r - o.r, g - o.g, b - o.b}; }
    constexpr Spectrum operator*(const Spectrum &o) const { return {r * o.r, g * o.g, b * o.b}; }
    constexpr Spectrum operator*(double s) const { return {r * s, g * s, b * s}; }
    constexpr Spectrum operator/(double s) const { return {r / s, g / s, b / s}; }
    constexpr Spectrum &operator+=(const Spectrum &o) {
        r += o.r;
        g += o.g;
        b += o.b;
        return *this;
    }
    constexpr Spectrum &operator*=(const Spectrum &o) {
        r *= o.r;
        g *= o.g;
        b *= o.b;
        return *this;
    }
    constexpr bool operator==(const Spectrum &o) const = default;

    constexpr bool IsBlack() const { return r == 0 && g == 0 && b == 0; }
    bool IsFinite() const { return std::isfinite(r) && std::isfinite(g) && std::isfinite(b); }
    constexpr bool IsNonNegative() const { return r >= 0 && g >= 0 && b >= 0; }
    constexpr double Average() const { return (r + g + b) / 3; }
    constexpr double MaxComponent() const {
        return r > g ? (r > b ? r : b) : (g > b ? g : b);
    }
};

constexpr Spectrum operator*(double s, const Spectrum &v) { return v * s; }

// Rec. 709 luminance; the scalar reduction used for all importance weights.
constexpr double Luminance(const Spectrum &s) {
    return 0.2126 * s.r + 0.7152 * s.g + 0.0722 * s.b;
}

}  // namespace lumisel
