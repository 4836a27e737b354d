#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "conns/error.hpp"

namespace conns {

using Vec = std::vector<double>;

struct NonFiniteInput : Error {
    explicit NonFiniteInput(const std::string& where) : Error("non-finite input in " + where) {}
};

struct DegenerateNorm : Error {
    DegenerateNorm() : Error("vector norm below eps, cannot normalize") {}
};

struct EmptyGrid : Error {
    EmptyGrid() : Error("grid has no cells") {}
};

// Dense row-major matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
};

// Row-major 2-D grid (image or heatmap).
struct Grid2D {
    int h = 0;
    int w = 0;
    Vec v;

    Grid2D() = default;
    Grid2D(int height, int width, double fill = 0.0)
        : h(height), w(width), v(static_cast<std::size_t>(height) * width, fill) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vec& a, const Vec& b) { return dot(a.data(), b.data(), static_cast<int>(a.size())); }

inline double norm2(const double* a, int n) { return std::sqrt(dot(a, a, n)); }

inline double norm2(const Vec& a) { return norm2(a.data(), static_cast<int>(a.size())); }

// Numerically stable softmax (max subtraction). Outputs sum to 1 and the
// ordering of the inputs is preserved.
inline Vec softmax(const Vec& x) {
    for (double v : x)
        if (!std::isfinite(v)) throw NonFiniteInput("softmax");
    double m = *std::max_element(x.begin(), x.end());
    Vec out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline constexpr double kNormEps = 1e-12;

inline Vec l2_normalize(const Vec& x, double eps = kNormEps) {
    double n = norm2(x);
    if (!(n >= eps)) throw DegenerateNorm();
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
    return out;
}

// Bilinear resize with half-pixel sample centers: output pixel (r, c) samples
// the source at y = (r + 0.5) * h / out_h - 0.5, x = (c + 0.5) * w / out_w - 0.5,
// clamped to the source rectangle. Constant grids stay constant and the output
// range never leaves the input range.
inline Grid2D bilinear_resize(const Grid2D& src, int out_h, int out_w) {
    if (src.h <= 0 || src.w <= 0 || src.v.empty()) throw EmptyGrid();
    if (out_h < 1 || out_w < 1) throw EmptyGrid();
    Grid2D out(out_h, out_w);
    for (int r = 0; r < out_h; ++r) {
        double y = (r + 0.5) * static_cast<double>(src.h) / out_h - 0.5;
        y = std::clamp(y, 0.0, static_cast<double>(src.h - 1));
        int y0 = static_cast<int>(std::floor(y));
        int y1 = std::min(y0 + 1, src.h - 1);
        double fy = y - y0;
        for (int c = 0; c < out_w; ++c) {
            double x = (c + 0.5) * static_cast<double>(src.w) / out_w - 0.5;
            x = std::clamp(x, 0.0, static_cast<double>(src.w - 1));
            int x0 = static_cast<int>(std::floor(x));
            int x1 = std::min(x0 + 1, src.w - 1);
            double fx = x - x0;
            double v00 = src.at(y0, x0);
            double v01 = src.at(y0, x1);
            double v10 = src.at(y1, x0);
            double v11 = src.at(y1, x1);
            out.at(r, c) = v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx +
                           v10 * fy * (1 - fx) + v11 * fy * fx;
        }
    }
    return out;
}

}  // namespace conns
