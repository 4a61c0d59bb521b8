#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "figpriv/common.hpp"

namespace figpriv {

// Image-plane conventions used throughout: x grows rightward, y grows
// downward, origin at the top-left. Pixel (col,row) has its center at the
// integer coordinate (col,row).

struct Point {
    double x = 0.0;
    double y = 0.0;

    Point operator+(const Point& o) const { return {x + o.x, y + o.y}; }
    Point operator-(const Point& o) const { return {x - o.x, y - o.y}; }
    bool operator==(const Point&) const = default;
};

// Axis-aligned box with inclusive corners: (x_top,y_top) is the top-left
// pixel, (x_bottom,y_bottom) the bottom-right pixel, both inside the box.
struct BBox {
    int x_top = 0;
    int y_top = 0;
    int x_bottom = 0;
    int y_bottom = 0;

    bool valid() const { return x_top <= x_bottom && y_top <= y_bottom; }
    int width() const { return x_bottom - x_top + 1; }
    int height() const { return y_bottom - y_top + 1; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool operator==(const BBox&) const = default;
};

struct Polygon {
    std::vector<Point> vertices;

    bool degenerate() const {
        if (vertices.size() < 3) return true;
        for (const auto& v : vertices)
            if (v.x != vertices[0].x || v.y != vertices[0].y) return false;
        return true;
    }
    Point min_corner() const {
        Point m{1e300, 1e300};
        for (const auto& v : vertices) {
            m.x = std::min(m.x, v.x);
            m.y = std::min(m.y, v.y);
        }
        return m;
    }
    Point max_corner() const {
        Point m{-1e300, -1e300};
        for (const auto& v : vertices) {
            m.x = std::max(m.x, v.x);
            m.y = std::max(m.y, v.y);
        }
        return m;
    }
};

namespace detail {
// Quadrant angles must map pixels exactly; snap the near-zero/near-one trig
// residue (cos(pi/2) ~ 6e-17) so canvas sizing and round trips stay crisp.
inline void snapped_sincos(double theta_deg, double& s, double& c) {
    double rad = theta_deg * M_PI / 180.0;
    s = std::sin(rad);
    c = std::cos(rad);
    auto snap = [](double& v) {
        if (std::abs(v) < 1e-12) v = 0.0;
        else if (std::abs(v - 1.0) < 1e-12) v = 1.0;
        else if (std::abs(v + 1.0) < 1e-12) v = -1.0;
    };
    snap(s);
    snap(c);
}
}  // namespace detail

// Everything needed to invert one rotation step: the angle, the center of
// the source crop, the center of the expanded rotated canvas, and both
// sizes. forward() then inverse() is the identity on continuous
// coordinates.
struct RotationSpec {
    double theta_deg = 0.0;
    Point c_original;           // center of the source crop
    Point c_rotated;            // center of the rotated canvas
    int source_w = 0, source_h = 0;
    int canvas_w = 0, canvas_h = 0;

    static RotationSpec identity(int w, int h) {
        RotationSpec spec;
        spec.theta_deg = 0.0;
        spec.c_original = {(w - 1) / 2.0, (h - 1) / 2.0};
        spec.c_rotated = spec.c_original;
        spec.source_w = w;
        spec.source_h = h;
        spec.canvas_w = w;
        spec.canvas_h = h;
        return spec;
    }

    static RotationSpec for_angle(int w, int h, double theta_deg) {
        if (!std::isfinite(theta_deg)) throw DataError("rotation angle must be finite");
        double s, c;
        detail::snapped_sincos(theta_deg, s, c);
        RotationSpec spec;
        spec.theta_deg = theta_deg;
        spec.source_w = w;
        spec.source_h = h;
        spec.canvas_w = static_cast<int>(std::ceil(w * std::abs(c) + h * std::abs(s)));
        spec.canvas_h = static_cast<int>(std::ceil(w * std::abs(s) + h * std::abs(c)));
        spec.c_original = {(w - 1) / 2.0, (h - 1) / 2.0};
        spec.c_rotated = {(spec.canvas_w - 1) / 2.0, (spec.canvas_h - 1) / 2.0};
        return spec;
    }

    // crop frame -> rotated-canvas frame
    Point forward(const Point& p) const {
        double s, c;
        detail::snapped_sincos(theta_deg, s, c);
        double dx = p.x - c_original.x;
        double dy = p.y - c_original.y;
        return {c * dx - s * dy + c_rotated.x, s * dx + c * dy + c_rotated.y};
    }

    // rotated-canvas frame -> crop frame
    Point inverse(const Point& p) const {
        double s, c;
        detail::snapped_sincos(theta_deg, s, c);
        double dx = p.x - c_rotated.x;
        double dy = p.y - c_rotated.y;
        return {c * dx + s * dy + c_original.x, -s * dx + c * dy + c_original.y};
    }
};

// Rectangle as a simple 4-vertex ring TL, TR, BR, BL. Detection outputs
// sometimes enumerate corners in a zigzag order; filling that directly
// yields a bow-tie, so boxes always pass through here before rasterizing.
inline Polygon bbox_to_polygon(const BBox& box) {
    Polygon poly;
    poly.vertices = {
        {static_cast<double>(box.x_top), static_cast<double>(box.y_top)},
        {static_cast<double>(box.x_bottom), static_cast<double>(box.y_top)},
        {static_cast<double>(box.x_bottom), static_cast<double>(box.y_bottom)},
        {static_cast<double>(box.x_top), static_cast<double>(box.y_bottom)},
    };
    return poly;
}

// Map each vertex back to the source-crop frame. Vertices from the rotated
// canvas's margin are clamped into the crop bounds when clamp is set.
inline Polygon inverse_rotate_polygon(const Polygon& poly, const RotationSpec& spec,
                                      bool clamp = true) {
    Polygon out;
    out.vertices.reserve(poly.vertices.size());
    for (const auto& v : poly.vertices) {
        Point p = spec.inverse(v);
        if (clamp && spec.source_w > 0 && spec.source_h > 0) {
            p.x = std::clamp(p.x, 0.0, static_cast<double>(spec.source_w - 1));
            p.y = std::clamp(p.y, 0.0, static_cast<double>(spec.source_h - 1));
        }
        out.vertices.push_back(p);
    }
    return out;
}

inline Polygon realign_to_original(const Polygon& poly, const Point& object_origin) {
    Polygon out;
    out.vertices.reserve(poly.vertices.size());
    for (const auto& v : poly.vertices) out.vertices.push_back(v + object_origin);
    return out;
}

// Angle of the dominant principal axis of the vertex set against the
// horizontal, folded into (-90, 90]. Isotropic vertex clouds resolve to 0.
inline double polygon_orientation_angle(const Polygon& poly) {
    if (poly.vertices.empty() || poly.degenerate())
        throw DataError("degenerate polygon: orientation angle undefined");
    double mx = 0.0, my = 0.0;
    for (const auto& v : poly.vertices) {
        mx += v.x;
        my += v.y;
    }
    const double n = static_cast<double>(poly.vertices.size());
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& v : poly.vertices) {
        double dx = v.x - mx;
        double dy = v.y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (std::abs(sxy) < 1e-12 && std::abs(sxx - syy) < 1e-12) return 0.0;
    // Principal eigenvector direction of [[sxx,sxy],[sxy,syy]].
    double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy) * 180.0 / M_PI;
    if (angle <= -90.0) angle += 180.0;
    if (angle > 90.0) angle -= 180.0;
    // Fold -90 (exactly vertical) onto the +90 boundary of (-90, 90].
    if (angle == -90.0) angle = 90.0;
    return angle;
}

// Row-major boolean grid, one byte per cell.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false)
        : width_(width), height_(height),
          bits_(static_cast<size_t>(width) * static_cast<size_t>(height), fill ? 1 : 0) {
        if (width <= 0 || height <= 0) throw DataError("mask dimensions must be positive");
    }

    static BinaryMask ones(int width, int height) { return BinaryMask(width, height, true); }

    int width() const { return width_; }
    int height() const { return height_; }
    size_t size() const { return bits_.size(); }

    bool get(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool v = true) { bits_[index(x, y)] = v ? 1 : 0; }

    size_t popcount() const {
        size_t n = 0;
        for (uint8_t b : bits_) n += b;
        return n;
    }

    void or_with(const BinaryMask& other) {
        if (other.width_ != width_ || other.height_ != height_)
            throw DataError("mask dimension mismatch in union");
        for (size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
    }

    // true when every set bit of this mask is also set in other
    bool subset_of(const BinaryMask& other) const {
        if (other.width_ != width_ || other.height_ != height_) return false;
        for (size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i] && !other.bits_[i]) return false;
        return true;
    }

    const std::vector<uint8_t>& bits() const { return bits_; }

    bool operator==(const BinaryMask&) const = default;

private:
    size_t index(int x, int y) const {
        return static_cast<size_t>(y) * static_cast<size_t>(width_) + static_cast<size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<uint8_t> bits_;
};

namespace detail {

// Scanline even-odd fill of one polygon into the mask. A pixel is inside
// when its center (integer coordinate) is inside the closed polygon;
// centers exactly on the boundary count as inside.
inline void fill_polygon(BinaryMask& mask, const Polygon& poly) {
    if (poly.vertices.empty()) return;
    const int w = mask.width(), h = mask.height();
    Point lo = poly.min_corner();
    Point hi = poly.max_corner();
    int y0 = std::max(0, static_cast<int>(std::floor(lo.y)));
    int y1 = std::min(h - 1, static_cast<int>(std::ceil(hi.y)));
    const size_t n = poly.vertices.size();
    std::vector<double> crossings;
    for (int y = y0; y <= y1; ++y) {
        crossings.clear();
        const double fy = static_cast<double>(y);
        for (size_t i = 0; i < n; ++i) {
            const Point& a = poly.vertices[i];
            const Point& b = poly.vertices[(i + 1) % n];
            if (a.y == b.y) {
                // Horizontal (or degenerate) edge on this scanline: its whole
                // span is boundary, mark directly.
                if (a.y == fy) {
                    int xs = std::max(0, static_cast<int>(std::ceil(std::min(a.x, b.x) - 1e-9)));
                    int xe = std::min(w - 1,
                                      static_cast<int>(std::floor(std::max(a.x, b.x) + 1e-9)));
                    for (int x = xs; x <= xe; ++x) mask.set(x, y);
                }
                continue;
            }
            // Half-open span [min_y, max_y) keeps shared vertices from
            // double counting.
            double ymin = std::min(a.y, b.y), ymax = std::max(a.y, b.y);
            if (fy < ymin || fy >= ymax) continue;
            double t = (fy - a.y) / (b.y - a.y);
            crossings.push_back(a.x + t * (b.x - a.x));
        }
        std::sort(crossings.begin(), crossings.end());
        for (size_t i = 0; i + 1 < crossings.size(); i += 2) {
            int xs = std::max(0, static_cast<int>(std::ceil(crossings[i] - 1e-9)));
            int xe = std::min(w - 1, static_cast<int>(std::floor(crossings[i + 1] + 1e-9)));
            for (int x = xs; x <= xe; ++x) mask.set(x, y);
        }
    }
}

}  // namespace detail

// Union of even-odd fills, clipped to the image bounds. Empty polygon list
// produces the empty mask.
inline BinaryMask rasterize(const std::vector<Polygon>& polygons, int width, int height) {
    BinaryMask mask(width, height, false);
    for (const auto& poly : polygons) detail::fill_polygon(mask, poly);
    return mask;
}

}  // namespace figpriv
