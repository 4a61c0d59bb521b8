#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "figpriv/common.hpp"
#include "figpriv/geometry.hpp"

namespace figpriv {

// 8-bit interleaved RGB raster. Owns its buffer; all image operations are
// pure functions returning fresh buffers.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // RGB, row-major

    Image() = default;
    Image(int w, int h, uint8_t r = 255, uint8_t g = 255, uint8_t b = 255)
        : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
        if (w <= 0 || h <= 0) throw DataError("image dimensions must be positive");
        for (size_t i = 0; i < pixels.size(); i += 3) {
            pixels[i] = r;
            pixels[i + 1] = g;
            pixels[i + 2] = b;
        }
    }

    bool empty() const { return width <= 0 || height <= 0; }

    uint8_t* at(int x, int y) {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }
    const uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = at(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    void fill_rect(const BBox& box, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = std::max(0, box.y_top); y <= std::min(height - 1, box.y_bottom); ++y)
            for (int x = std::max(0, box.x_top); x <= std::min(width - 1, box.x_bottom); ++x)
                set(x, y, r, g, b);
    }

    bool operator==(const Image&) const = default;
};

// Stable identity of pixel content, independent of any encoded container.
// Mock agent fixtures key on this.
inline uint64_t content_hash(const Image& img) {
    uint64_t h = fnv1a64(&img.width, sizeof(img.width));
    h = fnv1a64(&img.height, sizeof(img.height), h);
    return fnv1a64(img.pixels.data(), img.pixels.size(), h);
}

struct CropResult {
    Image image;
    BBox used;  // the clamped box actually cut, in source coordinates
};

// Clamped-intersection subimage; corners inclusive. Empty intersection is
// an error, a fully-inside bbox is returned as-is.
inline CropResult crop(const Image& img, const BBox& box) {
    if (!box.valid()) throw DataError("invalid bbox: corners out of order");
    BBox used{std::max(box.x_top, 0), std::max(box.y_top, 0),
              std::min(box.x_bottom, img.width - 1), std::min(box.y_bottom, img.height - 1)};
    if (!used.valid()) throw DataError("bbox does not intersect the image");
    Image out(used.width(), used.height());
    for (int y = 0; y < out.height; ++y) {
        const uint8_t* src = img.at(used.x_top, used.y_top + y);
        std::copy(src, src + static_cast<size_t>(out.width) * 3, out.at(0, y));
    }
    return {std::move(out), used};
}

// I_c * m semantics: pixels outside the object mask become white, the rest
// pass through.
inline Image whiteout_outside_mask(const Image& crop_img, const BinaryMask& mask) {
    if (mask.width() != crop_img.width || mask.height() != crop_img.height)
        throw DataError("mask dimensions do not match the crop");
    Image out = crop_img;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (!mask.get(x, y)) out.set(x, y, 255, 255, 255);
    return out;
}

// Masked regions go solid black; everything else passes through.
inline Image apply_mask(const Image& img, const BinaryMask& mask) {
    if (mask.width() != img.width || mask.height() != img.height)
        throw DataError("mask dimensions do not match the image");
    Image out = img;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (mask.get(x, y)) out.set(x, y, 0, 0, 0);
    return out;
}

// Rotate onto an expanded white canvas sized to bound the rotated image.
// The returned spec carries both centers, so polygon remapping can compose
// the rotation and the canvas translation exactly.
inline std::pair<Image, RotationSpec> rotate_with_spec(const Image& img, double theta_deg) {
    RotationSpec spec = RotationSpec::for_angle(img.width, img.height, theta_deg);
    if (theta_deg == 0.0) return {img, spec};
    Image out(spec.canvas_w, spec.canvas_h, 255, 255, 255);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            Point p = spec.inverse({static_cast<double>(x), static_cast<double>(y)});
            if (p.x < -0.5 || p.y < -0.5 || p.x > img.width - 0.5 || p.y > img.height - 0.5)
                continue;  // white margin
            // Bilinear sample against a white surround.
            int x0 = static_cast<int>(std::floor(p.x));
            int y0 = static_cast<int>(std::floor(p.y));
            double fx = p.x - x0;
            double fy = p.y - y0;
            double rgb[3] = {0, 0, 0};
            for (int dy = 0; dy <= 1; ++dy) {
                for (int dx = 0; dx <= 1; ++dx) {
                    double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                    if (w == 0.0) continue;
                    int sx = x0 + dx, sy = y0 + dy;
                    if (sx < 0 || sy < 0 || sx >= img.width || sy >= img.height) {
                        rgb[0] += w * 255.0;
                        rgb[1] += w * 255.0;
                        rgb[2] += w * 255.0;
                    } else {
                        const uint8_t* s = img.at(sx, sy);
                        rgb[0] += w * s[0];
                        rgb[1] += w * s[1];
                        rgb[2] += w * s[2];
                    }
                }
            }
            out.set(x, y, static_cast<uint8_t>(std::lround(rgb[0])),
                    static_cast<uint8_t>(std::lround(rgb[1])),
                    static_cast<uint8_t>(std::lround(rgb[2])));
        }
    }
    return {std::move(out), spec};
}

// Place a crop-sized mask into a full-image mask at the crop origin.
inline BinaryMask place_mask(const BinaryMask& local, const BBox& origin, int width, int height) {
    BinaryMask out(width, height, false);
    for (int y = 0; y < local.height(); ++y) {
        int gy = origin.y_top + y;
        if (gy < 0 || gy >= height) continue;
        for (int x = 0; x < local.width(); ++x) {
            int gx = origin.x_top + x;
            if (gx < 0 || gx >= width) continue;
            if (local.get(x, y)) out.set(gx, gy);
        }
    }
    return out;
}

}  // namespace figpriv
