#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "figpriv/image.hpp"

namespace figpriv {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngMemoryWriter {
    std::vector<unsigned char> bytes;
    static void write(png_structp png, png_bytep data, png_size_t size) {
        auto* self = static_cast<PngMemoryWriter*>(png_get_io_ptr(png));
        self->bytes.insert(self->bytes.end(), data, data + size);
    }
    static void flush(png_structp) {}
};

inline Image decode_png_stream(png_structp png, png_infop info) {
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    // Flatten any alpha against white.
    png_color_16 white{0, 255, 255, 255, 0};
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_background(png, &white, PNG_BACKGROUND_GAMMA_SCREEN, 0, 1.0);
    png_read_update_info(png, info);

    Image img(static_cast<int>(w), static_cast<int>(h));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.at(0, static_cast<int>(y));
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return img;
}

}  // namespace detail

inline Image load_png(const std::filesystem::path& path) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw DataError("cannot open image: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path.string());
    }
    png_init_io(png, f.get());
    Image img = detail::decode_png_stream(png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline std::vector<unsigned char> encode_png(const Image& img) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    detail::PngMemoryWriter writer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG");
    }
    png_set_write_fn(png, &writer, detail::PngMemoryWriter::write, detail::PngMemoryWriter::flush);
    // Fixed settings keep encoded bytes reproducible across runs.
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.at(0, y)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return std::move(writer.bytes);
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
    auto bytes = encode_png(img);
    detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw DataError("cannot write image: " + path.string());
    if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
        throw DataError("short write: " + path.string());
}

namespace detail {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    static void on_error(j_common_ptr cinfo) {
        auto* self = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
        std::longjmp(self->jump, 1);
    }
};

}  // namespace detail

inline Image load_jpeg(const std::filesystem::path& path) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw DataError("cannot open image: " + path.string());
    jpeg_decompress_struct cinfo{};
    detail::JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = detail::JpegErrorMgr::on_error;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("failed to decode JPEG: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    Image img(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.at(0, static_cast<int>(cinfo.output_scanline));
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline void save_jpeg(const Image& img, const std::filesystem::path& path, int quality = 92) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw DataError("cannot write image: " + path.string());
    jpeg_compress_struct cinfo{};
    detail::JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = detail::JpegErrorMgr::on_error;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw DataError("failed to encode JPEG: " + path.string());
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(img.at(0, static_cast<int>(cinfo.next_scanline)));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

// Format sniffed from the leading magic bytes, not the extension.
inline Image load_image(const std::filesystem::path& path) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw DataError("cannot open image: " + path.string());
    unsigned char magic[8] = {0};
    size_t got = std::fread(magic, 1, sizeof(magic), f.get());
    f.reset();
    if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return load_png(path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return load_jpeg(path);
    throw DataError("unsupported image format (expect PNG or JPEG): " + path.string());
}

}  // namespace figpriv
