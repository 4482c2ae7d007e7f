#pragma once

#include <cstdio>
#include <memory>

#include <png.h>

#include "frcnn/common.hpp"

namespace frcnn {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

struct Palette {
    // 256 RGB triples; class id == palette index
    std::array<std::array<std::uint8_t, 3>, 256> colors{};
};

inline void write_png_rgb8(const std::string& path, std::size_t width, std::size_t height,
                           const std::vector<std::uint8_t>& rgb) {
    require(rgb.size() == width * height * 3, "rgb buffer size mismatch for " + path);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + r * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_gray8(const std::string& path, std::size_t width, std::size_t height,
                            const std::vector<std::uint8_t>& gray) {
    require(gray.size() == width * height, "gray buffer size mismatch for " + path);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(gray.data() + r * width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Indexed PNG; the pixel value is the class id (palette index).
inline void write_png_indexed8(const std::string& path, std::size_t width, std::size_t height,
                               const std::vector<std::uint8_t>& indices, const Palette& palette) {
    require(indices.size() == width * height, "index buffer size mismatch for " + path);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    std::array<png_color, 256> plte;
    for (std::size_t i = 0; i < 256; ++i)
        plte[i] = {palette.colors[i][0], palette.colors[i][1], palette.colors[i][2]};
    png_set_PLTE(png, info, plte.data(), 256);
    png_write_info(png, info);
    for (std::size_t r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(indices.data() + r * width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct IndexedImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> indices;
    Palette palette;
};

inline IndexedImage read_png_indexed(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, "cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_PALETTE) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("expected an indexed (palette) png: " + path);
    }
    if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
    png_read_update_info(png, info);
    IndexedImage img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    png_colorp plte = nullptr;
    int n_plte = 0;
    if (png_get_PLTE(png, info, &plte, &n_plte) == PNG_INFO_PLTE) {
        for (int i = 0; i < n_plte && i < 256; ++i)
            img.palette.colors[static_cast<std::size_t>(i)] = {plte[i].red, plte[i].green, plte[i].blue};
    }
    img.indices.resize(img.width * img.height);
    for (std::size_t r = 0; r < img.height; ++r)
        png_read_row(png, img.indices.data() + r * img.width, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // RGB8
};

inline RgbImage read_png_rgb(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, "cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    RgbImage img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.pixels.resize(img.width * img.height * 3);
    for (std::size_t r = 0; r < img.height; ++r)
        png_read_row(png, img.pixels.data() + r * img.width * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace frcnn
