#include "upr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "upr/nn_ops.hpp"

namespace upr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

TensorF load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("load_png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw DataError("load_png: not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("load_png: libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("load_png: libpng info init failed for " + path);
    }

    // All buffers live outside the setjmp scope; only PODs are live across it.
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int bit_depth = 0, channels = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("load_png: corrupt or unsupported PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png); // host little-endian
    if (bit_depth < 8) bit_depth = 8;
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 3) throw DataError("load_png: unexpected channel count in " + path);

    const std::int64_t h = height, w = width;
    TensorF out = TensorF::zeros({1, 3, h, w});
    float* po = out.data();
    if (bit_depth == 8) {
        const float scale = 1.0f / 255.0f;
        for (std::int64_t y = 0; y < h; ++y) {
            const png_byte* row = pixels.data() + y * rowbytes;
            for (std::int64_t x = 0; x < w; ++x)
                for (std::int64_t c = 0; c < 3; ++c)
                    po[(c * h + y) * w + x] = static_cast<float>(row[x * 3 + c]) * scale;
        }
    } else if (bit_depth == 16) {
        const float scale = 1.0f / 65535.0f;
        for (std::int64_t y = 0; y < h; ++y) {
            const std::uint16_t* row = reinterpret_cast<const std::uint16_t*>(pixels.data() + y * rowbytes);
            for (std::int64_t x = 0; x < w; ++x)
                for (std::int64_t c = 0; c < 3; ++c)
                    po[(c * h + y) * w + x] = static_cast<float>(row[x * 3 + c]) * scale;
        }
    } else {
        throw DataError("load_png: unsupported bit depth " + std::to_string(bit_depth) + " in " + path);
    }
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = std::clamp(po[i], 0.0f, 1.0f);
    return out;
}

void save_png(const TensorF& frame, const std::string& path, int bit_depth) {
    const Shape4& s = frame.shape();
    if (s.n != 1 || s.c != 3) {
        throw ShapeError("save_png: expected (1,3,h,w) frame, got " + s.str());
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw DataError("save_png: bit depth must be 8 or 16");
    }

    const std::int64_t h = s.h, w = s.w;
    const std::size_t rowbytes = static_cast<std::size_t>(w) * 3 * (bit_depth / 8);
    std::vector<png_byte> pixels(rowbytes * h);
    const float* pf = frame.data();
    if (bit_depth == 8) {
        for (std::int64_t y = 0; y < h; ++y) {
            png_byte* row = pixels.data() + y * rowbytes;
            for (std::int64_t x = 0; x < w; ++x)
                for (std::int64_t c = 0; c < 3; ++c) {
                    const float v = std::clamp(pf[(c * h + y) * w + x], 0.0f, 1.0f);
                    row[x * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
                }
        }
    } else {
        for (std::int64_t y = 0; y < h; ++y) {
            std::uint16_t* row = reinterpret_cast<std::uint16_t*>(pixels.data() + y * rowbytes);
            for (std::int64_t x = 0; x < w; ++x)
                for (std::int64_t c = 0; c < 3; ++c) {
                    const float v = std::clamp(pf[(c * h + y) * w + x], 0.0f, 1.0f);
                    row[x * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
                }
        }
    }

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("save_png: cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("save_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("save_png: libpng info init failed");
    }
    std::vector<png_bytep> rows(h);
    for (std::int64_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("save_png: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<TensorF> build_pyramid(const TensorF& frame, int levels) {
    if (levels < 1) throw DataError("build_pyramid: level count must be >= 1");
    const Shape4& s = frame.shape();
    std::int64_t shorter = std::min(s.h, s.w);
    for (int l = 1; l < levels; ++l) shorter = (shorter + 1) / 2;
    if (shorter < 16) {
        throw DataError("build_pyramid: coarsest level would be " + std::to_string(shorter) +
                        " px on its shorter side (< 16); use fewer pyramid levels");
    }
    std::vector<TensorF> pyr;
    pyr.reserve(levels);
    pyr.push_back(frame);
    for (int l = 1; l < levels; ++l) pyr.push_back(avg_pool2(pyr.back()));
    return pyr;
}

template <typename T>
TensorT<T> resize_flow(const TensorT<T>& flow, std::int64_t out_h, std::int64_t out_w) {
    const Shape4& s = flow.shape();
    if (s.c != 2) throw ShapeError("resize_flow: flow must have 2 channels, got " + std::to_string(s.c));
    TensorT<T> r = bilinear_resize(flow, out_h, out_w);
    const double sx = static_cast<double>(out_w) / static_cast<double>(s.w);
    const double sy = static_cast<double>(out_h) / static_cast<double>(s.h);
    if (sx == sy) return mul_scalar(r, static_cast<T>(sx));
    auto fx = mul_scalar(narrow_channels(r, 0, 1), static_cast<T>(sx));
    auto fy = mul_scalar(narrow_channels(r, 1, 1), static_cast<T>(sy));
    return concat_channels<T>({fx, fy});
}

template <typename T>
TensorT<T> upsample_flow_2x(const TensorT<T>& flow) {
    const Shape4& s = flow.shape();
    return resize_flow(flow, s.h * 2, s.w * 2);
}

template <typename T>
TensorT<T> scale_flow_time(const TensorT<T>& flow, T factor) {
    if (!(factor >= T(0) && factor <= T(1))) {
        throw NumericError("scale_flow_time: factor " + std::to_string(factor) + " outside [0,1]");
    }
    if (flow.shape().c != 2) {
        throw ShapeError("scale_flow_time: flow must have 2 channels, got " + std::to_string(flow.shape().c));
    }
    return mul_scalar(flow, factor);
}

TensorF pad_to_multiple(const TensorF& frame, std::int64_t m, PadInfo& info) {
    const Shape4& s = frame.shape();
    info.orig_h = s.h;
    info.orig_w = s.w;
    info.pad_h = (m - s.h % m) % m;
    info.pad_w = (m - s.w % m) % m;
    if (info.pad_h == 0 && info.pad_w == 0) return frame;
    return reflect_pad(frame, 0, info.pad_h, 0, info.pad_w);
}

#define UPR_INSTANTIATE(T)                                                                                  \
    template TensorT<T> resize_flow<T>(const TensorT<T>&, std::int64_t, std::int64_t);                      \
    template TensorT<T> upsample_flow_2x<T>(const TensorT<T>&);                                             \
    template TensorT<T> scale_flow_time<T>(const TensorT<T>&, T);

UPR_INSTANTIATE(float)
UPR_INSTANTIATE(double)

#undef UPR_INSTANTIATE

} // namespace upr
