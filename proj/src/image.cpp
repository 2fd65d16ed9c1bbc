#include "stma/image.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <png.h>

namespace stma {

int TargetMasks::max_id() const {
    int m = 0;
    for (int v : ids) m = std::max(m, v);
    return m;
}

Tensor TargetMasks::binary_plane(int target) const {
    Tensor out({height, width});
    for (std::size_t i = 0; i < ids.size(); ++i) out[i] = ids[i] == target ? 1.0 : 0.0;
    return out;
}

Frame pad_frame(const Frame& f, std::size_t multiple) {
    const std::size_t h = (f.height + multiple - 1) / multiple * multiple;
    const std::size_t w = (f.width + multiple - 1) / multiple * multiple;
    if (h == f.height && w == f.width) return f;
    Frame out = Frame::zeros(h, w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < f.height; ++y)
            for (std::size_t x = 0; x < f.width; ++x) out.at(c, y, x) = f.at(c, y, x);
    return out;
}

TargetMasks pad_masks(const TargetMasks& m, std::size_t multiple) {
    const std::size_t h = (m.height + multiple - 1) / multiple * multiple;
    const std::size_t w = (m.width + multiple - 1) / multiple * multiple;
    if (h == m.height && w == m.width) return m;
    TargetMasks out = TargetMasks::background(h, w);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, x);
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is),
                                     std::istreambuf_iterator<char>());
}

namespace {

bool has_ext(const std::string& path, const char* ext) {
    const std::size_t n = std::strlen(ext);
    return path.size() >= n &&
           std::equal(path.end() - static_cast<std::ptrdiff_t>(n), path.end(), ext,
                      [](char a, char b) { return std::tolower(a) == b; });
}

// Parses netpbm headers: magic, whitespace/comments, width, height, maxval.
struct PnmHeader {
    int magic = 0;
    std::size_t width = 0, height = 0;
    std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    std::size_t pos = 0;
    auto peek = [&]() -> int { return pos < bytes.size() ? bytes[pos] : -1; };
    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            if (std::isspace(peek())) {
                ++pos;
            } else if (peek() == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::size_t {
        skip_space();
        std::size_t v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(peek())) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw std::runtime_error("malformed netpbm header in " + path);
        return v;
    };

    PnmHeader h;
    if (bytes.size() < 2 || bytes[0] != 'P') throw std::runtime_error("not a netpbm file: " + path);
    h.magic = bytes[1] - '0';
    pos = 2;
    h.width = read_int();
    h.height = read_int();
    const std::size_t maxval = read_int();
    if (maxval != 255) throw std::runtime_error("only 8-bit netpbm supported: " + path);
    ++pos;  // single whitespace after maxval
    h.payload_offset = pos;
    return h;
}

Frame frame_from_rgb8(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
    Frame f = Frame::zeros(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                f.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0;
    return f;
}

// --- libpng wrappers ---------------------------------------------------

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        if (fp) std::fclose(fp);
    }
};

std::vector<std::uint8_t> read_png(const std::string& path, std::size_t& h, std::size_t& w,
                                   bool want_gray) {
    PngReader r;
    r.fp = std::fopen(path.c_str(), "rb");
    if (!r.fp) throw std::runtime_error("cannot open: " + path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info || setjmp(png_jmpbuf(r.png)))
        throw std::runtime_error("png read failed: " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    png_set_strip_16(r.png);
    png_set_packing(r.png);
    const int color = png_get_color_type(r.png, r.info);
    if (want_gray) {
        if (color & PNG_COLOR_MASK_PALETTE) png_set_palette_to_rgb(r.png);
        if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
        png_set_strip_alpha(r.png);
    } else {
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(r.png);
        png_set_strip_alpha(r.png);
    }
    png_read_update_info(r.png, r.info);

    h = png_get_image_height(r.png, r.info);
    w = png_get_image_width(r.png, r.info);
    const std::size_t stride = png_get_rowbytes(r.png, r.info);
    std::vector<std::uint8_t> pixels(h * stride);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return pixels;
}

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, &info);
        if (fp) std::fclose(fp);
    }
};

void write_png(const std::string& path, const std::uint8_t* pixels, std::size_t h, std::size_t w,
               int channels) {
    PngWriter wtr;
    wtr.fp = std::fopen(path.c_str(), "wb");
    if (!wtr.fp) throw std::runtime_error("cannot open for writing: " + path);
    wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wtr.info = png_create_info_struct(wtr.png);
    if (!wtr.png || !wtr.info || setjmp(png_jmpbuf(wtr.png)))
        throw std::runtime_error("png write failed: " + path);
    png_init_io(wtr.png, wtr.fp);
    png_set_IHDR(wtr.png, wtr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wtr.png, wtr.info);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(pixels + y * w * static_cast<std::size_t>(channels));
    png_write_image(wtr.png, rows.data());
    png_write_end(wtr.png, nullptr);
}

}  // namespace

Frame load_frame(const std::string& path) {
    if (has_ext(path, ".png")) {
        std::size_t h = 0, w = 0;
        auto rgb = read_png(path, h, w, /*want_gray=*/false);
        return frame_from_rgb8(rgb.data(), h, w);
    }
    auto bytes = read_file_bytes(path);
    PnmHeader hdr = parse_pnm_header(bytes, path);
    if (hdr.magic != 6) throw std::runtime_error("expected P6 ppm: " + path);
    if (bytes.size() < hdr.payload_offset + hdr.width * hdr.height * 3)
        throw std::runtime_error("truncated ppm payload: " + path);
    return frame_from_rgb8(bytes.data() + hdr.payload_offset, hdr.height, hdr.width);
}

void save_frame(const std::string& path, const Frame& f) {
    std::vector<std::uint8_t> rgb(f.height * f.width * 3);
    for (std::size_t y = 0; y < f.height; ++y)
        for (std::size_t x = 0; x < f.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double v = std::clamp(f.at(c, y, x), 0.0, 1.0);
                rgb[(y * f.width + x) * 3 + c] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
            }
    if (has_ext(path, ".png")) {
        write_png(path, rgb.data(), f.height, f.width, 3);
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P6\n" << f.width << " " << f.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

TargetMasks load_masks(const std::string& path) {
    if (has_ext(path, ".png")) {
        std::size_t h = 0, w = 0;
        auto gray = read_png(path, h, w, /*want_gray=*/true);
        TargetMasks m = TargetMasks::background(h, w);
        for (std::size_t i = 0; i < h * w; ++i) m.ids[i] = gray[i];
        return m;
    }
    auto bytes = read_file_bytes(path);
    PnmHeader hdr = parse_pnm_header(bytes, path);
    if (hdr.magic != 5) throw std::runtime_error("expected P5 pgm: " + path);
    if (bytes.size() < hdr.payload_offset + hdr.width * hdr.height)
        throw std::runtime_error("truncated pgm payload: " + path);
    TargetMasks m = TargetMasks::background(hdr.height, hdr.width);
    for (std::size_t i = 0; i < hdr.width * hdr.height; ++i)
        m.ids[i] = bytes[hdr.payload_offset + i];
    return m;
}

void save_masks(const std::string& path, const TargetMasks& m) {
    std::vector<std::uint8_t> gray(m.ids.size());
    for (std::size_t i = 0; i < m.ids.size(); ++i)
        gray[i] = static_cast<std::uint8_t>(std::clamp(m.ids[i], 0, 255));
    if (has_ext(path, ".png")) {
        write_png(path, gray.data(), m.height, m.width, 1);
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P5\n" << m.width << " " << m.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

}  // namespace stma
