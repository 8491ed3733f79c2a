#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mbic/errors.hpp"
#include "mbic/tensor.hpp"

namespace mbic {

// ---------------------------------------------------------------------------
// 8-bit RGB rasters as (1, 3, H, W) tensors in [0, 1]. PPM (P6, maxval 255)
// is the supported interchange format.
// ---------------------------------------------------------------------------

namespace detail {

inline int ppm_token(std::istream& is) {
    // skips whitespace and '#' comments
    while (true) {
        const int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int value;
    if (!(is >> value)) throw IoError("ppm: malformed header");
    return value;
}

}  // namespace detail

inline Tensor read_ppm(std::istream& is) {
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw IoError("ppm: not a P6 file");
    const int width = detail::ppm_token(is);
    const int height = detail::ppm_token(is);
    const int maxval = detail::ppm_token(is);
    if (width <= 0 || height <= 0) throw IoError("ppm: bad dimensions");
    if (maxval != 255) throw IoError("ppm: only maxval 255 supported");
    is.get();  // single whitespace after maxval
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(width) * height * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw IoError("ppm: truncated pixel data");
    Tensor img(1, 3, height, width);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j)
            for (int c = 0; c < 3; ++c)
                img.at(0, c, i, j) =
                    static_cast<float>(raw[(static_cast<std::size_t>(i) * width + j) * 3 + c]) /
                    255.0f;
    return img;
}

inline Tensor read_ppm_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image file: " + path);
    return read_ppm(f);
}

inline void write_ppm(const Tensor& img, std::ostream& os) {
    if (img.n() != 1 || img.c() != 3) throw ShapeError("write_ppm: expected (1,3,H,W)");
    os << "P6\n" << img.w() << " " << img.h() << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.w()) * img.h() * 3);
    for (int i = 0; i < img.h(); ++i)
        for (int j = 0; j < img.w(); ++j)
            for (int c = 0; c < 3; ++c) {
                const long v = std::lround(static_cast<double>(img.at(0, c, i, j)) * 255.0);
                raw[(static_cast<std::size_t>(i) * img.w() + j) * 3 + c] =
                    static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
            }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void write_ppm_file(const Tensor& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open output image file: " + path);
    write_ppm(img, f);
    if (!f) throw IoError("failed writing image file: " + path);
}

// Edge-replication padding to the next multiples of `multiple` (bottom/right).
inline Tensor pad_replicate(const Tensor& img, int multiple) {
    const int ph = (img.h() + multiple - 1) / multiple * multiple;
    const int pw = (img.w() + multiple - 1) / multiple * multiple;
    if (ph == img.h() && pw == img.w()) return img;
    Tensor out(img.n(), img.c(), ph, pw);
    for (int n = 0; n < img.n(); ++n)
        for (int c = 0; c < img.c(); ++c)
            for (int i = 0; i < ph; ++i) {
                const int si = i < img.h() ? i : img.h() - 1;
                for (int j = 0; j < pw; ++j) {
                    const int sj = j < img.w() ? j : img.w() - 1;
                    out.at(n, c, i, j) = img.at(n, c, si, sj);
                }
            }
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open file: " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("failed reading file: " + path);
    return bytes;
}

inline void write_file(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open output file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing file: " + path);
}

}  // namespace mbic
