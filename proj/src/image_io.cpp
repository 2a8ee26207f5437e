// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/image_io.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "splat/errors.hpp"

namespace splat {
namespace {

unsigned char to_byte(double v) {
    if (!std::isfinite(v)) {
        throw ValidationError("write_ppm: non-finite pixel value");
    }
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string token(std::istream &in) {
    std::string tok;
    for (;;) {
        const int ch = in.get();
        if (ch == EOF) {
            break;
        }
        if (ch == '#' && tok.empty()) {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) {
                break;
            }
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

} // namespace

void write_file_atomic(const std::filesystem::path &path, const std::string &data) {
    static std::atomic<unsigned> counter{0};
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()) + "_" +
                            std::to_string(counter++));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + path.string());
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("failed writing " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot replace " + path.string());
    }
}

std::string encode_ppm(const RowsX<double> &color, int width, int height) {
    if (width < 1 || height < 1 || color.rows() != Index(width) * height || color.cols() != 3) {
        throw ValidationError("write_ppm: expected (H * W) x 3 color values");
    }
    std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + static_cast<std::size_t>(color.size()));
    for (Index i = 0; i < color.size(); ++i) {
        out[header + static_cast<std::size_t>(i)] = static_cast<char>(to_byte(color.data()[i]));
    }
    return out;
}

void write_ppm(const std::filesystem::path &path, const RowsX<double> &color, int width, int height) {
    write_file_atomic(path, encode_ppm(color, width, height));
}

RowsX<double> read_ppm(const std::filesystem::path &path, int &width, int &height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read image " + path.string());
    }
    const std::string magic = token(in);
    if (magic != "P6" && magic != "P5") {
        throw ValidationError("read_ppm: " + path.string() + " is not a binary PPM/PGM");
    }
    const int channels = magic == "P6" ? 3 : 1;
    int maxval = 0;
    try {
        width = std::stoi(token(in));
        height = std::stoi(token(in));
        maxval = std::stoi(token(in));
    } catch (const std::exception &) {
        throw ValidationError("read_ppm: malformed header in " + path.string());
    }
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
        throw ValidationError("read_ppm: bad dimensions in " + path.string());
    }
    const int bytes = maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    std::string payload(count * bytes, '\0');
    if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
        throw ValidationError("read_ppm: truncated payload in " + path.string());
    }
    RowsX<double> out(Index(width) * height, 3);
    for (Index p = 0; p < out.rows(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const std::size_t i = static_cast<std::size_t>(p) * channels + (channels == 3 ? c : 0);
            const auto *b = reinterpret_cast<const unsigned char *>(payload.data()) + i * bytes;
            const int v = bytes == 2 ? (b[0] << 8 | b[1]) : b[0];
            out(p, c) = static_cast<double>(v) / maxval;
        }
    }
    return out;
}

std::string encode_depth_pgm(const Image<double> &depth, double d_max) {
    if (depth.size() == 0) {
        throw ValidationError("write_depth_pgm: empty depth map");
    }
    if (!(d_max > 0)) {
        d_max = 0;
        for (Index i = 0; i < depth.size(); ++i) {
            if (std::isfinite(depth.data()[i])) {
                d_max = std::max(d_max, depth.data()[i]);
            }
        }
        if (d_max <= 0) {
            d_max = 1;
        }
    }
    char dmax[64];
    std::snprintf(dmax, sizeof dmax, "%.17g", d_max);
    std::string out = "P5\n# d_max " + std::string(dmax) + "\n" + std::to_string(depth.cols()) + " " +
                      std::to_string(depth.rows()) + "\n65535\n";
    for (Index y = 0; y < depth.rows(); ++y) {
        for (Index x = 0; x < depth.cols(); ++x) {
            double d = depth(y, x);
            if (!std::isfinite(d)) {
                throw ValidationError("write_depth_pgm: non-finite depth value");
            }
            const auto v = static_cast<unsigned>(std::floor(std::clamp(d / d_max, 0.0, 1.0) * 65535.0 + 0.5));
            out.push_back(static_cast<char>(v >> 8));
            out.push_back(static_cast<char>(v & 0xff));
        }
    }
    return out;
}

void write_depth_pgm(const std::filesystem::path &path, const Image<double> &depth, double d_max) {
    write_file_atomic(path, encode_depth_pgm(depth, d_max));
}

} // namespace splat
