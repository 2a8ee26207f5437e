// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/ply.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "splat/image_io.hpp"

namespace splat {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY payload is written in host order");

constexpr int kRest = 15; // per channel at degree 3
constexpr std::size_t kFloats = 3 + 3 + 3 * kRest + 1 + 3 + 4;

std::vector<std::string> layout() {
    std::vector<std::string> names = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 3 * kRest; ++i) {
        names.push_back("f_rest_" + std::to_string(i));
    }
    names.emplace_back("opacity");
    for (int i = 0; i < 3; ++i) {
        names.push_back("scale_" + std::to_string(i));
    }
    for (int i = 0; i < 4; ++i) {
        names.push_back("rot_" + std::to_string(i));
    }
    return names;
}

std::string join(const std::vector<std::string> &v) {
    std::string out;
    for (const auto &s : v) {
        out += (out.empty() ? "" : " ") + s;
    }
    return out;
}

// Row of kFloats floats in layout() order; f_rest is channel-major (c * 15 + k - 1).
std::vector<float> pack(const GaussianCloud<double> &c, Index n) {
    std::vector<float> row;
    row.reserve(kFloats);
    for (int k = 0; k < 3; ++k) {
        row.push_back(static_cast<float>(c.means(n, k)));
    }
    for (int ch = 0; ch < 3; ++ch) {
        row.push_back(static_cast<float>(c.sh(n, 0, ch)));
    }
    const int bases = c.sh_bases();
    for (int ch = 0; ch < 3; ++ch) {
        for (int k = 1; k <= kRest; ++k) {
            row.push_back(k < bases ? static_cast<float>(c.sh(n, k, ch)) : 0.0f);
        }
    }
    row.push_back(static_cast<float>(c.raw_opacities(n)));
    for (int k = 0; k < 3; ++k) {
        row.push_back(static_cast<float>(c.raw_scales(n, k)));
    }
    for (int k = 0; k < 4; ++k) {
        row.push_back(static_cast<float>(c.quats(n, k)));
    }
    return row;
}

} // namespace

void export_ply(const std::filesystem::path &path, const GaussianCloud<double> &cloud) {
    cloud.validate();
    if (cloud.channels != 3) {
        throw ValidationError("export_ply: the PLY layout holds exactly 3 color channels");
    }
    std::ostringstream os;
    os << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const auto &name : layout()) {
        os << "property float " << name << "\n";
    }
    os << "end_header\n";
    std::string data = os.str();
    const std::size_t header = data.size();
    data.resize(header + static_cast<std::size_t>(cloud.size()) * kFloats * sizeof(float));
    char *out = data.data() + header;
    for (Index n = 0; n < cloud.size(); ++n) {
        const auto row = pack(cloud, n);
        std::memcpy(out, row.data(), row.size() * sizeof(float));
        out += row.size() * sizeof(float);
    }
    write_file_atomic(path, data);
}

GaussianCloud<double> import_ply(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read PLY file " + path.string());
    }
    std::string line;
    auto next = [&] {
        if (!std::getline(in, line)) {
            throw ValidationError("PLY: truncated header in " + path.string());
        }
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
    };
    next();
    if (line != "ply") {
        throw ValidationError("PLY: missing magic in " + path.string());
    }
    Index count = -1;
    std::vector<std::string> props;
    bool in_vertex = false;
    for (;;) {
        next();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header") {
            break;
        }
        if (word == "comment" || word == "obj_info" || word.empty()) {
            continue;
        }
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") {
                throw UnsupportedLayoutError("PLY: unsupported format '" + fmt + "' (need binary_little_endian)");
            }
        } else if (word == "element") {
            std::string name;
            ls >> name;
            if (name != "vertex" || count >= 0) {
                throw UnsupportedLayoutError("PLY: unexpected element '" + name + "'");
            }
            ls >> count;
            in_vertex = true;
            if (count < 0 || ls.fail()) {
                throw ValidationError("PLY: bad vertex count");
            }
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (!in_vertex || (type != "float" && type != "float32")) {
                throw UnsupportedLayoutError("PLY: property '" + line + "' is not a float32 vertex property");
            }
            props.push_back(name);
        } else {
            throw ValidationError("PLY: unrecognised header line '" + line + "'");
        }
    }
    std::vector<std::string> expected = layout();
    std::vector<std::string> found = props;
    const bool normals = found.size() >= 6 && found[3] == "nx" && found[4] == "ny" && found[5] == "nz";
    if (normals) {
        found.erase(found.begin() + 3, found.begin() + 6);
    }
    if (found != expected || count < 0) {
        throw UnsupportedLayoutError("PLY: unsupported vertex layout; found properties: " + join(props));
    }
    const std::size_t stride = props.size();
    GaussianCloud<double> cloud = GaussianCloud<double>::zeros(count, 3, 3);
    std::vector<float> row(stride);
    for (Index n = 0; n < count; ++n) {
        if (!in.read(reinterpret_cast<char *>(row.data()), static_cast<std::streamsize>(stride * sizeof(float)))) {
            throw ValidationError("PLY: payload holds fewer than " + std::to_string(count) + " vertices");
        }
        const float *p = row.data();
        for (int k = 0; k < 3; ++k) {
            cloud.means(n, k) = p[k];
        }
        p += normals ? 6 : 3;
        for (int ch = 0; ch < 3; ++ch) {
            cloud.sh(n, 0, ch) = *p++;
        }
        for (int ch = 0; ch < 3; ++ch) {
            for (int k = 1; k <= kRest; ++k) {
                cloud.sh(n, k, ch) = *p++;
            }
        }
        cloud.raw_opacities(n) = *p++;
        for (int k = 0; k < 3; ++k) {
            cloud.raw_scales(n, k) = *p++;
        }
        for (int k = 0; k < 4; ++k) {
            cloud.quats(n, k) = *p++;
        }
    }
    in.peek();
    if (!in.eof()) {
        throw ValidationError("PLY: payload is longer than the declared vertex count");
    }
    cloud.validate();
    return cloud;
}

GaussianCloud<double> ply_quantized(const GaussianCloud<double> &cloud) {
    if (cloud.channels != 3) {
        throw ValidationError("ply_quantized: the PLY layout holds exactly 3 color channels");
    }
    GaussianCloud<double> out = GaussianCloud<double>::zeros(cloud.size(), 3, 3);
    auto q = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    out.means = cloud.means.unaryExpr(q);
    out.raw_scales = cloud.raw_scales.unaryExpr(q);
    out.quats = cloud.quats.unaryExpr(q);
    out.raw_opacities = cloud.raw_opacities.unaryExpr(q);
    out.sh_coeffs.leftCols(cloud.sh_coeffs.cols()) = cloud.sh_coeffs.unaryExpr(q);
    return out;
}

} // namespace splat
