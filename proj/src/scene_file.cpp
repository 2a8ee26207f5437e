// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/scene_file.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "splat/image_io.hpp"

namespace splat {
namespace {

using nlohmann::json;

const char *kFormat = "splat-scene";

template <typename Row> json array_of(const Row &row) {
    json out = json::array();
    for (Index i = 0; i < row.size(); ++i) {
        out.push_back(row(i));
    }
    return out;
}

class Reader {
  public:
    explicit Reader(std::string where) : where_(std::move(where)) {}

    Reader at(const std::string &key) const { return Reader(where_ + "." + key); }
    Reader at(std::size_t i) const { return Reader(where_ + "[" + std::to_string(i) + "]"); }

    [[noreturn]] void fail(const std::string &msg) const { throw MalformedDocumentError("scene file: " + where_ + ": " + msg); }

    const json &field(const json &obj, const std::string &key) const {
        if (!obj.is_object()) {
            fail("expected an object");
        }
        const auto it = obj.find(key);
        if (it == obj.end()) {
            fail("missing field '" + key + "'");
        }
        return *it;
    }

    double number(const json &v, const std::string &who = "") const {
        if (v.is_number()) {
            const double d = v.get<double>();
            if (!std::isfinite(d)) {
                non_finite(who);
            }
            return d;
        }
        if (v.is_null() || (v.is_string() && is_non_finite_token(v.get<std::string>()))) {
            non_finite(who);
        }
        fail("expected a number");
    }

    template <int N> Eigen::Matrix<double, N, 1> vec(const json &v, const std::string &who = "") const {
        if (!v.is_array() || v.size() != N) {
            fail("expected an array of " + std::to_string(N) + " numbers");
        }
        Eigen::Matrix<double, N, 1> out;
        for (int i = 0; i < N; ++i) {
            out(i) = at(static_cast<std::size_t>(i)).number(v[static_cast<std::size_t>(i)], who);
        }
        return out;
    }

    int integer(const json &v) const {
        if (!v.is_number_integer()) {
            fail("expected an integer");
        }
        return v.get<int>();
    }

  private:
    static bool is_non_finite_token(std::string s) {
        for (auto &c : s) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        return s == "nan" || s == "inf" || s == "-inf" || s == "+inf" || s == "infinity" || s == "-infinity";
    }

    [[noreturn]] void non_finite(const std::string &who) const {
        throw NonFiniteValueError("scene file: " + where_ + ": non-finite value" + (who.empty() ? "" : " in " + who));
    }

    std::string where_;
};

json camera_json(const Camera<double> &cam, const std::string &image) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) {
        rot.push_back(array_of(cam.rotation.row(r)));
    }
    json out = {{"rotation", rot},         {"translation", array_of(cam.translation)},
                {"fx", cam.fx},            {"fy", cam.fy},
                {"cx", cam.cx},            {"cy", cam.cy},
                {"width", cam.width},      {"height", cam.height},
                {"near_plane", cam.near_plane}};
    if (!image.empty()) {
        out["image"] = image;
    }
    return out;
}

Camera<double> camera_from(const json &j, const Reader &r) {
    Camera<double> cam;
    if (j.contains("rotation")) {
        const json &rot = j["rotation"];
        if (!rot.is_array() || rot.size() != 3) {
            r.at("rotation").fail("expected a 3x3 array");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            cam.rotation.row(static_cast<Index>(i)) = r.at("rotation").at(i).vec<3>(rot[i]).transpose();
        }
    } else if (j.contains("quat")) {
        const Vec4<double> q = r.at("quat").vec<4>(j["quat"]);
        if (q.norm() <= 1e-12) {
            throw DegenerateInputError("scene file: camera quaternion has zero norm");
        }
        cam.rotation = quat_to_rotmat(q);
    } else {
        r.fail("camera needs 'rotation' (3x3) or 'quat' (w, x, y, z)");
    }
    cam.translation = r.at("translation").vec<3>(r.field(j, "translation"));
    cam.fx = r.at("fx").number(r.field(j, "fx"));
    cam.fy = r.at("fy").number(r.field(j, "fy"));
    cam.cx = r.at("cx").number(r.field(j, "cx"));
    cam.cy = r.at("cy").number(r.field(j, "cy"));
    cam.width = r.at("width").integer(r.field(j, "width"));
    cam.height = r.at("height").integer(r.field(j, "height"));
    if (j.contains("near_plane")) {
        cam.near_plane = r.at("near_plane").number(j["near_plane"]);
    }
    cam.validate();
    return cam;
}

std::size_t line_of(const std::string &text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

} // namespace

std::string scene_to_string(const Scene &scene) {
    const auto &c = scene.cloud;
    c.validate();
    for (const auto &cam : scene.cameras) {
        cam.validate();
    }
    if (!scene.images.empty() && scene.images.size() != scene.cameras.size()) {
        throw ValidationError("scene file: image list length differs from camera count");
    }
    std::ostringstream os;
    os << "{\n  \"format\": \"" << kFormat << "\",\n  \"version\": " << kSceneFileVersion << ",\n"
       << "  \"channels\": " << c.channels << ",\n  \"sh_degree\": " << c.max_sh_degree() << ",\n"
       << "  \"activation\": {\"scale\": \"log\", \"opacity\": \"logit\"},\n  \"gaussians\": [";
    for (Index i = 0; i < c.size(); ++i) {
        const json g = {{"mean", array_of(c.means.row(i))},
                        {"scale", array_of(c.raw_scales.row(i))},
                        {"quat", array_of(c.quats.row(i))},
                        {"opacity", c.raw_opacities(i)},
                        {"sh", array_of(c.sh_coeffs.row(i))}};
        os << (i ? ",\n    " : "\n    ") << g.dump();
    }
    os << (c.size() ? "\n  ],\n" : "],\n") << "  \"cameras\": [";
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const std::string image = scene.images.empty() ? "" : scene.images[v];
        os << (v ? ",\n    " : "\n    ") << camera_json(scene.cameras[v], image).dump();
    }
    os << (scene.cameras.empty() ? "]\n}\n" : "\n  ]\n}\n");
    return os.str();
}

Scene scene_from_string(const std::string &text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        throw MalformedDocumentError("scene file: line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    const Reader root("scene");
    if (!doc.is_object()) {
        root.fail("expected a JSON object");
    }
    if (!doc.contains("format") || doc["format"] != kFormat) {
        root.fail("missing or unknown 'format' (expected \"" + std::string(kFormat) + "\")");
    }
    if (!doc.contains("version") || !doc["version"].is_number_integer()) {
        throw SchemaVersionError("scene file: missing schema version");
    }
    const int version = doc["version"].get<int>();
    if (version != kSceneFileVersion) {
        throw SchemaVersionError("scene file: schema version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kSceneFileVersion) + ")");
    }
    const int channels = root.at("channels").integer(root.field(doc, "channels"));
    const int degree = root.at("sh_degree").integer(root.field(doc, "sh_degree"));
    if (channels < 1 || degree < 0 || degree > 3) {
        root.fail("channels must be positive and sh_degree in [0, 3]");
    }
    const json &act = root.field(doc, "activation");
    const std::string scale_space = root.at("activation").field(act, "scale").get<std::string>();
    const std::string opacity_space = root.at("activation").field(act, "opacity").get<std::string>();
    if (scale_space != "log" && scale_space != "linear") {
        root.at("activation.scale").fail("expected \"log\" or \"linear\"");
    }
    if (opacity_space != "logit" && opacity_space != "linear") {
        root.at("activation.opacity").fail("expected \"logit\" or \"linear\"");
    }

    const json &gs = root.field(doc, "gaussians");
    if (!gs.is_array()) {
        root.at("gaussians").fail("expected an array");
    }
    Scene scene;
    auto &c = scene.cloud;
    c.resize(static_cast<Index>(gs.size()), degree, channels);
    const Index coeffs = c.sh_coeffs.cols();
    for (std::size_t i = 0; i < gs.size(); ++i) {
        const Reader r = root.at("gaussians").at(i);
        const std::string who = "Gaussian " + std::to_string(i);
        const json &g = gs[i];
        const Index n = static_cast<Index>(i);
        c.means.row(n) = r.at("mean").vec<3>(r.field(g, "mean"), who).transpose();
        Vec3<double> s = r.at("scale").vec<3>(r.field(g, "scale"), who);
        if (scale_space == "linear") {
            if (!(s.array() > 0).all()) {
                r.at("scale").fail("linear scales must be positive");
            }
            s = s.array().log();
        }
        c.raw_scales.row(n) = s.transpose();
        c.quats.row(n) = r.at("quat").vec<4>(r.field(g, "quat"), who).transpose();
        double o = r.at("opacity").number(r.field(g, "opacity"), who);
        if (opacity_space == "linear") {
            if (!(o > 0 && o < 1)) {
                r.at("opacity").fail("linear opacity must lie in (0, 1)");
            }
            o = logit(o);
        }
        c.raw_opacities(n) = o;
        const json &sh = r.field(g, "sh");
        if (!sh.is_array() || static_cast<Index>(sh.size()) != coeffs) {
            r.at("sh").fail("expected " + std::to_string(coeffs) + " coefficients");
        }
        for (Index k = 0; k < coeffs; ++k) {
            c.sh_coeffs(n, k) = r.at("sh").at(static_cast<std::size_t>(k)).number(sh[static_cast<std::size_t>(k)], who);
        }
    }
    c.validate();

    const json &cams = root.field(doc, "cameras");
    if (!cams.is_array()) {
        root.at("cameras").fail("expected an array");
    }
    bool any_image = false;
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const Reader r = root.at("cameras").at(v);
        scene.cameras.push_back(camera_from(cams[v], r));
        std::string image;
        if (cams[v].contains("image")) {
            if (!cams[v]["image"].is_string()) {
                r.at("image").fail("expected a file name");
            }
            image = cams[v]["image"].get<std::string>();
            any_image = true;
        }
        scene.images.push_back(image);
    }
    if (!any_image) {
        scene.images.clear();
    }
    return scene;
}

void save_scene(const std::filesystem::path &path, const Scene &scene) { write_file_atomic(path, scene_to_string(scene)); }

Scene load_scene(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read scene file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return scene_from_string(ss.str());
}

} // namespace splat
