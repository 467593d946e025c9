// SPDX-License-Identifier: Apache-2.0

#include <lumisel/scene_io.h>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lumisel {

using json = nlohmann::json;

namespace {

constexpr const char *kFormatName = "lumisel-scene";
constexpr int kFormatVersion = 1;

class Parser {
  public:
    Parser(std::string baseDir, const SceneLoadOptions &options)
        : baseDir(std::move(baseDir)), options(options) {}

    SceneDescription Parse(const json &root) {
        CheckFields(root, "scene", {"format", "version", "materials", "meshes", "lights", "camera"});
        if (root.contains("format") &&
            (!root["format"].is_string() || root["format"].get<std::string>() != kFormatName))
            Fail("format", std::string("expected \"") + kFormatName + "\"");
        if (root.contains("version") && Integer(root["version"], "version") != kFormatVersion)
            Fail("version", "unsupported version (expected " + std::to_string(kFormatVersion) + ")");

        SceneDescription desc;
        if (root.contains("materials")) {
            const json &mats = Array(root["materials"], "materials");
            for (size_t i = 0; i < mats.size(); ++i)
                desc.materials.push_back(ParseMaterial(mats[i], Index("materials", i)));
        }
        for (size_t i = 0; i < desc.materials.size(); ++i)
            if (!desc.materials[i].name.empty())
                materialNames.emplace_back(desc.materials[i].name, int(i));
        if (root.contains("meshes")) {
            const json &meshes = Array(root["meshes"], "meshes");
            for (size_t i = 0; i < meshes.size(); ++i)
                ParseMesh(meshes[i], Index("meshes", i), desc);
        }
        const json &lights = Array(Require(root, "lights", "scene"), "lights");
        if (lights.empty())
            Fail("lights", "at least one light is required");
        for (size_t i = 0; i < lights.size(); ++i)
            desc.lights.push_back(ParseLight(lights[i], Index("lights", i)));
        if (root.contains("camera"))
            desc.camera = ParseCamera(root["camera"], "camera");
        return desc;
    }

  private:
    [[noreturn]] void Fail(const std::string &path, const std::string &what) const {
        throw SceneError(path + ": " + what);
    }

    static std::string Index(const std::string &path, size_t i) {
        return path + "[" + std::to_string(i) + "]";
    }

    void CheckFields(const json &obj, const std::string &path,
                     std::initializer_list<const char *> allowed) const {
        if (!obj.is_object())
            Fail(path, "expected an object");
        if (options.lenient)
            return;
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool known = std::any_of(allowed.begin(), allowed.end(),
                                     [&](const char *a) { return it.key() == a; });
            if (!known)
                Fail(path + "." + it.key(), "unknown field");
        }
    }

    const json &Require(const json &obj, const char *key, const std::string &path) const {
        if (!obj.contains(key))
            Fail(path + "." + key, "missing required field");
        return obj[key];
    }

    const json &Array(const json &j, const std::string &path) const {
        if (!j.is_array())
            Fail(path, "expected an array");
        return j;
    }

    double Number(const json &j, const std::string &path) const {
        if (!j.is_number())
            Fail(path, "expected a number");
        double v = j.get<double>();
        if (!std::isfinite(v))
            Fail(path, "expected a finite number");
        return v;
    }

    int Integer(const json &j, const std::string &path) const {
        if (!j.is_number_integer())
            Fail(path, "expected an integer");
        return j.get<int>();
    }

    bool Bool(const json &j, const std::string &path) const {
        if (!j.is_boolean())
            Fail(path, "expected true or false");
        return j.get<bool>();
    }

    std::string String(const json &j, const std::string &path) const {
        if (!j.is_string())
            Fail(path, "expected a string");
        return j.get<std::string>();
    }

    Vec3 ReadVec3(const json &j, const std::string &path) const {
        if (!j.is_array() || j.size() != 3)
            Fail(path, "expected an array of 3 numbers");
        return {Number(j[0], path + "[0]"), Number(j[1], path + "[1]"), Number(j[2], path + "[2]")};
    }

    Spectrum ReadSpectrum(const json &j, const std::string &path) const {
        if (j.is_number())
            return Spectrum(Number(j, path));
        Vec3 v = ReadVec3(j, path);
        return {v.x, v.y, v.z};
    }

    int MaterialRef(const json &j, const std::string &path) const {
        if (j.is_string()) {
            std::string name = j.get<std::string>();
            for (const auto &[n, i] : materialNames)
                if (n == name)
                    return i;
            Fail(path, "unknown material '" + name + "'");
        }
        return Integer(j, path);
    }

    Bsdf ParseMaterial(const json &j, const std::string &path) const {
        CheckFields(j, path, {"name", "type", "albedo", "roughness"});
        Bsdf b;
        if (j.contains("name"))
            b.name = String(j["name"], path + ".name");
        std::string type = j.contains("type") ? String(j["type"], path + ".type") : "lambertian";
        if (type == "lambertian")
            b.kind = BsdfKind::Lambertian;
        else if (type == "glossy")
            b.kind = BsdfKind::Glossy;
        else if (type == "mirror")
            b.kind = BsdfKind::Mirror;
        else
            Fail(path + ".type", "unknown material type '" + type + "'");
        if (j.contains("albedo"))
            b.albedo = ReadSpectrum(j["albedo"], path + ".albedo");
        if (j.contains("roughness"))
            b.roughness = Number(j["roughness"], path + ".roughness");
        else if (b.kind == BsdfKind::Glossy)
            b.roughness = 0.3;
        return b;
    }

    template <typename T>
    std::vector<T> ReadSidecar(const json &j, const std::string &path) const {
        std::filesystem::path file = String(j, path);
        if (file.is_relative())
            file = std::filesystem::path(baseDir) / file;
        std::ifstream in(file, std::ios::binary);
        if (!in)
            Fail(path, "cannot open buffer '" + file.string() + "'");
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (bytes.size() % (3 * sizeof(T)) != 0)
            Fail(path, "buffer size is not a multiple of " + std::to_string(3 * sizeof(T)) + " bytes");
        std::vector<T> values(bytes.size() / sizeof(T));
        for (size_t i = 0; i < values.size(); ++i) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= uint32_t(uint8_t(bytes[i * 4 + b])) << (8 * b);
            values[i] = std::bit_cast<T>(bits);
        }
        return values;
    }

    void ParseMesh(const json &j, const std::string &path, SceneDescription &desc) const {
        if (!j.is_object())
            Fail(path, "expected an object");
        std::string type = j.contains("type") ? String(j["type"], path + ".type") : "triangles";
        if (type == "sphere") {
            CheckFields(j, path, {"type", "material", "center", "radius"});
            Sphere s;
            s.material = MaterialRef(Require(j, "material", path), path + ".material");
            s.center = ReadVec3(Require(j, "center", path), path + ".center");
            s.radius = Number(Require(j, "radius", path), path + ".radius");
            desc.spheres.push_back(s);
            return;
        }
        if (type != "triangles")
            Fail(path + ".type", "unknown mesh type '" + type + "'");
        CheckFields(j, path,
                    {"type", "material", "vertices", "indices", "vertices_file", "indices_file"});
        TriangleMesh mesh;
        mesh.material = MaterialRef(Require(j, "material", path), path + ".material");
        if (j.contains("vertices") == j.contains("vertices_file"))
            Fail(path, "exactly one of vertices and vertices_file is required");
        if (j.contains("indices") == j.contains("indices_file"))
            Fail(path, "exactly one of indices and indices_file is required");
        if (j.contains("vertices")) {
            const json &vs = Array(j["vertices"], path + ".vertices");
            for (size_t i = 0; i < vs.size(); ++i)
                mesh.vertices.push_back(ReadVec3(vs[i], Index(path + ".vertices", i)));
        } else {
            std::vector<float> f = ReadSidecar<float>(j["vertices_file"], path + ".vertices_file");
            for (size_t i = 0; i < f.size(); i += 3) {
                if (!std::isfinite(f[i]) || !std::isfinite(f[i + 1]) || !std::isfinite(f[i + 2]))
                    Fail(path + ".vertices_file", "non-finite vertex " + std::to_string(i / 3));
                mesh.vertices.push_back({f[i], f[i + 1], f[i + 2]});
            }
        }
        if (j.contains("indices")) {
            const json &is = Array(j["indices"], path + ".indices");
            for (size_t i = 0; i < is.size(); ++i) {
                std::string ip = Index(path + ".indices", i);
                if (!is[i].is_array() || is[i].size() != 3)
                    Fail(ip, "expected an array of 3 indices");
                std::array<uint32_t, 3> tri;
                for (int k = 0; k < 3; ++k) {
                    if (!is[i][k].is_number_unsigned())
                        Fail(ip, "expected non-negative integers");
                    tri[k] = is[i][k].get<uint32_t>();
                }
                mesh.indices.push_back(tri);
            }
        } else {
            std::vector<uint32_t> u = ReadSidecar<uint32_t>(j["indices_file"], path + ".indices_file");
            for (size_t i = 0; i < u.size(); i += 3)
                mesh.indices.push_back({u[i], u[i + 1], u[i + 2]});
        }
        for (size_t i = 0; i < mesh.indices.size(); ++i)
            for (uint32_t v : mesh.indices[i])
                if (v >= mesh.vertices.size())
                    Fail(Index(path + ".indices", i), "vertex index " + std::to_string(v) + " out of range");
        desc.meshes.push_back(std::move(mesh));
    }

    Light ParseLight(const json &j, const std::string &path) const {
        if (!j.is_object())
            Fail(path, "expected an object");
        std::string type = String(Require(j, "type", path), path + ".type");
        Spectrum e;
        auto emission = [&] { return ReadSpectrum(Require(j, "emission", path), path + ".emission"); };
        auto twoSided = [&] { return j.contains("two_sided") && Bool(j["two_sided"], path + ".two_sided"); };
        if (type == "point") {
            CheckFields(j, path, {"type", "position", "emission"});
            return Light::Point(ReadVec3(Require(j, "position", path), path + ".position"), emission());
        }
        if (type == "area-triangle") {
            CheckFields(j, path, {"type", "vertices", "emission", "two_sided"});
            const json &vs = Require(j, "vertices", path);
            if (!vs.is_array() || vs.size() != 3)
                Fail(path + ".vertices", "expected 3 vertices");
            return Light::Triangle(ReadVec3(vs[0], path + ".vertices[0]"),
                                   ReadVec3(vs[1], path + ".vertices[1]"),
                                   ReadVec3(vs[2], path + ".vertices[2]"), emission(), twoSided());
        }
        if (type == "area-quad") {
            CheckFields(j, path, {"type", "corner", "edge_u", "edge_v", "emission", "two_sided"});
            return Light::Quad(ReadVec3(Require(j, "corner", path), path + ".corner"),
                               ReadVec3(Require(j, "edge_u", path), path + ".edge_u"),
                               ReadVec3(Require(j, "edge_v", path), path + ".edge_v"), emission(),
                               twoSided());
        }
        Fail(path + ".type", "unknown light type '" + type + "'");
    }

    Camera ParseCamera(const json &j, const std::string &path) const {
        CheckFields(j, path, {"position", "look_at", "up", "fov"});
        Camera c;
        if (j.contains("position"))
            c.position = ReadVec3(j["position"], path + ".position");
        if (j.contains("look_at"))
            c.lookAt = ReadVec3(j["look_at"], path + ".look_at");
        if (j.contains("up"))
            c.up = ReadVec3(j["up"], path + ".up");
        if (j.contains("fov")) {
            c.fovDegrees = Number(j["fov"], path + ".fov");
            if (!(c.fovDegrees > 0 && c.fovDegrees < 180))
                Fail(path + ".fov", "must be in (0, 180)");
        }
        if (LengthSquared(c.lookAt - c.position) == 0)
            Fail(path + ".look_at", "must differ from position");
        if (LengthSquared(Cross(Normalize(c.lookAt - c.position), c.up)) < 1e-12)
            Fail(path + ".up", "must not be parallel to the view direction");
        return c;
    }

    std::string baseDir;
    SceneLoadOptions options;
    std::vector<std::pair<std::string, int>> materialNames;
};

std::string LineColumn(const std::string &text, size_t byte) {
    size_t line = 1, column = 1;
    for (size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

json ToJson(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }
json ToJson(const Spectrum &s) { return json::array({s.r, s.g, s.b}); }

}  // namespace

SceneDescription ParseSceneDescription(const std::string &text, const std::string &baseDir,
                                       const SceneLoadOptions &options) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error &e) {
        std::string msg = e.what();
        auto pos = msg.find("parse error");
        throw SceneError("parse error at " + LineColumn(text, e.byte) + ": " +
                         (pos == std::string::npos ? msg : msg.substr(pos)));
    }
    return Parser(baseDir, options).Parse(root);
}

SceneDescription LoadSceneDescription(const std::string &path, const SceneLoadOptions &options) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw SceneError("cannot open scene file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string base = std::filesystem::path(path).parent_path().string();
    return ParseSceneDescription(ss.str(), base.empty() ? "." : base, options);
}

Scene LoadScene(const std::string &path, const SceneLoadOptions &options) {
    SceneDescription desc = LoadSceneDescription(path, options);
    try {
        return Scene(std::move(desc));
    } catch (const std::invalid_argument &e) {
        throw SceneError(std::string("validation error: ") + e.what());
    }
}

std::string SerializeScene(const SceneDescription &desc, int indent) {
    json root;
    root["format"] = kFormatName;
    root["version"] = kFormatVersion;
    json mats = json::array();
    for (const Bsdf &b : desc.materials) {
        json m;
        if (!b.name.empty())
            m["name"] = b.name;
        m["type"] = b.kind == BsdfKind::Lambertian ? "lambertian"
                    : b.kind == BsdfKind::Glossy   ? "glossy"
                                                   : "mirror";
        m["albedo"] = ToJson(b.albedo);
        if (b.kind == BsdfKind::Glossy)
            m["roughness"] = b.roughness;
        mats.push_back(m);
    }
    root["materials"] = mats;
    json meshes = json::array();
    for (const TriangleMesh &mesh : desc.meshes) {
        json m;
        m["type"] = "triangles";
        m["material"] = mesh.material;
        json vs = json::array(), is = json::array();
        for (const Vec3 &v : mesh.vertices)
            vs.push_back(ToJson(v));
        for (const auto &t : mesh.indices)
            is.push_back(json::array({t[0], t[1], t[2]}));
        m["vertices"] = vs;
        m["indices"] = is;
        meshes.push_back(m);
    }
    for (const Sphere &s : desc.spheres)
        meshes.push_back({{"type", "sphere"}, {"material", s.material}, {"center", ToJson(s.center)},
                          {"radius", s.radius}});
    root["meshes"] = meshes;
    json lights = json::array();
    for (const Light &l : desc.lights) {
        json j;
        switch (l.kind) {
        case LightKind::Point:
            j["type"] = "point";
            j["position"] = ToJson(l.vertices[0]);
            break;
        case LightKind::AreaTriangle:
            j["type"] = "area-triangle";
            j["vertices"] = json::array({ToJson(l.vertices[0]), ToJson(l.vertices[1]), ToJson(l.vertices[2])});
            j["two_sided"] = l.twoSided;
            break;
        case LightKind::AreaQuad:
            j["type"] = "area-quad";
            j["corner"] = ToJson(l.vertices[0]);
            j["edge_u"] = ToJson(l.vertices[1] - l.vertices[0]);
            j["edge_v"] = ToJson(l.vertices[3] - l.vertices[0]);
            j["two_sided"] = l.twoSided;
            break;
        }
        j["emission"] = ToJson(l.emission);
        lights.push_back(j);
    }
    root["lights"] = lights;
    root["camera"] = {{"position", ToJson(desc.camera.position)},
                      {"look_at", ToJson(desc.camera.lookAt)},
                      {"up", ToJson(desc.camera.up)},
                      {"fov", desc.camera.fovDegrees}};
    return root.dump(indent);
}

void SaveScene(const SceneDescription &desc, const std::string &path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw SceneError("cannot write scene file '" + path + "'");
        out << SerializeScene(desc) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

uint64_t SceneHash(const SceneDescription &desc) {
    std::string s = SerializeScene(desc, -1);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string SceneHashHex(const SceneDescription &desc) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(SceneHash(desc)));
    return buf;
}

}  // namespace lumisel
