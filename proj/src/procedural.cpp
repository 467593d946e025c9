// SPDX-License-Identifier: Apache-2.0

#include <lumisel/procedural.h>
#include <lumisel/rng.h>

#include <cmath>
#include <stdexcept>

namespace lumisel {

namespace {

enum Material { kFloor = 0, kWall = 1, kTray = 2, kBackWall = 3 };

void AddQuad(SceneDescription &desc, int material, const Vec3 &corner, const Vec3 &u, const Vec3 &v) {
    TriangleMesh mesh;
    mesh.material = material;
    mesh.vertices = {corner, corner + u, corner + u + v, corner + v};
    mesh.indices = {{0, 1, 2}, {0, 2, 3}};
    desc.meshes.push_back(std::move(mesh));
}

// Opaque open box around [x0,x1] x [z0,z1] from y0 up to y1.
void AddTray(SceneDescription &desc, double x0, double x1, double z0, double z1, double y0, double y1) {
    double w = x1 - x0, d = z1 - z0, h = y1 - y0;
    AddQuad(desc, kTray, {x0, y0, z0}, {w, 0, 0}, {0, 0, d});
    AddQuad(desc, kTray, {x0, y0, z0}, {w, 0, 0}, {0, h, 0});
    AddQuad(desc, kTray, {x0, y0, z1}, {w, 0, 0}, {0, h, 0});
    AddQuad(desc, kTray, {x0, y0, z0}, {0, 0, d}, {0, h, 0});
    AddQuad(desc, kTray, {x1, y0, z0}, {0, 0, d}, {0, h, 0});
}

}  // namespace

ProceduralSpec OcclusionStressSpec(uint64_t seed) {
    ProceduralSpec s;
    s.seed = seed;
    return s;
}

ProceduralSpec OccludedWallSpec(uint64_t seed) {
    ProceduralSpec s;
    s.lightsX = 4;
    s.lightsZ = 4;
    s.lightSpanX = 2;
    s.lightSpanZ = 2;
    s.intensity = 0.5;
    s.occludeHalf = false;
    s.dominantScale = 1;
    s.walls = 0;
    s.centralWallHeight = 0.8;
    s.floorSize = 4;
    s.seed = seed;
    s.camera = Camera{{1.2, 1.0, 2.5}, {0, 0.2, 0}, {0, 1, 0}, 50};
    return s;
}

ProceduralSpec PresetSpec(const std::string &name, uint64_t seed) {
    if (name == "stress")
        return OcclusionStressSpec(seed);
    if (name == "wall")
        return OccludedWallSpec(seed);
    throw std::invalid_argument("unknown scene preset '" + name + "'");
}

SceneDescription GenerateProceduralScene(const ProceduralSpec &spec) {
    if (spec.lightsX < 1 || spec.lightsZ < 1 || spec.walls < 0)
        throw std::invalid_argument("procedural scene needs at least one light");
    SceneDescription desc;
    desc.materials = {
        Bsdf{BsdfKind::Lambertian, Spectrum(0.7), 1, "floor"},
        Bsdf{BsdfKind::Glossy, Spectrum(0.6), 0.3, "wall"},
        Bsdf{BsdfKind::Lambertian, Spectrum(0.5), 1, "tray"},
        Bsdf{BsdfKind::Lambertian, Spectrum(0.6), 1, "back"},
    };
    desc.camera = spec.camera;
    Rng rng(spec.seed, 0x70726f63ULL);

    double f = spec.floorSize / 2;
    AddQuad(desc, kFloor, {-f, 0, f}, {2 * f, 0, 0}, {0, 0, -2 * f});
    // Kept below the tray so the occluded lights cannot reach it.
    double backHeight = std::min(1.2, spec.lightHeight - 0.1);
    AddQuad(desc, kBackWall, {-f, 0, -f}, {2 * f, 0, 0}, {0, backHeight, 0});

    for (int i = 0; i < spec.walls; ++i) {
        Vec3 c{(2 * rng.Uniform() - 1) * 0.8 * f, 0, (2 * rng.Uniform() - 1) * 0.8 * f};
        double angle = 2 * Pi * rng.Uniform();
        double length = 0.5 + rng.Uniform();
        double height = 0.2 + 0.6 * rng.Uniform();
        Vec3 dir{std::cos(angle), 0, std::sin(angle)};
        AddQuad(desc, kWall, c - dir * (length / 2), dir * length, {0, height, 0});
    }
    if (spec.centralWallHeight > 0)
        AddQuad(desc, kWall, {0, 0, f}, {0, 0, -2 * f}, {0, spec.centralWallHeight, 0});

    double x0 = -spec.lightSpanX / 2, z0 = -spec.lightSpanZ / 2;
    double dx = spec.lightSpanX / spec.lightsX, dz = spec.lightSpanZ / spec.lightsZ;
    int dominant = -1;
    double bestDist = Infinity;
    for (int iz = 0; iz < spec.lightsZ; ++iz)
        for (int ix = 0; ix < spec.lightsX; ++ix) {
            Vec3 p{x0 + (ix + 0.5) * dx, spec.lightHeight, z0 + (iz + 0.5) * dz};
            double scale = 1 + spec.intensityJitter * (2 * rng.Uniform() - 1);
            bool occluded = spec.occludeHalf && p.x < 0;
            if (occluded)
                scale *= spec.occludedScale;
            double d = Distance(p, Vec3{spec.lightSpanX / 4, spec.lightHeight, 0});
            if (!occluded && d < bestDist) {
                bestDist = d;
                dominant = int(desc.lights.size());
            }
            desc.lights.push_back(Light::Point(p, Spectrum(spec.intensity * scale)));
        }
    if (dominant >= 0 && spec.dominantScale != 1)
        desc.lights[dominant].emission = desc.lights[dominant].emission * spec.dominantScale;

    if (spec.occludeHalf)
        AddTray(desc, x0 - 0.1, 0, z0 - 0.1, -z0 + 0.1, spec.lightHeight - 0.05, spec.lightHeight + 0.1);
    return desc;
}

}  // namespace lumisel
