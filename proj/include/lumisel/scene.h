// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/geometry.h>
#include <lumisel/spectrum.h>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lumisel {

enum class BsdfKind { Lambertian, Glossy, Mirror };

// Reflection-only materials. Glossy is a Blinn-Phong lobe with (e + 2) / (8 pi)
// normalization, which keeps directional-hemispherical reflectance below the albedo.
struct Bsdf {
    BsdfKind kind = BsdfKind::Lambertian;
    Spectrum albedo{0.8};
    double roughness = 1;
    std::string name;

    bool IsSpecular() const { return kind == BsdfKind::Mirror; }
    double Exponent() const { return 2 / Sqr(roughness) - 2; }

    // n is the shading normal oriented toward wo. Zero below the surface.
    Spectrum Eval(const Vec3 &n, const Vec3 &wo, const Vec3 &wi) const;
};

enum class LightKind { Point, AreaTriangle, AreaQuad };

struct LightSamplePoint {
    Vec3 point;
    double pdfArea = 0;
    Vec3 normal;
};

// Point lights store their position in vertices[0] and use emission as intensity.
// Quads are parallelograms v0 v1 v2 v3 with v0 + v2 == v1 + v3; emission is radiance.
struct Light {
    LightKind kind = LightKind::Point;
    Spectrum emission;
    std::array<Vec3, 4> vertices{};
    bool twoSided = false;

    static Light Point(const Vec3 &p, const Spectrum &intensity);
    static Light Triangle(const Vec3 &a, const Vec3 &b, const Vec3 &c, const Spectrum &radiance,
                          bool twoSided = false);
    static Light Quad(const Vec3 &corner, const Vec3 &edgeU, const Vec3 &edgeV,
                      const Spectrum &radiance, bool twoSided = false);

    bool IsArea() const { return kind != LightKind::Point; }
    double Area() const;
    Vec3 Normal() const;
    Vec3 Centroid() const;
    Bounds3 Bounds() const;
    // Total emitted power, luminance of the emission times the radiometric factor.
    double Power() const;

    // Uniform over the surface; pdfArea = 1 / Area(). Point lights return their
    // position with pdfArea = 1 (delta convention).
    LightSamplePoint SamplePoint(double u0, double u1) const;
};

struct Camera {
    Vec3 position{0, 0, 5};
    Vec3 lookAt{0, 0, 0};
    Vec3 up{0, 1, 0};
    double fovDegrees = 45;

    // Ray through the center of pixel (px, py); row 0 is the top of the image.
    Ray GenerateRay(double px, double py, int width, int height) const;
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> indices;
    int material = 0;
};

struct Sphere {
    Vec3 center;
    double radius = 1;
    int material = 0;
};

// Plain data accepted by Scene; produced by the loader and the procedural generator.
struct SceneDescription {
    std::vector<Bsdf> materials;
    std::vector<TriangleMesh> meshes;
    std::vector<Sphere> spheres;
    std::vector<Light> lights;
    Camera camera;
};

struct ShadingQuery {
    Vec3 position;
    Vec3 outDir;
    Vec3 normal;
    int bsdfId = 0;
};

struct SurfaceHit {
    double t = 0;
    Vec3 position;
    // Geometric normal, not oriented.
    Vec3 normal;
    int bsdfId = -1;
    int lightIndex = -1;
    bool IsEmitter() const { return lightIndex >= 0; }
};

// Flattened primitive: triangles reference their source and may be emitters.
struct Primitive {
    enum class Type : uint8_t { Triangle, Sphere } type = Type::Triangle;
    int material = -1;
    int lightIndex = -1;
    Vec3 p0, p1, p2;  // triangle vertices, or sphere center in p0 and radius in p1.x

    Bounds3 Bounds() const;
    // Nearest hit with t in (tMin, tMax).
    std::optional<SurfaceHit> Intersect(const Ray &ray, double tMin, double tMax) const;
};

class Bvh {
  public:
    Bvh() = default;
    explicit Bvh(std::span<const Primitive> prims);

    std::optional<SurfaceHit> Intersect(std::span<const Primitive> prims, const Ray &ray,
                                        double tMin, double tMax) const;
    bool IntersectP(std::span<const Primitive> prims, const Ray &ray, double tMin,
                    double tMax) const;
    size_t NodeCount() const { return nodes.size(); }

  private:
    struct Node {
        Bounds3 bounds;
        int32_t offset = 0;  // first primitive for leaves, second child for interiors
        int32_t count = 0;   // 0 for interior nodes
    };
    int Build(std::span<const Primitive> prims, int start, int end);

    std::vector<Node> nodes;
    std::vector<int32_t> order;
};

// Immutable after construction; all queries are const and thread-safe.
class Scene {
  public:
    explicit Scene(SceneDescription desc);

    std::span<const Light> Lights() const { return lights; }
    std::span<const Bsdf> Materials() const { return materials; }
    std::span<const Primitive> Primitives() const { return prims; }
    const Camera &GetCamera() const { return camera; }
    const SceneDescription &Description() const { return desc; }
    // Bounds of all geometry including emitters.
    const Bounds3 &WorldBounds() const { return bounds; }
    double RayEpsilon() const { return rayEpsilon; }

    std::optional<SurfaceHit> Intersect(const Ray &ray, double tMax = Infinity) const;
    std::optional<SurfaceHit> IntersectBruteForce(const Ray &ray,
                                                  double tMax = Infinity) const;

    // True iff the open segment between a and b, shortened by the ray epsilon at
    // both ends, is unobstructed. Symmetric in its arguments.
    bool Visible(const Vec3 &a, const Vec3 &b) const;
    bool VisibleBruteForce(const Vec3 &a, const Vec3 &b) const;

    LightSamplePoint SampleLightPoint(int light, double u0, double u1) const {
        return lights[light].SamplePoint(u0, u1);
    }

    // L_i * f_s * G * V for a sampled point on light y.
    Spectrum EvalF(const ShadingQuery &q, int light, const LightSamplePoint &ls) const;
    // Same without the visibility term.
    Spectrum EvalUnoccludedF(const ShadingQuery &q, int light, const LightSamplePoint &ls) const;

    // Orients the hit for shading as seen from direction wo.
    ShadingQuery MakeQuery(const SurfaceHit &hit, const Vec3 &wo) const;

  private:
    SceneDescription desc;
    std::vector<Light> lights;
    std::vector<Bsdf> materials;
    std::vector<Primitive> prims;
    Camera camera;
    Bvh bvh;
    Bounds3 bounds;
    double rayEpsilon = 1e-4;
};

}  // namespace lumisel
