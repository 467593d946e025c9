// SPDX-License-Identifier: Apache-2.0

#include <lumisel/scene.h>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace lumisel {

std::string ToString(const Vec3 &v) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "[ %g %g %g ]", v.x, v.y, v.z);
    return buf;
}

///////////////////////////////////////////////////////////////////////////
// Bsdf

Spectrum Bsdf::Eval(const Vec3 &n, const Vec3 &wo, const Vec3 &wi) const {
    Float cosO = Dot(n, wo), cosI = Dot(n, wi);
    if (cosO <= 0 || cosI <= 0)
        return {};
    switch (kind) {
    case BsdfKind::Lambertian:
        return albedo * InvPi;
    case BsdfKind::Glossy: {
        Vec3 h = Normalize(wo + wi);
        Float e = Exponent();
        Float cosH = std::max<Float>(0, Dot(n, h));
        return albedo * ((e + 2) / (8 * Pi) * std::pow(cosH, e));
    }
    case BsdfKind::Mirror:
        return {};
    }
    return {};
}

///////////////////////////////////////////////////////////////////////////
// Light

Light Light::Point(const Vec3 &p, const Spectrum &intensity) {
    Light l;
    l.kind = LightKind::Point;
    l.emission = intensity;
    l.vertices = {p, p, p, p};
    return l;
}

Light Light::Triangle(const Vec3 &a, const Vec3 &b, const Vec3 &c, const Spectrum &radiance,
                      bool twoSided) {
    Light l;
    l.kind = LightKind::AreaTriangle;
    l.emission = radiance;
    l.vertices = {a, b, c, c};
    l.twoSided = twoSided;
    return l;
}

Light Light::Quad(const Vec3 &corner, const Vec3 &edgeU, const Vec3 &edgeV,
                  const Spectrum &radiance, bool twoSided) {
    Light l;
    l.kind = LightKind::AreaQuad;
    l.emission = radiance;
    l.vertices = {corner, corner + edgeU, corner + edgeU + edgeV, corner + edgeV};
    l.twoSided = twoSided;
    return l;
}

double Light::Area() const {
    const auto &v = vertices;
    switch (kind) {
    case LightKind::Point:
        return 0;
    case LightKind::AreaTriangle:
        return 0.5 * Length(Cross(v[1] - v[0], v[2] - v[0]));
    case LightKind::AreaQuad:
        return Length(Cross(v[1] - v[0], v[3] - v[0]));
    }
    return 0;
}

Vec3 Light::Normal() const {
    const auto &v = vertices;
    if (kind == LightKind::Point)
        return {0, 0, 1};
    Vec3 e2 = kind == LightKind::AreaTriangle ? v[2] - v[0] : v[3] - v[0];
    return Normalize(Cross(v[1] - v[0], e2));
}

Vec3 Light::Centroid() const {
    const auto &v = vertices;
    switch (kind) {
    case LightKind::Point:
        return v[0];
    case LightKind::AreaTriangle:
        return (v[0] + v[1] + v[2]) / 3;
    case LightKind::AreaQuad:
        return (v[0] + v[2]) * 0.5;
    }
    return v[0];
}

Bounds3 Light::Bounds() const {
    Bounds3 b(vertices[0]);
    int n = kind == LightKind::Point ? 1 : (kind == LightKind::AreaTriangle ? 3 : 4);
    for (int i = 1; i < n; ++i)
        b = Union(b, vertices[i]);
    return b;
}

double Light::Power() const {
    double lum = Luminance(emission);
    if (kind == LightKind::Point)
        return 4 * Pi * lum;
    return Pi * lum * Area() * (twoSided ? 2 : 1);
}

LightSamplePoint Light::SamplePoint(double u0, double u1) const {
    const auto &v = vertices;
    switch (kind) {
    case LightKind::Point:
        return {v[0], 1, {0, 0, 1}};
    case LightKind::AreaTriangle: {
        double su0 = std::sqrt(u0);
        double b0 = 1 - su0, b1 = u1 * su0;
        Vec3 p = v[0] * b0 + v[1] * b1 + v[2] * (1 - b0 - b1);
        return {p, 1 / Area(), Normal()};
    }
    case LightKind::AreaQuad: {
        Vec3 p = v[0] + (v[1] - v[0]) * u0 + (v[3] - v[0]) * u1;
        return {p, 1 / Area(), Normal()};
    }
    }
    return {};
}

///////////////////////////////////////////////////////////////////////////
// Camera

Ray Camera::GenerateRay(double px, double py, int width, int height) const {
    Vec3 forward = Normalize(lookAt - position);
    Vec3 right = Normalize(Cross(forward, up));
    Vec3 trueUp = Cross(right, forward);
    double tanHalf = std::tan(fovDegrees * Pi / 360);
    double aspect = double(width) / height;
    double sx = (2 * (px + 0.5) / width - 1) * tanHalf * aspect;
    double sy = (1 - 2 * (py + 0.5) / height) * tanHalf;
    return {position, Normalize(forward + right * sx + trueUp * sy)};
}

///////////////////////////////////////////////////////////////////////////
// Primitive

Bounds3 Primitive::Bounds() const {
    if (type == Type::Sphere) {
        Vec3 r(p1.x, p1.x, p1.x);
        return {p0 - r, p0 + r};
    }
    return Union(Bounds3(p0, p1), p2);
}

std::optional<SurfaceHit> Primitive::Intersect(const Ray &ray, double tMin, double tMax) const {
    if (type == Type::Sphere) {
        double radius = p1.x;
        Vec3 oc = ray.o - p0;
        double b = Dot(oc, ray.d);
        // Subtracting the projection keeps the discriminant accurate for distant origins.
        Vec3 perp = oc - ray.d * b;
        double disc = Sqr(radius) - LengthSquared(perp);
        if (disc < 0)
            return {};
        // Roots of t^2 + 2bt + c, computed without cancellation.
        double sq = std::sqrt(disc);
        double c = LengthSquared(oc) - Sqr(radius);
        double q = b > 0 ? -b - sq : -b + sq;
        double t0 = q, t1 = q != 0 ? c / q : 0;
        if (t0 > t1)
            std::swap(t0, t1);
        double t = t0 > tMin ? t0 : t1;
        if (t <= tMin || t >= tMax)
            return {};
        SurfaceHit hit;
        hit.t = t;
        hit.position = ray(t);
        hit.normal = Normalize(hit.position - p0);
        hit.bsdfId = material;
        hit.lightIndex = lightIndex;
        return hit;
    }

    // Möller-Trumbore
    Vec3 e1 = p1 - p0, e2 = p2 - p0;
    Vec3 pv = Cross(ray.d, e2);
    double det = Dot(e1, pv);
    if (det == 0)
        return {};
    double invDet = 1 / det;
    Vec3 tv = ray.o - p0;
    double u = Dot(tv, pv) * invDet;
    if (u < 0 || u > 1)
        return {};
    Vec3 qv = Cross(tv, e1);
    double v = Dot(ray.d, qv) * invDet;
    if (v < 0 || u + v > 1)
        return {};
    double t = Dot(e2, qv) * invDet;
    if (t <= tMin || t >= tMax)
        return {};
    SurfaceHit hit;
    hit.t = t;
    hit.position = ray(t);
    hit.normal = Normalize(Cross(e1, e2));
    hit.bsdfId = material;
    hit.lightIndex = lightIndex;
    return hit;
}

///////////////////////////////////////////////////////////////////////////
// Bvh

namespace {
constexpr int kMaxPrimsInLeaf = 4;
}

Bvh::Bvh(std::span<const Primitive> prims) {
    order.resize(prims.size());
    std::iota(order.begin(), order.end(), 0);
    if (!prims.empty()) {
        nodes.reserve(2 * prims.size());
        Build(prims, 0, int(prims.size()));
    }
}

int Bvh::Build(std::span<const Primitive> prims, int start, int end) {
    int nodeIndex = int(nodes.size());
    nodes.emplace_back();
    Bounds3 bounds, centroidBounds;
    for (int i = start; i < end; ++i) {
        Bounds3 b = prims[order[i]].Bounds();
        bounds = Union(bounds, b);
        centroidBounds = Union(centroidBounds, b.Centroid());
    }
    nodes[nodeIndex].bounds = bounds;
    int dim = centroidBounds.MaxDimension();
    if (end - start <= kMaxPrimsInLeaf || centroidBounds.pMax[dim] == centroidBounds.pMin[dim]) {
        nodes[nodeIndex].offset = start;
        nodes[nodeIndex].count = end - start;
        return nodeIndex;
    }
    // Median split on the largest centroid extent.
    int mid = (start + end) / 2;
    std::nth_element(order.begin() + start, order.begin() + mid, order.begin() + end,
                     [&](int32_t a, int32_t b) {
                         double ca = prims[a].Bounds().Centroid()[dim];
                         double cb = prims[b].Bounds().Centroid()[dim];
                         return ca < cb || (ca == cb && a < b);
                     });
    Build(prims, start, mid);
    int second = Build(prims, mid, end);
    nodes[nodeIndex].offset = second;
    nodes[nodeIndex].count = 0;
    return nodeIndex;
}

std::optional<SurfaceHit> Bvh::Intersect(std::span<const Primitive> prims, const Ray &ray,
                                         double tMin, double tMax) const {
    std::optional<SurfaceHit> best;
    if (nodes.empty())
        return best;
    Vec3 invDir(1 / ray.d.x, 1 / ray.d.y, 1 / ray.d.z);
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node &node = nodes[stack[--sp]];
        if (!node.bounds.IntersectP(ray, invDir, tMin, tMax))
            continue;
        if (node.count > 0) {
            for (int i = 0; i < node.count; ++i) {
                if (auto hit = prims[order[node.offset + i]].Intersect(ray, tMin, tMax)) {
                    tMax = hit->t;
                    best = hit;
                }
            }
        } else {
            int first = int(&node - nodes.data()) + 1;
            stack[sp++] = node.offset;
            stack[sp++] = first;
        }
    }
    return best;
}

bool Bvh::IntersectP(std::span<const Primitive> prims, const Ray &ray, double tMin,
                     double tMax) const {
    if (nodes.empty())
        return false;
    Vec3 invDir(1 / ray.d.x, 1 / ray.d.y, 1 / ray.d.z);
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node &node = nodes[stack[--sp]];
        if (!node.bounds.IntersectP(ray, invDir, tMin, tMax))
            continue;
        if (node.count > 0) {
            for (int i = 0; i < node.count; ++i)
                if (prims[order[node.offset + i]].Intersect(ray, tMin, tMax))
                    return true;
        } else {
            stack[sp++] = node.offset;
            stack[sp++] = int(&node - nodes.data()) + 1;
        }
    }
    return false;
}

///////////////////////////////////////////////////////////////////////////
// Scene

namespace {

void ValidateLight(const Light &l, size_t index) {
    auto fail = [&](const std::string &what) {
        throw std::invalid_argument("light " + std::to_string(index) + ": " + what);
    };
    if (!l.emission.IsFinite() || !l.emission.IsNonNegative())
        fail("emission must be finite and non-negative");
    for (const Vec3 &v : l.vertices)
        if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
            fail("non-finite vertex");
    if (l.IsArea()) {
        double area = l.Area();
        if (!(area > 0) || !std::isfinite(area))
            fail("degenerate area light (zero area)");
        if (l.kind == LightKind::AreaQuad) {
            const auto &v = l.vertices;
            Vec3 gap = (v[0] + v[2]) - (v[1] + v[3]);
            Vec3 diag = v[2] - v[0];
            if (Length(gap) > 1e-6 * std::max<Float>(1, Length(diag)))
                fail("quad vertices must form a parallelogram");
            Vec3 n = Cross(v[1] - v[0], v[3] - v[0]);
            if (std::abs(Dot(Normalize(n), v[2] - v[0])) > 1e-6 * std::max<Float>(1, Length(diag)))
                fail("quad vertices must be coplanar");
        }
    }
}

}  // namespace

Scene::Scene(SceneDescription d) : desc(std::move(d)) {
    lights = desc.lights;
    materials = desc.materials;
    camera = desc.camera;
    if (materials.empty())
        materials.push_back(Bsdf{});
    for (size_t i = 0; i < materials.size(); ++i) {
        const Bsdf &m = materials[i];
        if (!m.albedo.IsFinite() || !m.albedo.IsNonNegative() || m.albedo.MaxComponent() > 1)
            throw std::invalid_argument("material " + std::to_string(i) +
                                        ": albedo must lie in [0,1]");
        if (m.kind == BsdfKind::Glossy && !(m.roughness > 0 && m.roughness <= 1))
            throw std::invalid_argument("material " + std::to_string(i) +
                                        ": roughness must lie in (0,1]");
    }
    for (size_t i = 0; i < lights.size(); ++i)
        ValidateLight(lights[i], i);

    auto checkMaterial = [&](int m, const std::string &what) {
        if (m < 0 || m >= int(materials.size()))
            throw std::invalid_argument(what + ": material index out of range");
    };
    for (size_t mi = 0; mi < desc.meshes.size(); ++mi) {
        const TriangleMesh &mesh = desc.meshes[mi];
        checkMaterial(mesh.material, "mesh " + std::to_string(mi));
        for (const auto &tri : mesh.indices) {
            for (uint32_t idx : tri)
                if (idx >= mesh.vertices.size())
                    throw std::invalid_argument("mesh " + std::to_string(mi) +
                                                ": vertex index out of range");
            Primitive p;
            p.type = Primitive::Type::Triangle;
            p.material = mesh.material;
            p.p0 = mesh.vertices[tri[0]];
            p.p1 = mesh.vertices[tri[1]];
            p.p2 = mesh.vertices[tri[2]];
            // Degenerate triangles never intersect; drop them.
            if (LengthSquared(Cross(p.p1 - p.p0, p.p2 - p.p0)) > 0)
                prims.push_back(p);
        }
    }
    for (size_t si = 0; si < desc.spheres.size(); ++si) {
        const Sphere &s = desc.spheres[si];
        checkMaterial(s.material, "sphere " + std::to_string(si));
        if (!(s.radius > 0))
            throw std::invalid_argument("sphere " + std::to_string(si) + ": radius must be > 0");
        Primitive p;
        p.type = Primitive::Type::Sphere;
        p.material = s.material;
        p.p0 = s.center;
        p.p1 = Vec3(s.radius, 0, 0);
        prims.push_back(p);
    }
    // Area emitters are part of the geometry so camera rays can detect them.
    for (size_t li = 0; li < lights.size(); ++li) {
        const Light &l = lights[li];
        if (!l.IsArea())
            continue;
        const auto &v = l.vertices;
        Primitive p;
        p.type = Primitive::Type::Triangle;
        p.lightIndex = int(li);
        p.p0 = v[0];
        p.p1 = v[1];
        p.p2 = v[2];
        prims.push_back(p);
        if (l.kind == LightKind::AreaQuad) {
            p.p1 = v[2];
            p.p2 = v[3];
            prims.push_back(p);
        }
    }

    for (const Primitive &p : prims)
        bounds = Union(bounds, p.Bounds());
    for (const Light &l : lights)
        bounds = Union(bounds, l.Bounds());
    if (bounds.IsEmpty())
        bounds = Bounds3(Vec3(-1, -1, -1), Vec3(1, 1, 1));
    double diag = Length(bounds.Diagonal());
    rayEpsilon = 1e-4 * (diag > 0 ? diag : 1);
    bvh = Bvh(prims);
}

std::optional<SurfaceHit> Scene::Intersect(const Ray &ray, double tMax) const {
    return bvh.Intersect(prims, ray, rayEpsilon, tMax);
}

std::optional<SurfaceHit> Scene::IntersectBruteForce(const Ray &ray, double tMax) const {
    std::optional<SurfaceHit> best;
    for (const Primitive &p : prims) {
        if (auto hit = p.Intersect(ray, rayEpsilon, tMax)) {
            tMax = hit->t;
            best = hit;
        }
    }
    return best;
}

namespace {

// Canonical endpoint order so the traced segment is identical for (a,b) and (b,a).
bool LexLess(const Vec3 &a, const Vec3 &b) {
    if (a.x != b.x)
        return a.x < b.x;
    if (a.y != b.y)
        return a.y < b.y;
    return a.z < b.z;
}

}  // namespace

bool Scene::Visible(const Vec3 &a, const Vec3 &b) const {
    const Vec3 &from = LexLess(a, b) ? a : b;
    const Vec3 &to = LexLess(a, b) ? b : a;
    Vec3 d = to - from;
    double dist = Length(d);
    if (dist <= 2 * rayEpsilon)
        return true;
    Ray ray{from, d / dist};
    return !bvh.IntersectP(prims, ray, rayEpsilon, dist - rayEpsilon);
}

bool Scene::VisibleBruteForce(const Vec3 &a, const Vec3 &b) const {
    const Vec3 &from = LexLess(a, b) ? a : b;
    const Vec3 &to = LexLess(a, b) ? b : a;
    Vec3 d = to - from;
    double dist = Length(d);
    if (dist <= 2 * rayEpsilon)
        return true;
    Ray ray{from, d / dist};
    for (const Primitive &p : prims)
        if (p.Intersect(ray, rayEpsilon, dist - rayEpsilon))
            return false;
    return true;
}

Spectrum Scene::EvalUnoccludedF(const ShadingQuery &q, int light,
                                const LightSamplePoint &ls) const {
    const Light &l = lights[light];
    Vec3 d = ls.point - q.position;
    double dist2 = LengthSquared(d);
    if (dist2 == 0)
        return {};
    Vec3 wi = d / std::sqrt(dist2);
    double cosX = Dot(q.normal, wi);
    if (cosX <= 0)
        return {};
    double g = cosX / dist2;
    if (l.IsArea()) {
        double cosL = Dot(ls.normal, -wi);
        if (l.twoSided)
            cosL = std::abs(cosL);
        if (cosL <= 0)
            return {};
        g *= cosL;
    }
    Spectrum f = materials[q.bsdfId].Eval(q.normal, q.outDir, wi);
    if (f.IsBlack())
        return {};
    return l.emission * f * g;
}

Spectrum Scene::EvalF(const ShadingQuery &q, int light, const LightSamplePoint &ls) const {
    Spectrum f = EvalUnoccludedF(q, light, ls);
    if (f.IsBlack() || !Visible(q.position, ls.point))
        return {};
    return f;
}

ShadingQuery Scene::MakeQuery(const SurfaceHit &hit, const Vec3 &wo) const {
    ShadingQuery q;
    q.position = hit.position;
    q.outDir = wo;
    q.normal = Dot(hit.normal, wo) < 0 ? -hit.normal : hit.normal;
    q.bsdfId = hit.bsdfId;
    return q;
}

}  // namespace lumisel
