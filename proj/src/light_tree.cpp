// SPDX-License-Identifier: Apache-2.0

#include <lumisel/light_tree.h>

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <optional>
#include <stdexcept>

namespace lumisel {

ImportanceMode ParseImportanceMode(const std::string &name) {
    if (name == "power")
        return ImportanceMode::Power;
    if (name == "geo")
        return ImportanceMode::Geometric;
    if (name == "geo-cos")
        return ImportanceMode::GeometricCosine;
    throw std::invalid_argument("unknown importance mode \"" + name +
                                "\" (expected power, geo or geo-cos)");
}

std::string ToString(ImportanceMode mode) {
    switch (mode) {
    case ImportanceMode::Power:
        return "power";
    case ImportanceMode::Geometric:
        return "geo";
    case ImportanceMode::GeometricCosine:
        return "geo-cos";
    }
    return "?";
}

///////////////////////////////////////////////////////////////////////////
// LightBounds

namespace {

struct DirectionCone {
    Vec3 w;
    double cosTheta = 1;

    static DirectionCone EntireSphere() { return {{0, 0, 1}, -1}; }
};

DirectionCone Union(const DirectionCone &a, const DirectionCone &b) {
    double theta_a = SafeACos(a.cosTheta), theta_b = SafeACos(b.cosTheta);
    double theta_d = AngleBetween(a.w, b.w);
    if (std::min(theta_d + theta_b, Pi) <= theta_a)
        return a;
    if (std::min(theta_d + theta_a, Pi) <= theta_b)
        return b;
    double theta_o = (theta_a + theta_d + theta_b) / 2;
    if (theta_o >= Pi)
        return DirectionCone::EntireSphere();
    double theta_r = theta_o - theta_a;
    Vec3 wr = Cross(a.w, b.w);
    if (LengthSquared(wr) == 0)
        return DirectionCone::EntireSphere();
    Vec3 w = Normalize(RotateAbout(a.w, Normalize(wr), theta_r));
    return {w, std::cos(theta_o)};
}

// cos(max(0, theta_a - theta_b))
double CosSubClamped(double sinTheta_a, double cosTheta_a, double sinTheta_b,
                     double cosTheta_b) {
    if (cosTheta_a > cosTheta_b)
        return 1;
    return cosTheta_a * cosTheta_b + sinTheta_a * sinTheta_b;
}

// sin(max(0, theta_a - theta_b))
double SinSubClamped(double sinTheta_a, double cosTheta_a, double sinTheta_b,
                     double cosTheta_b) {
    if (cosTheta_a > cosTheta_b)
        return 0;
    return sinTheta_a * cosTheta_b - cosTheta_a * sinTheta_b;
}

}  // namespace

LightBounds LightBounds::ForLight(const Light &light) {
    LightBounds lb;
    lb.bounds = light.Bounds();
    lb.phi = light.Power();
    if (light.IsArea()) {
        lb.w = light.Normal();
        lb.cosTheta_o = 1;
        lb.twoSided = light.twoSided;
    } else {
        lb.w = Vec3(0, 0, 1);
        lb.cosTheta_o = -1;
    }
    lb.cosTheta_e = std::cos(Pi / 2);
    return lb;
}

LightBounds Union(const LightBounds &a, const LightBounds &b) {
    LightBounds r;
    r.bounds = Union(a.bounds, b.bounds);
    r.phi = a.phi + b.phi;
    // Orientation of zero-power members does not matter.
    if (a.phi == 0 && b.phi > 0) {
        r.w = b.w;
        r.cosTheta_o = b.cosTheta_o;
        r.cosTheta_e = b.cosTheta_e;
        r.twoSided = b.twoSided;
        return r;
    }
    if (b.phi == 0 && a.phi > 0) {
        r.w = a.w;
        r.cosTheta_o = a.cosTheta_o;
        r.cosTheta_e = a.cosTheta_e;
        r.twoSided = a.twoSided;
        return r;
    }
    DirectionCone cone = Union(DirectionCone{a.w, a.cosTheta_o}, DirectionCone{b.w, b.cosTheta_o});
    r.w = cone.w;
    r.cosTheta_o = cone.cosTheta;
    r.cosTheta_e = std::min(a.cosTheta_e, b.cosTheta_e);
    r.twoSided = a.twoSided || b.twoSided;
    return r;
}

double BoundSubtendedCosine(const Bounds3 &b, const Vec3 &p) {
    if (b.Inside(p))
        return -1;
    Vec3 center;
    double radius;
    b.BoundingSphere(&center, &radius);
    double dist2 = DistanceSquared(p, center);
    if (dist2 < Sqr(radius))
        return -1;
    double sin2ThetaMax = Sqr(radius) / dist2;
    return SafeSqrt(1 - sin2ThetaMax);
}

double LightBounds::Importance(const Vec3 &p, const Vec3 &n, ImportanceMode mode) const {
    if (phi <= 0)
        return 0;
    if (mode == ImportanceMode::Power)
        return phi;

    // Distance to the bound center, clamped to half the diagonal so the bound stays
    // finite for receivers inside the node.
    Vec3 pc = Centroid();
    double dist = std::max(Distance(p, pc), Length(bounds.Diagonal()) / 2);
    double d2 = std::max(Sqr(dist), std::numeric_limits<double>::min());

    Vec3 toP = p - pc;
    Vec3 wi = LengthSquared(toP) > 0 ? Normalize(toP) : w;
    double cosTheta_w = Dot(w, wi);
    if (twoSided)
        cosTheta_w = std::abs(cosTheta_w);
    double sinTheta_w = SafeSqrt(1 - Sqr(cosTheta_w));

    double cosTheta_b = BoundSubtendedCosine(bounds, p);
    double sinTheta_b = SafeSqrt(1 - Sqr(cosTheta_b));

    double sinTheta_o = SafeSqrt(1 - Sqr(cosTheta_o));
    double cosTheta_x = CosSubClamped(sinTheta_w, cosTheta_w, sinTheta_o, cosTheta_o);
    double sinTheta_x = SinSubClamped(sinTheta_w, cosTheta_w, sinTheta_o, cosTheta_o);
    double cosThetap = CosSubClamped(sinTheta_x, cosTheta_x, sinTheta_b, cosTheta_b);
    if (cosThetap <= cosTheta_e)
        return 0;

    double importance = phi * cosThetap / d2;

    if (mode == ImportanceMode::GeometricCosine && LengthSquared(n) > 0) {
        // One-sided: receivers only reflect light arriving above their normal.
        double cosTheta_i = Dot(-wi, n);
        double sinTheta_i = SafeSqrt(1 - Sqr(cosTheta_i));
        double cosThetap_i = CosSubClamped(sinTheta_i, cosTheta_i, sinTheta_b, cosTheta_b);
        importance *= std::max<double>(0, cosThetap_i);
    }
    return std::max<double>(importance, 0);
}

///////////////////////////////////////////////////////////////////////////
// Construction

namespace {

constexpr int kBuckets = 12;

// Surface area orientation heuristic for one side of a split.
double EvaluateCost(const LightBounds &b, const Bounds3 &bounds, int dim) {
    double theta_o = SafeACos(b.cosTheta_o), theta_e = SafeACos(b.cosTheta_e);
    double theta_w = std::min(theta_o + theta_e, Pi);
    double sinTheta_o = SafeSqrt(1 - Sqr(b.cosTheta_o));
    double M_omega = 2 * Pi * (1 - b.cosTheta_o) +
                     Pi / 2 *
                         (2 * theta_w * sinTheta_o - std::cos(theta_o - 2 * theta_w) -
                          2 * theta_o * sinTheta_o + b.cosTheta_o);
    Vec3 diag = bounds.Diagonal();
    double Kr = MaxComponent(diag) / diag[dim];
    return b.phi * M_omega * Kr * b.bounds.SurfaceArea();
}

int BucketOf(const Bounds3 &centroidBounds, const Vec3 &c, int dim) {
    int b = int(kBuckets * centroidBounds.Offset(c)[dim]);
    return std::clamp(b, 0, kBuckets - 1);
}

}  // namespace

LightTree LightTree::Build(std::span<const Light> lights, ImportanceMode mode) {
    if (lights.empty())
        throw std::invalid_argument("light tree needs at least one light");
    LightTree tree;
    tree.mode = mode;
    tree.leafOfLight.assign(lights.size(), -1);
    std::vector<std::pair<int, LightBounds>> items;
    items.reserve(lights.size());
    for (size_t i = 0; i < lights.size(); ++i)
        items.emplace_back(int(i), LightBounds::ForLight(lights[i]));
    tree.nodes.reserve(2 * lights.size());
    tree.BuildRecursive(items, 0, int(items.size()), 0, -1);
    tree.Finalize();
    return tree;
}

int LightTree::BuildRecursive(std::vector<std::pair<int, LightBounds>> &items, int start,
                              int end, int depth, int parent) {
    int nodeIndex = int(nodes.size());
    nodes.emplace_back();
    nodes[nodeIndex].parent = parent;
    nodes[nodeIndex].depth = depth;

    if (end - start == 1) {
        nodes[nodeIndex].lightIndex = items[start].first;
        nodes[nodeIndex].lightBounds = items[start].second;
        leafOfLight[items[start].first] = nodeIndex;
        return nodeIndex;
    }

    Bounds3 bounds, centroidBounds;
    for (int i = start; i < end; ++i) {
        bounds = Union(bounds, items[i].second.bounds);
        centroidBounds = Union(centroidBounds, items[i].second.Centroid());
    }

    double minCost = Infinity;
    int bestBucket = -1, bestDim = -1;
    for (int dim = 0; dim < 3; ++dim) {
        if (centroidBounds.pMax[dim] == centroidBounds.pMin[dim])
            continue;
        std::array<std::optional<LightBounds>, kBuckets> buckets;
        for (int i = start; i < end; ++i) {
            int b = BucketOf(centroidBounds, items[i].second.Centroid(), dim);
            buckets[b] = buckets[b] ? Union(*buckets[b], items[i].second) : items[i].second;
        }
        for (int split = 0; split < kBuckets - 1; ++split) {
            std::optional<LightBounds> b0, b1;
            for (int j = 0; j <= split; ++j)
                if (buckets[j])
                    b0 = b0 ? Union(*b0, *buckets[j]) : *buckets[j];
            for (int j = split + 1; j < kBuckets; ++j)
                if (buckets[j])
                    b1 = b1 ? Union(*b1, *buckets[j]) : *buckets[j];
            if (!b0 || !b1)
                continue;
            double cost = EvaluateCost(*b0, bounds, dim) + EvaluateCost(*b1, bounds, dim);
            if (cost < minCost) {
                minCost = cost;
                bestBucket = split;
                bestDim = dim;
            }
        }
    }

    int mid;
    if (bestDim >= 0) {
        auto pmid = std::stable_partition(
            items.begin() + start, items.begin() + end, [&](const auto &item) {
                return BucketOf(centroidBounds, item.second.Centroid(), bestDim) <= bestBucket;
            });
        mid = int(pmid - items.begin());
    } else {
        // Coincident centroids: split the list in half along a stable order.
        mid = (start + end) / 2;
    }
    if (mid == start || mid == end)
        mid = (start + end) / 2;

    int c0 = BuildRecursive(items, start, mid, depth + 1, nodeIndex);
    int c1 = BuildRecursive(items, mid, end, depth + 1, nodeIndex);
    nodes[nodeIndex].children = {c0, c1};
    nodes[nodeIndex].lightBounds = Union(nodes[c0].lightBounds, nodes[c1].lightBounds);
    return nodeIndex;
}

void LightTree::Finalize() {
    height = 0;
    for (const LightTreeNode &n : nodes)
        height = std::max(height, n.depth);
}

LightTree LightTree::FromTopology(std::span<const Light> lights,
                                  std::span<const LightTreeNodeSpec> specs, int root,
                                  ImportanceMode mode) {
    LightTree tree;
    tree.mode = mode;
    tree.leafOfLight.assign(lights.size(), -1);
    std::vector<int> visits(specs.size(), 0);

    // Depth-first copy so node order matches Build's layout.
    struct Frame {
        int spec, parent, depth, slot;
    };
    std::vector<Frame> stack{{root, -1, 0, -1}};
    while (!stack.empty()) {
        Frame f = stack.back();
        stack.pop_back();
        if (f.spec < 0 || f.spec >= int(specs.size()) || visits[f.spec]++ > 0)
            throw std::invalid_argument("invalid or repeated node in light tree topology");
        const LightTreeNodeSpec &s = specs[f.spec];
        int idx = int(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes[idx].parent = f.parent;
        tree.nodes[idx].depth = f.depth;
        if (f.parent >= 0)
            tree.nodes[f.parent].children[f.slot] = idx;
        bool leaf = s.children[0] < 0 && s.children[1] < 0;
        if (leaf) {
            if (s.light < 0 || s.light >= int(lights.size()) || tree.leafOfLight[s.light] >= 0)
                throw std::invalid_argument("leaf must reference an unused light");
            tree.nodes[idx].lightIndex = s.light;
            tree.leafOfLight[s.light] = idx;
        } else {
            if (s.children[0] < 0 || s.children[1] < 0 || s.light >= 0)
                throw std::invalid_argument("interior nodes need exactly two children");
            stack.push_back({s.children[1], idx, f.depth + 1, 1});
            stack.push_back({s.children[0], idx, f.depth + 1, 0});
        }
    }
    for (int leaf : tree.leafOfLight)
        if (leaf < 0)
            throw std::invalid_argument("topology does not reference every light");
    // Bottom-up aggregation: children always have larger indices than parents.
    for (int i = int(tree.nodes.size()) - 1; i >= 0; --i) {
        LightTreeNode &n = tree.nodes[i];
        if (n.IsLeaf())
            n.lightBounds = LightBounds::ForLight(lights[n.lightIndex]);
        else
            n.lightBounds = Union(tree.nodes[n.children[0]].lightBounds,
                                  tree.nodes[n.children[1]].lightBounds);
    }
    tree.Finalize();
    return tree;
}

std::string LightTree::ToJson(int indent) const {
    nlohmann::json nodesJson = nlohmann::json::array();
    for (size_t i = 0; i < nodes.size(); ++i) {
        const LightTreeNode &n = nodes[i];
        const LightBounds &lb = n.lightBounds;
        nlohmann::json j;
        j["index"] = i;
        j["depth"] = n.depth;
        j["parent"] = n.parent;
        j["bounds"] = {{"min", {lb.bounds.pMin.x, lb.bounds.pMin.y, lb.bounds.pMin.z}},
                       {"max", {lb.bounds.pMax.x, lb.bounds.pMax.y, lb.bounds.pMax.z}}};
        j["power"] = lb.phi;
        j["cone"] = {{"axis", {lb.w.x, lb.w.y, lb.w.z}},
                     {"cos_theta_o", lb.cosTheta_o},
                     {"cos_theta_e", lb.cosTheta_e},
                     {"two_sided", lb.twoSided}};
        if (n.IsLeaf())
            j["light"] = n.lightIndex;
        else
            j["children"] = {n.children[0], n.children[1]};
        nodesJson.push_back(std::move(j));
    }
    nlohmann::json root = {{"num_lights", NumLights()},
                           {"height", height},
                           {"importance", ToString(mode)},
                           {"nodes", std::move(nodesJson)}};
    return root.dump(indent);
}

///////////////////////////////////////////////////////////////////////////
// Cut and traversal

ClusterCut SelectCut(const LightTree &tree, int level) {
    if (level < 0)
        throw std::invalid_argument("cluster level must be >= 0");
    ClusterCut cut;
    cut.level = level;
    cut.clusterOfLight.assign(tree.NumLights(), -1);
    if (tree.Nodes().empty())
        return cut;
    std::vector<int> stack{0};
    while (!stack.empty()) {
        int idx = stack.back();
        stack.pop_back();
        const LightTreeNode &n = tree.Node(idx);
        if (n.depth == level || n.IsLeaf()) {
            int c = int(cut.nodes.size());
            cut.nodes.push_back(idx);
            // Tag every light below this cluster.
            std::vector<int> sub{idx};
            while (!sub.empty()) {
                int s = sub.back();
                sub.pop_back();
                const LightTreeNode &sn = tree.Node(s);
                if (sn.IsLeaf())
                    cut.clusterOfLight[sn.lightIndex] = c;
                else {
                    sub.push_back(sn.children[1]);
                    sub.push_back(sn.children[0]);
                }
            }
        } else {
            stack.push_back(n.children[1]);
            stack.push_back(n.children[0]);
        }
    }
    return cut;
}

void ApplyImportanceFloor(std::span<double> values) {
    double maxValue = 0;
    bool finite = true;
    for (double v : values) {
        finite = finite && std::isfinite(v);
        maxValue = std::max(maxValue, v);
    }
    if (!finite || !(maxValue > 0)) {
        std::fill(values.begin(), values.end(), 1.0);
        return;
    }
    double floorValue = kImportanceFloor * maxValue;
    for (double &v : values)
        v = std::max(v, floorValue);
}

std::array<double, 2> LightTree::ChildProbabilities(int node, const ShadingQuery &q) const {
    const LightTreeNode &n = nodes[node];
    std::array<double, 2> imp{NodeImportance(n.children[0], q), NodeImportance(n.children[1], q)};
    ApplyImportanceFloor(imp);
    double sum = imp[0] + imp[1];
    return {imp[0] / sum, imp[1] / sum};
}

void BaselineWeights(const LightTree &tree, const ClusterCut &cut, const ShadingQuery &q,
                     std::span<double> w) {
    for (size_t c = 0; c < cut.nodes.size(); ++c)
        w[c] = tree.NodeImportance(cut.nodes[c], q);
    ApplyImportanceFloor(w.first(cut.nodes.size()));
}

std::vector<double> BaselineWeights(const LightTree &tree, const ClusterCut &cut,
                                    const ShadingQuery &q) {
    std::vector<double> w(cut.Size());
    BaselineWeights(tree, cut, q, w);
    return w;
}

ClusterSample SampleInCluster(const LightTree &tree, const ClusterCut &cut, int c,
                              const ShadingQuery &q, double u) {
    constexpr double kOneMinusEpsilon = 0x1.fffffffffffffp-1;
    int node = cut.nodes[c];
    double pmf = 1;
    while (!tree.Node(node).IsLeaf()) {
        std::array<double, 2> p = tree.ChildProbabilities(node, q);
        int child = u < p[0] ? 0 : 1;
        u = child == 0 ? u / p[0] : (u - p[0]) / p[1];
        u = std::clamp(u, 0.0, kOneMinusEpsilon);
        pmf *= p[child];
        node = tree.Node(node).children[child];
    }
    return {c, tree.Node(node).lightIndex, pmf};
}

double PmfInClusterOf(const LightTree &tree, const ClusterCut &cut, int c, int light,
                      const ShadingQuery &q) {
    if (c < 0 || c >= int(cut.Size()) || light < 0 || light >= int(tree.NumLights()))
        throw std::invalid_argument("cluster or light index out of range");
    int target = cut.nodes[c];
    std::vector<int> path;
    for (int n = tree.LeafOf(light); n != target; n = tree.Node(n).parent) {
        if (n < 0)
            throw std::invalid_argument("light " + std::to_string(light) +
                                        " is not in cluster " + std::to_string(c));
        path.push_back(n);
    }
    // Multiply top-down in the same order as SampleInCluster.
    double pmf = 1;
    int node = target;
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
        std::array<double, 2> p = tree.ChildProbabilities(node, q);
        pmf *= tree.Node(node).children[0] == *it ? p[0] : p[1];
        node = *it;
    }
    return pmf;
}

}  // namespace lumisel
