// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/geometry.h>
#include <lumisel/scene.h>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace lumisel {

// Which terms of the node importance bound are evaluated.
//   power:   Phi only
//   geo:     Phi * cos(theta') / d^2 (orientation cone and distance)
//   geo-cos: geo times the clamped cosine to the receiver's shading normal
enum class ImportanceMode { Power, Geometric, GeometricCosine };

ImportanceMode ParseImportanceMode(const std::string &name);
std::string ToString(ImportanceMode mode);

// Relative positivity floor: every importance among siblings (or among the cut)
// is raised to at least this fraction of the largest one.
inline constexpr double kImportanceFloor = 1e-6;

// Spatial, power and orientation bound of a set of emitters.
struct LightBounds {
    Bounds3 bounds;
    double phi = 0;
    Vec3 w{0, 0, 1};
    double cosTheta_o = 1;
    double cosTheta_e = 1;
    bool twoSided = false;

    static LightBounds ForLight(const Light &light);

    Vec3 Centroid() const { return bounds.Centroid(); }
    // Raw (unfloored) importance of the bound for a receiver at p with normal n.
    // A zero normal disables the receiver cosine term.
    double Importance(const Vec3 &p, const Vec3 &n, ImportanceMode mode) const;
};

LightBounds Union(const LightBounds &a, const LightBounds &b);

// Cosine of the half-angle of the cone from p that contains the box;
// -1 when p is inside the box or its bounding sphere.
double BoundSubtendedCosine(const Bounds3 &b, const Vec3 &p);

struct LightTreeNode {
    LightBounds lightBounds;
    std::array<int, 2> children{-1, -1};
    int parent = -1;
    int lightIndex = -1;
    int depth = 0;

    bool IsLeaf() const { return children[0] < 0; }
};

// Construction spec for explicit topologies: either a leaf with a light index or
// an interior node with two child spec indices.
struct LightTreeNodeSpec {
    int light = -1;
    std::array<int, 2> children{-1, -1};
};

class LightTree {
  public:
    LightTree() = default;

    // SAOH construction over 12-bucket sweeps per axis. Deterministic for a
    // fixed light order.
    static LightTree Build(std::span<const Light> lights,
                           ImportanceMode mode = ImportanceMode::GeometricCosine);

    // Builds an explicit topology; specs[root] is the root. Bounds and power are
    // aggregated bottom-up. Throws std::invalid_argument if the topology does not
    // reference every light exactly once.
    static LightTree FromTopology(std::span<const Light> lights,
                                  std::span<const LightTreeNodeSpec> specs, int root,
                                  ImportanceMode mode = ImportanceMode::GeometricCosine);

    std::span<const LightTreeNode> Nodes() const { return nodes; }
    const LightTreeNode &Node(int i) const { return nodes[i]; }
    size_t NumLights() const { return leafOfLight.size(); }
    int LeafOf(int light) const { return leafOfLight[light]; }
    int Height() const { return height; }
    ImportanceMode Mode() const { return mode; }
    void SetMode(ImportanceMode m) { mode = m; }

    double NodeImportance(int node, const ShadingQuery &q) const {
        return nodes[node].lightBounds.Importance(q.position, q.normal, mode);
    }
    // Floored branch probabilities at an interior node; they sum to 1.
    std::array<double, 2> ChildProbabilities(int node, const ShadingQuery &q) const;

    // Structured dump of every node (bounds, power, cone, depth).
    std::string ToJson(int indent = 2) const;

  private:
    int BuildRecursive(std::vector<std::pair<int, LightBounds>> &items, int start, int end,
                       int depth, int parent);
    void Finalize();

    std::vector<LightTreeNode> nodes;
    std::vector<int> leafOfLight;
    int height = 0;
    ImportanceMode mode = ImportanceMode::GeometricCosine;
};

// Fixed global set of disjoint subtrees: every node at depth k plus every leaf
// shallower than k, in depth-first order.
struct ClusterCut {
    std::vector<int> nodes;
    int level = 0;
    std::vector<int> clusterOfLight;

    size_t Size() const { return nodes.size(); }
};

ClusterCut SelectCut(const LightTree &tree, int level);

// Applies the relative positivity floor in place. All-zero or non-finite input
// becomes uniform.
void ApplyImportanceFloor(std::span<double> values);

// w_c = floored importance of cut.nodes[c]; strictly positive, not normalized.
void BaselineWeights(const LightTree &tree, const ClusterCut &cut, const ShadingQuery &q,
                     std::span<double> w);
std::vector<double> BaselineWeights(const LightTree &tree, const ClusterCut &cut,
                                    const ShadingQuery &q);

struct ClusterSample {
    int cluster = 0;
    int light = -1;
    double pmfInCluster = 1;
};

// Stochastic descent from cut.nodes[c] to a leaf, remapping u at each branch.
ClusterSample SampleInCluster(const LightTree &tree, const ClusterCut &cut, int c,
                              const ShadingQuery &q, double u);

// p(y|c); throws std::invalid_argument if light y is not below cluster c.
double PmfInClusterOf(const LightTree &tree, const ClusterCut &cut, int c, int light,
                      const ShadingQuery &q);

}  // namespace lumisel
