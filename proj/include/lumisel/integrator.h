// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/light_tree.h>
#include <lumisel/neural.h>
#include <lumisel/rng.h>
#include <lumisel/scene.h>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lumisel {

enum class Strategy { Uniform, Power, TreeBaseline, NeuralDirect, NeuralResidual };

Strategy ParseStrategy(const std::string &name);
std::string ToString(Strategy s);
inline bool IsNeural(Strategy s) {
    return s == Strategy::NeuralDirect || s == Strategy::NeuralResidual;
}

struct PixelRect {
    int x = 0, y = 0, width = 0, height = 0;
};

struct RenderConfig {
    int width = 256;
    int height = 256;
    // Renders only this region; the output image has the crop's size.
    std::optional<PixelRect> crop;
    int spp = 128;
    Strategy strategy = Strategy::NeuralResidual;
    double trainRatio = 0.15;
    int clusterLevel = 6;
    double lr = 3e-2;
    uint64_t seed = 0;
    // With a budget, waves run until the first wave boundary past it (spp becomes a
    // cap) and training lasts for trainRatio of the budget.
    std::optional<double> timeBudget;
    ImportanceMode importance = ImportanceMode::GeometricCosine;
    bool weightClamp = true;
    bool discardTrainingWaves = false;
    InputMode inputMode = InputMode::Continuous;
    // 0 = LUMISEL_THREADS or hardware concurrency.
    int threads = 0;
    size_t batchSize = 16384;

    int TrainingWaves() const;
    PixelRect Region() const;
    // Throws std::invalid_argument describing the first invalid field.
    void Validate() const;
};

int ResolveThreadCount(int requested);

// First non-specular vertex seen through a pixel, with the mirror-chain throughput.
struct PrimaryVertex {
    ShadingQuery query;
    Spectrum throughput{1};
};

inline constexpr int kMaxSpecularDepth = 5;

// Camera ray through the pixel center, following up to kMaxSpecularDepth perfect
// mirror bounces. Empty on a miss, an emitter hit, or an over-long chain.
std::optional<PrimaryVertex> TracePrimary(const Scene &scene, int px, int py, int width,
                                          int height);

struct LightSelection {
    int light = 0;
    int cluster = 0;
    double pmfInCluster = 1;
    double pmfCluster = 1;

    double Pmf() const { return pmfInCluster * pmfCluster; }
};

// Strategy-specific discrete light selection. Neural strategies pick a cluster from a
// caller-supplied PMF over the cut and then descend the tree inside it.
class LightSelector {
  public:
    LightSelector(const Scene &scene, Strategy strategy, int clusterLevel,
                  ImportanceMode importance);

    Strategy GetStrategy() const { return strategy; }
    const LightTree &Tree() const { return tree; }
    const ClusterCut &Cut() const { return cut; }
    size_t NumClusters() const { return cut.Size(); }
    std::span<const double> PowerPmf() const { return powerPmf; }

    LightSelection Select(const ShadingQuery &q, std::span<const double> clusterPmf, double u0,
                          double u1) const;
    // Probability of selecting light given the cluster PMF (all strategies).
    double Pmf(const ShadingQuery &q, std::span<const double> clusterPmf, int light) const;

  private:
    Strategy strategy;
    LightTree tree;
    ClusterCut cut, rootCut;
    std::vector<double> powerPmf, powerCdf;
};

struct DirectSample {
    Spectrum estimate;
    Spectrum f;
    LightSelection selection;
    LightSamplePoint point;
};

// One-light next-event estimate F / (p(l|y) p(y)) at q, drawing four variates.
DirectSample EstimateDirect(const Scene &scene, const LightSelector &selector,
                            const ShadingQuery &q, std::span<const double> clusterPmf, Rng &rng);

// Sum of L_i f_s G V over all lights; exact when every light is a point light.
Spectrum ExactDirectPointLights(const Scene &scene, const ShadingQuery &q);
bool AllPointLights(const Scene &scene);

struct WaveStats {
    int wave = 0;
    int spp = 0;
    double seconds = 0;
    double mse = 0;
    double relMse = 0;
    bool hasMetrics = false;
    bool training = false;
};

struct RenderOutput {
    int width = 0, height = 0;
    std::vector<Spectrum> image;
    // Per-pixel mean of squared estimates, for standard errors.
    std::vector<Spectrum> secondMoment;
    int samplesPerPixel = 0;
    int waves = 0;
    int trainingWaves = 0;
    int trainingSteps = 0;
    size_t numClusters = 0;
    double treeBuildSeconds = 0;
    double renderSeconds = 0;
    std::vector<WaveStats> stats;
};

struct Metrics {
    double mse = 0;
    double relMse = 0;
};

inline constexpr double kRelMseEpsilon = 0.01;

// Averages over channels and pixels; relMSE divides by (reference + 0.01)^2.
Metrics ComputeMetrics(std::span<const Spectrum> image, std::span<const Spectrum> reference);

// Wave loop: render a 1-spp wave with the current snapshot, train on its records
// while within the training budget, publish the new snapshot. If reference is given
// (same size as the output) each wave records MSE and relMSE. finalState, if given,
// receives the trained network.
RenderOutput Render(const Scene &scene, const RenderConfig &config,
                    std::span<const Spectrum> reference = {},
                    NetworkState<float> *finalState = nullptr);

// Exact for scenes with only point lights, otherwise a uniform-strategy render at
// fallbackSpp.
std::vector<Spectrum> ReferenceImage(const Scene &scene, const RenderConfig &config,
                                     int fallbackSpp = 65536);

}  // namespace lumisel
