// SPDX-License-Identifier: Apache-2.0

#include <lumisel/integrator.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

namespace lumisel {

Strategy ParseStrategy(const std::string &name) {
    if (name == "uniform")
        return Strategy::Uniform;
    if (name == "power")
        return Strategy::Power;
    if (name == "tree-baseline")
        return Strategy::TreeBaseline;
    if (name == "neural-direct")
        return Strategy::NeuralDirect;
    if (name == "neural-residual")
        return Strategy::NeuralResidual;
    throw std::invalid_argument("unknown strategy '" + name + "'");
}

std::string ToString(Strategy s) {
    switch (s) {
    case Strategy::Uniform:
        return "uniform";
    case Strategy::Power:
        return "power";
    case Strategy::TreeBaseline:
        return "tree-baseline";
    case Strategy::NeuralDirect:
        return "neural-direct";
    case Strategy::NeuralResidual:
        return "neural-residual";
    }
    return "unknown";
}

int RenderConfig::TrainingWaves() const {
    if (!IsNeural(strategy))
        return 0;
    return int(std::ceil(trainRatio * spp - 1e-9));
}

PixelRect RenderConfig::Region() const { return crop ? *crop : PixelRect{0, 0, width, height}; }

void RenderConfig::Validate() const {
    if (width < 1 || height < 1)
        throw std::invalid_argument("image size must be positive");
    if (spp < 1)
        throw std::invalid_argument("spp must be at least 1");
    if (!(trainRatio >= 0 && trainRatio < 1))
        throw std::invalid_argument("train ratio must be in [0, 1)");
    if (clusterLevel < 0)
        throw std::invalid_argument("cluster level must be non-negative");
    if (!(lr > 0) || !std::isfinite(lr))
        throw std::invalid_argument("learning rate must be positive");
    if (timeBudget && !(*timeBudget > 0))
        throw std::invalid_argument("time budget must be positive");
    if (batchSize < 1)
        throw std::invalid_argument("batch size must be positive");
    if (crop) {
        const PixelRect &c = *crop;
        if (c.width < 1 || c.height < 1 || c.x < 0 || c.y < 0 || c.x + c.width > width ||
            c.y + c.height > height)
            throw std::invalid_argument("crop must lie inside the image");
    }
    if (discardTrainingWaves && !timeBudget && TrainingWaves() >= spp)
        throw std::invalid_argument("discarding training waves leaves no samples");
}

int ResolveThreadCount(int requested) {
    int n = requested;
    if (n <= 0) {
        n = int(std::max(1u, std::thread::hardware_concurrency()));
        if (const char *env = std::getenv("LUMISEL_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0)
                n = std::min(n, cap);
        }
    }
    return std::max(1, n);
}

std::optional<PrimaryVertex> TracePrimary(const Scene &scene, int px, int py, int width,
                                          int height) {
    Ray ray = scene.GetCamera().GenerateRay(px, py, width, height);
    PrimaryVertex v;
    for (int depth = 0; depth <= kMaxSpecularDepth; ++depth) {
        std::optional<SurfaceHit> hit = scene.Intersect(ray);
        if (!hit || hit->IsEmitter())
            return std::nullopt;
        ShadingQuery q = scene.MakeQuery(*hit, -ray.d);
        const Bsdf &bsdf = scene.Materials()[q.bsdfId];
        if (!bsdf.IsSpecular()) {
            v.query = q;
            return v;
        }
        v.throughput *= bsdf.albedo;
        ray = Ray{q.position, Normalize(Reflect(q.outDir, q.normal))};
    }
    return std::nullopt;
}

LightSelector::LightSelector(const Scene &scene, Strategy strategy, int clusterLevel,
                             ImportanceMode importance)
    : strategy(strategy) {
    auto lights = scene.Lights();
    if (lights.empty())
        throw std::invalid_argument("scene has no lights");
    tree = LightTree::Build(lights, importance);
    cut = SelectCut(tree, IsNeural(strategy) ? clusterLevel : 0);
    rootCut = SelectCut(tree, 0);
    powerPmf.resize(lights.size());
    for (size_t i = 0; i < lights.size(); ++i)
        powerPmf[i] = lights[i].Power();
    ApplyImportanceFloor(powerPmf);
    double total = 0;
    for (double p : powerPmf)
        total += p;
    powerCdf.resize(lights.size());
    double acc = 0;
    for (size_t i = 0; i < lights.size(); ++i) {
        powerPmf[i] /= total;
        acc += powerPmf[i];
        powerCdf[i] = acc;
    }
}

namespace {

int SampleDiscrete(std::span<const double> pmf, double u) {
    double acc = 0;
    for (size_t i = 0; i + 1 < pmf.size(); ++i) {
        acc += pmf[i];
        if (u < acc)
            return int(i);
    }
    return int(pmf.size()) - 1;
}

}  // namespace

LightSelection LightSelector::Select(const ShadingQuery &q, std::span<const double> clusterPmf,
                                     double u0, double u1) const {
    LightSelection s;
    switch (strategy) {
    case Strategy::Uniform: {
        int M = int(tree.NumLights());
        s.light = std::min(int(u0 * M), M - 1);
        s.pmfCluster = 1.0 / M;
        s.cluster = 0;
        return s;
    }
    case Strategy::Power: {
        auto it = std::upper_bound(powerCdf.begin(), powerCdf.end(), u0 * powerCdf.back());
        s.light = std::min(int(it - powerCdf.begin()), int(powerCdf.size()) - 1);
        while (powerPmf[s.light] <= 0 && s.light > 0)
            --s.light;
        s.pmfCluster = powerPmf[s.light];
        return s;
    }
    case Strategy::TreeBaseline: {
        ClusterSample cs = SampleInCluster(tree, rootCut, 0, q, u1);
        s.light = cs.light;
        s.pmfInCluster = cs.pmfInCluster;
        return s;
    }
    case Strategy::NeuralDirect:
    case Strategy::NeuralResidual: {
        s.cluster = SampleDiscrete(clusterPmf, u0);
        s.pmfCluster = clusterPmf[s.cluster];
        ClusterSample cs = SampleInCluster(tree, cut, s.cluster, q, u1);
        s.light = cs.light;
        s.pmfInCluster = cs.pmfInCluster;
        return s;
    }
    }
    return s;
}

double LightSelector::Pmf(const ShadingQuery &q, std::span<const double> clusterPmf,
                          int light) const {
    switch (strategy) {
    case Strategy::Uniform:
        return 1.0 / double(tree.NumLights());
    case Strategy::Power:
        return powerPmf[light];
    case Strategy::TreeBaseline:
        return PmfInClusterOf(tree, rootCut, 0, light, q);
    default: {
        int c = cut.clusterOfLight[light];
        return clusterPmf[c] * PmfInClusterOf(tree, cut, c, light, q);
    }
    }
}

DirectSample EstimateDirect(const Scene &scene, const LightSelector &selector,
                            const ShadingQuery &q, std::span<const double> clusterPmf, Rng &rng) {
    double u0 = rng.Uniform(), u1 = rng.Uniform();
    double v0 = rng.Uniform(), v1 = rng.Uniform();
    DirectSample ds;
    ds.selection = selector.Select(q, clusterPmf, u0, u1);
    ds.point = scene.SampleLightPoint(ds.selection.light, v0, v1);
    ds.f = scene.EvalF(q, ds.selection.light, ds.point);
    if (!ds.f.IsBlack())
        ds.estimate = ds.f / (ds.point.pdfArea * ds.selection.Pmf());
    return ds;
}

bool AllPointLights(const Scene &scene) {
    for (const Light &l : scene.Lights())
        if (l.IsArea())
            return false;
    return true;
}

Spectrum ExactDirectPointLights(const Scene &scene, const ShadingQuery &q) {
    Spectrum sum;
    auto lights = scene.Lights();
    for (size_t y = 0; y < lights.size(); ++y)
        sum += scene.EvalF(q, int(y), scene.SampleLightPoint(int(y), 0.5, 0.5));
    return sum;
}

Metrics ComputeMetrics(std::span<const Spectrum> image, std::span<const Spectrum> reference) {
    if (image.size() != reference.size() || image.empty())
        throw std::invalid_argument("image and reference sizes differ");
    double se = 0, rel = 0;
    for (size_t i = 0; i < image.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            double d = image[i][c] - reference[i][c];
            se += d * d;
            rel += d * d / Sqr(reference[i][c] + kRelMseEpsilon);
        }
    }
    double n = 3.0 * double(image.size());
    return {se / n, rel / n};
}

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
}

void ParallelFor(size_t count, int threads, const std::function<void(size_t)> &fn) {
    if (threads <= 1 || count <= 1) {
        for (size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> workers;
    int n = int(std::min<size_t>(size_t(threads), count));
    for (int t = 0; t < n; ++t)
        workers.emplace_back([&] {
            for (size_t i = next++; i < count; i = next++)
                fn(i);
        });
    for (auto &w : workers)
        w.join();
}

constexpr int kTileSize = 16;

std::vector<PixelRect> MakeTiles(int width, int height) {
    std::vector<PixelRect> tiles;
    for (int y = 0; y < height; y += kTileSize)
        for (int x = 0; x < width; x += kTileSize)
            tiles.push_back({x, y, std::min(kTileSize, width - x), std::min(kTileSize, height - y)});
    return tiles;
}

}  // namespace

RenderOutput Render(const Scene &scene, const RenderConfig &config,
                    std::span<const Spectrum> reference, NetworkState<float> *finalState) {
    config.Validate();
    const PixelRect region = config.Region();
    const int W = region.width, H = region.height;
    const size_t P = size_t(W) * H;
    if (!reference.empty() && reference.size() != P)
        throw std::invalid_argument("reference image size does not match the render region");

    RenderOutput out;
    out.width = W;
    out.height = H;

    auto buildStart = Clock::now();
    LightSelector selector(scene, config.strategy, config.clusterLevel, config.importance);
    out.treeBuildSeconds = Seconds(buildStart);
    const bool neural = IsNeural(config.strategy);
    const bool residual = config.strategy == Strategy::NeuralResidual;
    const size_t S = neural ? selector.NumClusters() : 0;
    out.numClusters = selector.NumClusters();
    const int threads = ResolveThreadCount(config.threads);
    const std::vector<PixelRect> tiles = MakeTiles(W, H);

    auto start = Clock::now();

    std::vector<std::optional<PrimaryVertex>> primary(P);
    ParallelFor(tiles.size(), threads, [&](size_t t) {
        const PixelRect &tile = tiles[t];
        for (int y = tile.y; y < tile.y + tile.height; ++y)
            for (int x = tile.x; x < tile.x + tile.width; ++x)
                primary[size_t(y) * W + x] =
                    TracePrimary(scene, region.x + x, region.y + y, config.width, config.height);
    });

    NetworkConfig netConfig;
    netConfig.numOutputs = int(std::max<size_t>(S, 1));
    netConfig.inputMode = config.inputMode;
    std::optional<NetworkState<float>> state;
    std::vector<double> baseline, clusterPmf;
    if (neural) {
        state.emplace(netConfig, scene.WorldBounds(), HashCombine(config.seed, 0x6e6e));
        clusterPmf.assign(P * S, 0.0);
        if (residual) {
            baseline.assign(P * S, 1.0);
            ParallelFor(tiles.size(), threads, [&](size_t t) {
                const PixelRect &tile = tiles[t];
                for (int y = tile.y; y < tile.y + tile.height; ++y)
                    for (int x = tile.x; x < tile.x + tile.width; ++x) {
                        size_t i = size_t(y) * W + x;
                        if (primary[i])
                            BaselineWeights(selector.Tree(), selector.Cut(), primary[i]->query,
                                            std::span<double>(baseline).subspan(i * S, S));
                    }
            });
        }
    }

    // Cluster PMFs depend only on the pixel's fixed shading point and the network,
    // so they are refreshed once per published snapshot.
    auto refreshClusterPmf = [&] {
        const Network<float> &net = state->network;
        ParallelFor(tiles.size(), threads, [&](size_t t) {
            const PixelRect &tile = tiles[t];
            std::vector<size_t> pixels;
            std::vector<ShadingQuery> queries;
            for (int y = tile.y; y < tile.y + tile.height; ++y)
                for (int x = tile.x; x < tile.x + tile.width; ++x) {
                    size_t i = size_t(y) * W + x;
                    if (primary[i]) {
                        pixels.push_back(i);
                        queries.push_back(primary[i]->query);
                    }
                }
            if (pixels.empty())
                return;
            Matrix<float> logits = net.Forward(net.EncodeBatch(queries, nullptr));
            std::vector<double> f(S);
            for (size_t j = 0; j < pixels.size(); ++j) {
                for (size_t c = 0; c < S; ++c)
                    f[c] = double(logits(Eigen::Index(c), Eigen::Index(j)));
                std::span<double> pmf = std::span<double>(clusterPmf).subspan(pixels[j] * S, S);
                if (residual)
                    ResidualPmf(f, std::span<const double>(baseline).subspan(pixels[j] * S, S), pmf);
                else
                    SoftmaxPmf(f, pmf);
            }
        });
    };

    std::vector<Spectrum> sum(P), sumSq(P);
    std::vector<TrainingBatch> tileRecords(tiles.size(), TrainingBatch(int(std::max<size_t>(S, 1)), residual));
    GradientOptions gradOptions;
    gradOptions.clampWeights = config.weightClamp;
    const int plannedTraining = config.TrainingWaves();
    const int maxWaves = config.spp;
    bool pmfStale = true;
    int included = 0;

    for (int wave = 0; wave < maxWaves; ++wave) {
        double elapsed = Seconds(start);
        if (config.timeBudget && wave > 0 && elapsed >= *config.timeBudget)
            break;
        bool training = neural && (config.timeBudget
                                       ? elapsed < config.trainRatio * *config.timeBudget
                                       : wave < plannedTraining);
        bool include = !(config.discardTrainingWaves && training);
        if (neural && pmfStale) {
            refreshClusterPmf();
            pmfStale = false;
        }

        ParallelFor(tiles.size(), threads, [&](size_t t) {
            const PixelRect &tile = tiles[t];
            TrainingBatch &records = tileRecords[t];
            records.Clear();
            for (int y = tile.y; y < tile.y + tile.height; ++y)
                for (int x = tile.x; x < tile.x + tile.width; ++x) {
                    size_t i = size_t(y) * W + x;
                    if (!primary[i])
                        continue;
                    const ShadingQuery &q = primary[i]->query;
                    uint64_t pixelIndex = uint64_t(region.y + y) * config.width + (region.x + x);
                    Rng rng = PixelRng(config.seed, pixelIndex, uint64_t(wave));
                    std::span<const double> pmf;
                    if (neural)
                        pmf = std::span<const double>(clusterPmf).subspan(i * S, S);
                    DirectSample ds = EstimateDirect(scene, selector, q, pmf, rng);
                    if (include) {
                        Spectrum c = primary[i]->throughput * ds.estimate;
                        sum[i] += c;
                        sumSq[i] += c * c;
                    }
                    if (training) {
                        TrainingRecord r;
                        r.query = q;
                        r.cluster = ds.selection.cluster;
                        r.light = ds.selection.light;
                        r.fEstimate = Luminance(ds.f);
                        r.pdfArea = ds.point.pdfArea;
                        r.pmfInCluster = ds.selection.pmfInCluster;
                        r.pmfCluster = ds.selection.pmfCluster;
                        records.Add(r, residual ? std::span<const double>(baseline).subspan(i * S, S)
                                                : std::span<const double>());
                    }
                }
        });
        if (include)
            ++included;

        if (training) {
            TrainingBatch batch(int(S), residual);
            for (const TrainingBatch &b : tileRecords)
                batch.Append(b);
            if (!batch.Empty()) {
                out.trainingSteps += TrainOnBatch(*state, batch, config.lr, gradOptions, config.batchSize);
                pmfStale = true;
            }
            ++out.trainingWaves;
        }

        WaveStats ws;
        ws.wave = wave;
        ws.spp = wave + 1;
        ws.seconds = Seconds(start);
        ws.training = training;
        if (!reference.empty() && included > 0) {
            std::vector<Spectrum> mean(P);
            for (size_t i = 0; i < P; ++i)
                mean[i] = sum[i] / double(included);
            Metrics m = ComputeMetrics(mean, reference);
            ws.mse = m.mse;
            ws.relMse = m.relMse;
            ws.hasMetrics = true;
        }
        out.stats.push_back(ws);
        ++out.waves;
    }

    out.renderSeconds = Seconds(start);
    out.samplesPerPixel = included;
    out.image.assign(P, Spectrum());
    out.secondMoment.assign(P, Spectrum());
    if (included > 0)
        for (size_t i = 0; i < P; ++i) {
            out.image[i] = sum[i] / double(included);
            out.secondMoment[i] = sumSq[i] / double(included);
        }
    if (finalState && state)
        *finalState = std::move(*state);
    return out;
}

std::vector<Spectrum> ReferenceImage(const Scene &scene, const RenderConfig &config,
                                     int fallbackSpp) {
    PixelRect region = config.Region();
    if (!AllPointLights(scene)) {
        RenderConfig ref = config;
        ref.strategy = Strategy::Uniform;
        ref.spp = fallbackSpp;
        ref.timeBudget.reset();
        ref.discardTrainingWaves = false;
        ref.seed = HashCombine(config.seed, 0x726566);
        return Render(scene, ref).image;
    }
    std::vector<Spectrum> image(size_t(region.width) * region.height);
    std::vector<PixelRect> tiles = MakeTiles(region.width, region.height);
    ParallelFor(tiles.size(), ResolveThreadCount(config.threads), [&](size_t t) {
        const PixelRect &tile = tiles[t];
        for (int y = tile.y; y < tile.y + tile.height; ++y)
            for (int x = tile.x; x < tile.x + tile.width; ++x) {
                auto v = TracePrimary(scene, region.x + x, region.y + y, config.width, config.height);
                if (v)
                    image[size_t(y) * region.width + x] =
                        v->throughput * ExactDirectPointLights(scene, v->query);
            }
    });
    return image;
}

}  // namespace lumisel
