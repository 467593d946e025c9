// SPDX-License-Identifier: Apache-2.0

#include <lumisel/integrator.h>
#include <lumisel/procedural.h>

#include "test_util.h"

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

using namespace lumisel;
using namespace lumisel::testing;

namespace {

// Lambertian floor, a low wall and a handful of point lights on both sides of it.
SceneDescription DeskScene(bool wall = true, int lights = 6) {
    SceneDescription d;
    d.materials = {Bsdf{BsdfKind::Lambertian, Spectrum(0.8, 0.6, 0.4), 1, "floor"},
                   Bsdf{BsdfKind::Glossy, Spectrum(0.5), 0.4, "wall"}};
    d.meshes.push_back(QuadMesh({-2, 0, 2}, {4, 0, 0}, {0, 0, -4}));
    if (wall)
        d.meshes.push_back(QuadMesh({0, 0, 2}, {0, 0, -4}, {0, 0.6, 0}, 1));
    Rng rng(77);
    for (int i = 0; i < lights; ++i) {
        double x = (i % 2 ? 1 : -1) * (0.3 + rng.Uniform());
        d.lights.push_back(Light::Point({x, 0.4 + rng.Uniform(), 2 * rng.Uniform() - 1},
                                        Spectrum(0.5 + rng.Uniform(), 1, 0.2 + rng.Uniform())));
    }
    d.camera = Camera{{0, 3, 2.5}, {0, 0, 0}, {0, 1, 0}, 50};
    return d;
}

// Independent Lambertian point-light sum for an unoccluded receiver.
Spectrum LambertSum(const SceneDescription &d, const ShadingQuery &q) {
    Spectrum s;
    const Bsdf &b = d.materials[q.bsdfId];
    for (const Light &l : d.lights) {
        Vec3 to = l.vertices[0] - q.position;
        double d2 = LengthSquared(to);
        double cosT = Dot(q.normal, to) / std::sqrt(d2);
        if (cosT > 0)
            s += l.emission * b.albedo * (cosT / (Pi * d2));
    }
    return s;
}

const std::array<Strategy, 5> kAllStrategies{Strategy::Uniform, Strategy::Power, Strategy::TreeBaseline,
                                             Strategy::NeuralDirect, Strategy::NeuralResidual};

// Sum over pixels of squared z-scores of the luminance mean; compared with chi^2(P).
double ZScorePValue(const RenderOutput &out, std::span<const Spectrum> reference) {
    double z2 = 0;
    int dof = 0;
    for (size_t i = 0; i < out.image.size(); ++i) {
        double mean = Luminance(out.image[i]);
        double second = Luminance(out.secondMoment[i]);
        double ref = Luminance(reference[i]);
        // Luminance of the per-channel second moment bounds E[lum^2]; use the exact
        // value from channels instead when it is available.
        double var = std::max(0.0, second - mean * mean);
        if (var <= 0) {
            EXPECT_NEAR(mean, ref, 1e-9 * (1 + ref));
            continue;
        }
        z2 += Sqr(mean - ref) / (var / out.samplesPerPixel);
        ++dof;
    }
    if (dof == 0)
        return 1;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), z2));
}

}  // namespace

TEST(Strategy, ParseRoundTrip) {
    for (Strategy s : kAllStrategies)
        EXPECT_EQ(ParseStrategy(ToString(s)), s);
    EXPECT_THROW(ParseStrategy("ats"), std::invalid_argument);
}

TEST(RenderConfig, TrainingWavesRoundUp) {
    RenderConfig c;
    c.spp = 128;
    c.trainRatio = 0.15;
    EXPECT_EQ(c.TrainingWaves(), 20);
    c.trainRatio = 0.25;
    EXPECT_EQ(c.TrainingWaves(), 32);
    c.trainRatio = 0;
    EXPECT_EQ(c.TrainingWaves(), 0);
    c.trainRatio = 0.15;
    c.strategy = Strategy::TreeBaseline;
    EXPECT_EQ(c.TrainingWaves(), 0);
}

TEST(RenderConfig, ValidateRejectsBadFields) {
    auto bad = [](auto mutate) {
        RenderConfig c;
        mutate(c);
        return c;
    };
    EXPECT_NO_THROW(RenderConfig{}.Validate());
    EXPECT_THROW(bad([](RenderConfig &c) { c.spp = 0; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.trainRatio = 1; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.trainRatio = -0.1; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.lr = 0; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.width = 0; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.timeBudget = 0.0; }).Validate(), std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) { c.crop = PixelRect{250, 0, 10, 10}; }).Validate(),
                 std::invalid_argument);
    EXPECT_THROW(bad([](RenderConfig &c) {
                     c.spp = 1;
                     c.trainRatio = 0.5;
                     c.discardTrainingWaves = true;
                 }).Validate(),
                 std::invalid_argument);
}

TEST(ResolveThreadCount, ExplicitRequestWins) {
    EXPECT_EQ(ResolveThreadCount(3), 3);
    EXPECT_GE(ResolveThreadCount(0), 1);
}

TEST(TracePrimary, HitsFloorAndMisses) {
    Scene scene(DeskScene());
    auto center = TracePrimary(scene, 32, 32, 64, 64);
    ASSERT_TRUE(center);
    EXPECT_NEAR(center->query.position.y, 0, 1e-9);
    EXPECT_EQ(center->throughput, Spectrum(1));
    SceneDescription sky = DeskScene();
    sky.camera = Camera{{0, 3, 0}, {0, 10, 0}, {0, 0, 1}, 40};
    EXPECT_FALSE(TracePrimary(Scene(sky), 32, 32, 64, 64));
}

TEST(TracePrimary, FollowsMirrorAndMultipliesAlbedo) {
    SceneDescription d;
    d.materials = {Bsdf{BsdfKind::Lambertian, Spectrum(0.5), 1, "floor"},
                   Bsdf{BsdfKind::Mirror, Spectrum(0.9, 0.8, 0.7), 1, "mirror"}};
    d.meshes.push_back(QuadMesh({-10, 0, 10}, {20, 0, 0}, {0, 0, -20}));
    // Vertical mirror at z = -1 facing +z.
    d.meshes.push_back(QuadMesh({-1, 0.5, -1}, {2, 0, 0}, {0, 2, 0}, 1));
    d.lights = {Light::Point({0, 3, 0}, Spectrum(1))};
    // Camera looks horizontally at the mirror, slightly downward so the reflected ray reaches the floor.
    d.camera = Camera{{0, 1.5, 3}, {0, 0.9, -1}, {0, 1, 0}, 10};
    Scene scene(d);
    auto v = TracePrimary(scene, 16, 16, 32, 32);
    ASSERT_TRUE(v);
    EXPECT_NEAR(v->query.position.y, 0, 1e-9);
    EXPECT_GT(v->query.position.z, -1);  // in front of the mirror after reflection
    EXPECT_NEAR(v->throughput.r, 0.9, 1e-12);
    EXPECT_NEAR(v->throughput.b, 0.7, 1e-12);
    // The outgoing direction points back toward the mirror.
    EXPECT_LT(v->query.outDir.z, 0);
}

TEST(TracePrimary, EndlessMirrorChainGivesNothing) {
    SceneDescription d;
    d.materials = {Bsdf{BsdfKind::Mirror, Spectrum(1), 1, "m"}};
    d.meshes.push_back(QuadMesh({-5, -5, -1}, {10, 0, 0}, {0, 10, 0}));
    d.meshes.push_back(QuadMesh({-5, -5, 1}, {0, 10, 0}, {10, 0, 0}));
    d.lights = {Light::Point({0, 0, 0}, Spectrum(1))};
    d.camera = Camera{{0, 0, 0}, {0, 0.01, -1}, {0, 1, 0}, 1};
    EXPECT_FALSE(TracePrimary(Scene(d), 0, 0, 1, 1));
}

TEST(TracePrimary, EmitterHitGivesNothing) {
    SceneDescription d = DeskScene(false, 1);
    d.lights = {Light::Quad({-5, 2, -5}, {10, 0, 0}, {0, 0, 10}, Spectrum(1))};
    d.camera = Camera{{0, 1, 0}, {0, 5, 0}, {0, 0, 1}, 30};
    EXPECT_FALSE(TracePrimary(Scene(d), 4, 4, 8, 8));
}

TEST(LightSelector, SingleLightIsSelectedWithProbabilityOne) {
    Scene scene(DeskScene(false, 1));
    ShadingQuery q{{0.1, 0, 0.2}, {0, 1, 0}, {0, 1, 0}, 0};
    Rng rng(1);
    for (Strategy s : kAllStrategies) {
        LightSelector sel(scene, s, 6, ImportanceMode::GeometricCosine);
        ASSERT_EQ(sel.NumClusters(), 1u);
        std::vector<double> pmf{1.0};
        DirectSample ds = EstimateDirect(scene, sel, q, pmf, rng);
        EXPECT_EQ(ds.selection.light, 0);
        EXPECT_EQ(ds.selection.Pmf(), 1);
        Spectrum expected = scene.EvalF(q, 0, ds.point) / ds.point.pdfArea;
        EXPECT_EQ(ds.estimate, expected) << ToString(s);
    }
}

TEST(LightSelector, FrequenciesMatchPmfForEveryStrategy) {
    SceneDescription d = DeskScene(true, 24);
    Scene scene(d);
    ShadingQuery q{{-0.4, 0, 0.3}, Normalize(Vec3{0.2, 1, 0.1}), {0, 1, 0}, 0};
    Rng rng(2);
    for (Strategy s : kAllStrategies) {
        LightSelector sel(scene, s, 3, ImportanceMode::GeometricCosine);
        std::vector<double> clusterPmf(sel.NumClusters());
        double total = 0;
        for (double &p : clusterPmf)
            total += p = 0.1 + rng.Uniform();
        for (double &p : clusterPmf)
            p /= total;
        std::vector<double> probs(d.lights.size()), obs(d.lights.size(), 0);
        double sum = 0;
        for (size_t y = 0; y < d.lights.size(); ++y)
            sum += probs[y] = sel.Pmf(q, clusterPmf, int(y));
        EXPECT_NEAR(sum, 1, 1e-9) << ToString(s);
        const int N = 100000;
        for (int i = 0; i < N; ++i) {
            LightSelection ls = sel.Select(q, clusterPmf, rng.Uniform(), rng.Uniform());
            EXPECT_NEAR(ls.Pmf(), probs[ls.light], 1e-12 * probs[ls.light]);
            obs[ls.light] += 1;
        }
        ChiSquareResult r = ChiSquareTest(obs, probs);
        EXPECT_GT(r.pValue, 0.01) << ToString(s) << " chi2 " << r.statistic;
    }
}

TEST(LightSelector, ZeroResidualAtRootCutMatchesTreeBaseline) {
    Scene scene(DeskScene(true, 16));
    LightSelector tree(scene, Strategy::TreeBaseline, 0, ImportanceMode::GeometricCosine);
    LightSelector neural(scene, Strategy::NeuralResidual, 0, ImportanceMode::GeometricCosine);
    ASSERT_EQ(neural.NumClusters(), 1u);
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        ShadingQuery q{RandomPoint(rng, {-2, 0, -2}, {2, 0, 2}), {0, 1, 0}, {0, 1, 0}, 0};
        std::vector<double> w = BaselineWeights(neural.Tree(), neural.Cut(), q), f(1, 0.0), pmf(1);
        ResidualPmf(f, w, pmf);
        for (int y = 0; y < 16; ++y)
            EXPECT_DOUBLE_EQ(neural.Pmf(q, pmf, y), tree.Pmf(q, {}, y));
    }
}

TEST(EstimateDirect, UniformMeanMatchesExactSum) {
    SceneDescription d = DeskScene(false, 8);
    Scene scene(d);
    LightSelector sel(scene, Strategy::Uniform, 0, ImportanceMode::GeometricCosine);
    ShadingQuery q{{0.2, 0, -0.1}, Normalize(Vec3{0, 1, 1}), {0, 1, 0}, 0};
    Spectrum exact = LambertSum(d, q);
    for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(ExactDirectPointLights(scene, q)[c], exact[c], 1e-12);
    Rng rng(4);
    const int N = 1000000;
    double s = 0, s2 = 0;
    for (int i = 0; i < N; ++i) {
        double e = Luminance(EstimateDirect(scene, sel, q, {}, rng).estimate);
        s += e;
        s2 += e * e;
    }
    double mean = s / N, se = std::sqrt((s2 / N - mean * mean) / N);
    EXPECT_LE(std::abs(mean - Luminance(exact)), 3 * se);
}

TEST(ComputeMetrics, Examples) {
    std::vector<Spectrum> ref(4, Spectrum(0)), img = ref;
    EXPECT_EQ(ComputeMetrics(img, ref).mse, 0);
    EXPECT_EQ(ComputeMetrics(img, ref).relMse, 0);
    for (Spectrum &s : img)
        s.g = 1;
    Metrics m = ComputeMetrics(img, ref);
    EXPECT_NEAR(m.mse, 1.0 / 3, 1e-15);
    EXPECT_NEAR(m.relMse, 1.0 / 3 / (0.01 * 0.01), 1e-9);
    EXPECT_THROW(ComputeMetrics(img, std::vector<Spectrum>(3)), std::invalid_argument);
}

TEST(ComputeMetrics, MatchesScalarOracle) {
    Rng rng(5);
    std::vector<Spectrum> a(50), b(50);
    for (size_t i = 0; i < 50; ++i) {
        a[i] = Spectrum(rng.Uniform(), rng.Uniform(), rng.Uniform());
        b[i] = Spectrum(rng.Uniform(), rng.Uniform(), rng.Uniform());
    }
    double mse = 0, rel = 0;
    for (size_t i = 0; i < 50; ++i)
        for (int c = 0; c < 3; ++c) {
            mse += std::pow(a[i][c] - b[i][c], 2) / 150;
            rel += std::pow(a[i][c] - b[i][c], 2) / std::pow(b[i][c] + 0.01, 2) / 150;
        }
    Metrics m = ComputeMetrics(a, b);
    EXPECT_NEAR(m.mse, mse, 1e-14);
    EXPECT_NEAR(m.relMse, rel, 1e-10 * rel);
}

TEST(Render, WaveScheduleAndStats) {
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 16;
    c.spp = 128;
    c.strategy = Strategy::NeuralResidual;
    c.clusterLevel = 2;
    c.threads = 2;
    std::vector<Spectrum> ref = ReferenceImage(scene, c);
    RenderOutput out = Render(scene, c, ref);
    EXPECT_EQ(out.trainingWaves, 20);
    EXPECT_EQ(out.waves, 128);
    EXPECT_EQ(out.samplesPerPixel, 128);
    ASSERT_EQ(out.stats.size(), 128u);
    for (int w = 0; w < 128; ++w) {
        EXPECT_EQ(out.stats[w].spp, w + 1);
        EXPECT_EQ(out.stats[w].training, w < 20);
        EXPECT_TRUE(out.stats[w].hasMetrics);
        if (w > 0)
            EXPECT_GE(out.stats[w].seconds, out.stats[w - 1].seconds);
    }
    EXPECT_GT(out.trainingSteps, 0);
    EXPECT_LE(out.trainingSteps, 20);
    for (const Spectrum &s : out.image)
        EXPECT_TRUE(std::isfinite(s.r) && std::isfinite(s.g) && std::isfinite(s.b));
}

TEST(Render, DiscardTrainingWaves) {
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 8;
    c.spp = 20;
    c.trainRatio = 0.25;
    c.clusterLevel = 2;
    c.discardTrainingWaves = true;
    RenderOutput out = Render(scene, c);
    EXPECT_EQ(out.trainingWaves, 5);
    EXPECT_EQ(out.samplesPerPixel, 15);
    EXPECT_FALSE(out.stats[0].hasMetrics);
}

TEST(Render, TimeBudgetStopsAtWaveBoundary) {
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 32;
    c.spp = 1000000;
    c.timeBudget = 0.3;
    c.clusterLevel = 2;
    c.threads = 1;
    RenderOutput out = Render(scene, c);
    EXPECT_GT(out.waves, 1);
    EXPECT_LT(out.waves, 1000000);
    EXPECT_EQ(out.samplesPerPixel, out.waves);
    EXPECT_GE(out.stats.back().seconds, 0.3);
    // Only the wave that crossed the budget may end past it.
    EXPECT_LT(out.stats[out.stats.size() - 2].seconds, 0.3);
    EXPECT_GT(out.trainingWaves, 0);
    EXPECT_LT(out.trainingWaves, out.waves);
    for (const WaveStats &w : out.stats)
        if (w.training)
            EXPECT_LT(w.wave, out.trainingWaves);
}

TEST(Render, DeterministicAcrossThreadCounts) {
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = 40;
    c.height = 24;
    c.spp = 12;
    c.clusterLevel = 3;
    c.seed = 9;
    c.threads = 1;
    RenderOutput a = Render(scene, c);
    c.threads = 4;
    RenderOutput b = Render(scene, c);
    RenderOutput again = Render(scene, c);
    ASSERT_EQ(a.image.size(), b.image.size());
    for (size_t i = 0; i < a.image.size(); ++i) {
        EXPECT_EQ(a.image[i], b.image[i]);
        EXPECT_EQ(b.image[i], again.image[i]);
    }
    c.seed = 10;
    RenderOutput other = Render(scene, c);
    EXPECT_NE(other.image, a.image);
}

TEST(Render, CropMatchesFullImageRegion) {
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 32;
    c.spp = 4;
    c.strategy = Strategy::Power;
    RenderOutput full = Render(scene, c);
    c.crop = PixelRect{5, 7, 10, 6};
    RenderOutput crop = Render(scene, c);
    ASSERT_EQ(crop.width, 10);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 10; ++x)
            EXPECT_EQ(crop.image[size_t(y) * 10 + x], full.image[size_t(y + 7) * 32 + x + 5]);
}

TEST(Render, EveryStrategyIsUnbiased) {
    // Untrained networks: uniform clusters for direct, the baseline for residual.
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 6;
    c.spp = 3000;
    c.clusterLevel = 2;
    c.trainRatio = 0;
    std::vector<Spectrum> ref = ReferenceImage(scene, c);
    for (Strategy s : kAllStrategies) {
        c.strategy = s;
        RenderOutput out = Render(scene, c);
        EXPECT_GT(ZScorePValue(out, ref), 1e-3) << ToString(s);
    }
}

TEST(Render, NeuralStrategiesStayUnbiasedWhileTraining) {
    Scene scene(DeskScene(false));
    RenderConfig c;
    c.width = c.height = 16;
    c.spp = 2000;
    c.clusterLevel = 2;
    std::vector<Spectrum> ref = ReferenceImage(scene, c);
    for (Strategy s : {Strategy::NeuralDirect, Strategy::NeuralResidual}) {
        c.strategy = s;
        RenderOutput out = Render(scene, c);
        ASSERT_EQ(out.trainingSteps, 300);
        EXPECT_GT(ZScorePValue(out, ref), 1e-3) << ToString(s);
    }
}

TEST(Render, UniformMatchesAreaLightReference) {
    // Uniform NEE on an analytic configuration: a small diffuse patch under a large
    // emitting quad, compared with the quadrature-free closed form for the disk-like limit
    // is impractical, so the reference is a much longer independent run.
    SceneDescription d = DeskScene(false, 0);
    d.lights = {Light::Quad({-0.5, 1, -0.5}, {1, 0, 0}, {0, 0, 1}, Spectrum(2)),
                Light::Point({1, 0.5, 0}, Spectrum(0.5))};
    Scene scene(d);
    RenderConfig c;
    c.width = c.height = 4;
    c.spp = 4000;
    c.strategy = Strategy::Uniform;
    RenderOutput out = Render(scene, c);
    RenderConfig rc = c;
    rc.seed = 123;
    std::vector<Spectrum> ref = ReferenceImage(scene, rc, 400000);
    EXPECT_GT(ZScorePValue(out, ref), 1e-3);
}

TEST(ReferenceImage, ExactForPointLightScenes) {
    SceneDescription d = DeskScene(false, 5);
    d.camera.fovDegrees = 30;
    Scene scene(d);
    RenderConfig c;
    c.width = c.height = 8;
    std::vector<Spectrum> ref = ReferenceImage(scene, c);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            auto v = TracePrimary(scene, x, y, 8, 8);
            ASSERT_TRUE(v);
            Spectrum e = LambertSum(d, v->query);
            for (int ch = 0; ch < 3; ++ch)
                EXPECT_NEAR(ref[size_t(y) * 8 + x][ch], e[ch], 1e-12);
        }
}

TEST(Render, ResidualStartsAtBaselineDistribution) {
    // With no training the residual strategy samples from the normalized baseline
    // weights, so its image is unbiased and its network stays at initialization.
    Scene scene(DeskScene());
    RenderConfig c;
    c.width = c.height = 4;
    c.spp = 8;
    c.trainRatio = 0;
    c.clusterLevel = 3;
    NetworkState<float> state;
    RenderOutput out = Render(scene, c, {}, &state);
    EXPECT_EQ(out.trainingSteps, 0);
    EXPECT_EQ(state.step, 0u);
    for (float g : state.network.GridTable())
        EXPECT_EQ(g, 0);
}

TEST(Render, StressSceneTrainingReducesError) {
    Scene scene(GenerateProceduralScene(OcclusionStressSpec(0)));
    RenderConfig c;
    c.width = c.height = 48;
    c.spp = 64;
    c.threads = 0;
    std::vector<Spectrum> ref = ReferenceImage(scene, c);
    c.strategy = Strategy::TreeBaseline;
    double tree = ComputeMetrics(Render(scene, c).image, ref).relMse;
    c.strategy = Strategy::NeuralResidual;
    double neural = ComputeMetrics(Render(scene, c).image, ref).relMse;
    EXPECT_LT(neural, tree);
}
