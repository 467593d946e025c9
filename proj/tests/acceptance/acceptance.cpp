// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if
// any fails. Arguments select criteria by number (default: all).

#include "commands.h"
#include "test_util.h"

#include <lumisel/image.h>
#include <lumisel/integrator.h>
#include <lumisel/light_tree.h>
#include <lumisel/neural.h>
#include <lumisel/procedural.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace lumisel;
using namespace lumisel::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double Seconds(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Format(const char *fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

double Median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int UlpDistance(double a, double b) {
    int n = 0;
    while (a != b && n < 1000) {
        a = std::nextafter(a, b);
        ++n;
    }
    return n;
}

// Random light set mixing point, triangle and quad emitters.
std::vector<Light> RandomLights(Rng &rng, int n) {
    std::vector<Light> lights;
    for (int i = 0; i < n; ++i) {
        Vec3 p = RandomPoint(rng, {-3, 0.5, -3}, {3, 3, 3});
        Spectrum e(0.05 + rng.Uniform(), 0.05 + rng.Uniform(), 0.05 + rng.Uniform());
        double kind = rng.Uniform();
        if (kind < 0.5) {
            lights.push_back(Light::Point(p, e));
        } else {
            Vec3 u = 0.3 * RandomUnitVector(rng), v = 0.3 * RandomUnitVector(rng);
            if (Length(Cross(u, v)) < 1e-3)
                v = Vec3{0, 0.3, 0};
            bool twoSided = rng.Uniform() < 0.3;
            if (kind < 0.75)
                lights.push_back(Light::Triangle(p, p + u, p + v, e, twoSided));
            else
                lights.push_back(Light::Quad(p, u, v, e, twoSided));
        }
    }
    return lights;
}

ShadingQuery RandomQuery(Rng &rng, const Vec3 &lo, const Vec3 &hi) {
    Vec3 n = RandomUnitVector(rng);
    return {RandomPoint(rng, lo, hi), n, RandomUnitVector(rng), 0};
}

NetworkConfig SmallNetwork(int outputs) {
    NetworkConfig c;
    c.numOutputs = outputs;
    c.hiddenWidths = {16, 16};
    c.gridResolution = 4;
    c.gridFeatures = 2;
    return c;
}

// 1. Cluster PMFs and the full selection chain are normalized.
Verdict PmfValidity() {
    auto start = std::chrono::steady_clock::now();
    Rng rng(101);
    const int kScenes = 20, kTriples = 10000;
    double worstPmf = 0, worstChain = 0;
    double minEntry = 1;
    int triples = 0;
    for (int s = 0; s < kScenes; ++s) {
        std::vector<Light> lights = RandomLights(rng, 2 + int(rng.Uniform() * 63));
        LightTree tree = LightTree::Build(lights, ImportanceMode(s % 3));
        ClusterCut cut = SelectCut(tree, 1 + s % 6);
        int S = int(cut.Size());
        Bounds3 bounds{{-4, -1, -4}, {4, 4, 4}};
        Network<double> net(SmallNetwork(S), bounds, s);
        std::vector<double> logits(S), w(S), p(S);
        for (int t = 0; t < kTriples / kScenes; ++t, ++triples) {
            // Parameter scales up to 8 push logits well past exp's range.
            net.Randomize(1000 * s + t, std::pow(8.0, rng.Uniform() * 2 - 1));
            ShadingQuery q = RandomQuery(rng, {-4, -1, -4}, {4, 4, 4});
            net.Logits(q, logits);
            BaselineWeights(tree, cut, q, w);
            ResidualPmf(logits, w, p);
            double sum = 0;
            for (double x : p) {
                sum += x;
                minEntry = std::min(minEntry, x);
            }
            worstPmf = std::max(worstPmf, std::abs(sum - 1));
            double chain = 0;
            for (size_t y = 0; y < lights.size(); ++y) {
                int c = cut.clusterOfLight[y];
                chain += p[c] * PmfInClusterOf(tree, cut, c, int(y), q);
            }
            worstChain = std::max(worstChain, std::abs(chain - 1));
        }
    }
    double elapsed = Seconds(start);
    bool pass = triples == kTriples && worstPmf <= 1e-6 && worstChain <= 1e-6 && minEntry > 0 && elapsed < 10;
    return {pass, Format("%d triples, max |sum-1| %.2e, max |chain-1| %.2e, min entry %.2e, %.1fs", triples,
                         worstPmf, worstChain, minEntry, elapsed)};
}

// 2. An untrained network reproduces the normalized baseline weights.
Verdict ZeroResidualIdentity() {
    Scene scene(GenerateProceduralScene(OcclusionStressSpec(0)));
    LightSelector selector(scene, Strategy::NeuralResidual, 6, ImportanceMode::GeometricCosine);
    int S = int(selector.NumClusters());
    NetworkConfig config;
    config.numOutputs = S;
    NetworkState<float> state(config, scene.WorldBounds(), 3);
    // Randomize everything, then zero only the output layer.
    Network<float> &net = state.network;
    net.Randomize(4, 0.5);
    const auto &last = net.Model().Layers().back();
    std::span<float> params = net.Parameters().subspan(net.GridParameters());
    std::fill(params.begin() + last.weightOffset, params.begin() + last.weightOffset + last.in * last.out, 0.0f);
    std::fill(params.begin() + last.biasOffset, params.begin() + last.biasOffset + last.out, 0.0f);

    Rng rng(5);
    Bounds3 b = scene.WorldBounds();
    int worst = 0, queries = 0;
    std::vector<double> logits(S), p(S);
    for (; queries < 1000; ++queries) {
        ShadingQuery q = RandomQuery(rng, b.pMin, b.pMax);
        net.Logits(q, logits);
        std::vector<double> w = BaselineWeights(selector.Tree(), selector.Cut(), q);
        ResidualPmf(logits, w, p);
        double total = 0;
        for (double x : w)
            total += x;
        for (int c = 0; c < S; ++c)
            worst = std::max(worst, UlpDistance(p[c], w[c] / total));
    }
    return {worst <= 2, Format("%d queries over %d clusters, max deviation %d ulp", queries, S, worst)};
}

// 3. Score-function gradient against central differences of the weighted NLL.
Verdict GradientCorrectness() {
    auto start = std::chrono::steady_clock::now();
    Rng rng(301);
    const Bounds3 bounds{{-1, -1, -1}, {1, 1, 1}};
    double worst = 0;
    int trials = 0;
    for (; trials < 100; ++trials) {
        int S = 1 + trials % 4;
        bool residual = trials % 2 == 0;
        NetworkConfig config;
        config.numOutputs = S;
        config.hiddenWidths = std::vector<int>(1 + trials % 3, 2 + trials % 7);
        config.gridResolution = 2 + trials % 3;
        config.gridFeatures = 1 + trials % 2;
        config.inputMode = trials % 5 == 0 ? InputMode::Discrete : InputMode::Continuous;
        Network<double> net(config, bounds, trials);
        net.Randomize(500 + trials, 0.2 + rng.Uniform());
        TrainingBatch batch(S, residual);
        for (int j = 0; j < 8; ++j) {
            TrainingRecord r;
            r.query = RandomQuery(rng, bounds.pMin, bounds.pMax);
            r.cluster = std::min(S - 1, int(rng.Uniform() * S));
            r.fEstimate = j % 4 == 3 ? 0.0 : rng.Uniform();
            r.pdfArea = 0.5 + rng.Uniform();
            r.pmfInCluster = 0.2 + 0.8 * rng.Uniform();
            r.pmfCluster = 0.1 + 0.9 * rng.Uniform();
            std::vector<double> w(S);
            for (double &x : w)
                x = 0.05 + rng.Uniform();
            batch.Add(r, w);
        }
        GradientOptions opt;
        opt.clampWeights = false;
        std::vector<double> grad(net.NumParameters(), 0), scratch(net.NumParameters());
        KlGradientBatch(net, batch, opt, grad);
        auto loss = [&] {
            std::fill(scratch.begin(), scratch.end(), 0.0);
            return KlGradientBatch(net, batch, opt, scratch).loss;
        };
        std::span<double> p = net.Parameters();
        double diff = 0, norm = 0;
        for (size_t i = 0; i < p.size(); ++i) {
            const double h = 1e-6, saved = p[i];
            p[i] = saved + h;
            double lp = loss();
            p[i] = saved - h;
            double lm = loss();
            p[i] = saved;
            double fd = (lp - lm) / (2 * h);
            diff += Sqr(fd - grad[i]);
            norm += Sqr(fd);
        }
        // A single cluster has an identically zero gradient.
        double rel = norm > 0 ? std::sqrt(diff / norm) : std::sqrt(diff);
        worst = std::max(worst, rel);
    }
    double elapsed = Seconds(start);
    return {worst < 1e-4 && elapsed < 30,
            Format("%d trials, max relative error %.2e, %.1fs", trials, worst, elapsed)};
}

// Per-pixel z-scores of a render against an exact reference, one per pixel taking
// the worst channel.
std::vector<double> PixelZScores(const RenderOutput &out, std::span<const Spectrum> ref) {
    std::vector<double> z(ref.size(), 0);
    for (size_t i = 0; i < ref.size(); ++i)
        for (int ch = 0; ch < 3; ++ch) {
            double m = out.image[i][ch], r = ref[i][ch];
            double var = std::max(0.0, out.secondMoment[i][ch] - m * m);
            double se = std::sqrt(var / out.samplesPerPixel);
            double zc = se > 0 ? (m - r) / se : (std::abs(m - r) <= 1e-12 * std::max(1.0, r) ? 0 : 1e9);
            z[i] = std::max(z[i], std::abs(zc));
        }
    return z;
}

// 4. Every strategy converges to the exact point-light sum.
Verdict Unbiasedness() {
    auto start = std::chrono::steady_clock::now();
    Scene scene(GenerateProceduralScene(OccludedWallSpec(0)));
    RenderConfig config;
    config.width = config.height = 64;
    config.crop = PixelRect{8, 48, 8, 8};
    config.spp = 100000;
    config.trainRatio = 0.15;
    std::vector<Spectrum> ref = ReferenceImage(scene, config);
    // With 64 pixels and three correlated channels a pixel leaves 3 SE with
    // probability at most 3 * 0.27% under no bias; P(Binomial(64, 0.0081) > 4) < 1e-3.
    const int kAllowedOutliers = 4;
    const double kHardLimit = 5;
    bool pass = AllPointLights(scene);
    std::string detail;
    for (Strategy s : {Strategy::Uniform, Strategy::Power, Strategy::TreeBaseline, Strategy::NeuralDirect,
                       Strategy::NeuralResidual}) {
        config.strategy = s;
        RenderOutput out = Render(scene, config);
        std::vector<double> z = PixelZScores(out, ref);
        int outliers = int(std::count_if(z.begin(), z.end(), [](double v) { return v > 3; }));
        double maxZ = *std::max_element(z.begin(), z.end());
        bool ok = outliers <= kAllowedOutliers && maxZ < kHardLimit;
        if (IsNeural(s))
            ok = ok && out.trainingSteps > 0;
        pass = pass && ok;
        detail += Format("%s %d>3SE max %.2f%s; ", ToString(s).c_str(), outliers, maxZ,
                         IsNeural(s) ? Format(" (%d steps)", out.trainingSteps).c_str() : "");
    }
    double elapsed = Seconds(start);
    pass = pass && elapsed < 300;
    return {pass, detail + Format("%.0fs", elapsed)};
}

// 5. Online training on a four-cluster toy halves the analytic KL divergence.
Verdict LearningEffectiveness() {
    const int S = 4;
    const double F[S] = {0.9, 0.35, 0.2, 0.05};
    double total = 0;
    for (double f : F)
        total += f;
    const Bounds3 bounds{{-1, -1, -1}, {1, 1, 1}};
    int halved = 0;
    std::string ratios;
    for (int seed = 0; seed < 10; ++seed) {
        NetworkConfig config;
        config.numOutputs = S;
        config.hiddenWidths = {8, 8};
        config.gridResolution = 3;
        config.gridFeatures = 2;
        NetworkState<float> state(config, bounds, seed);
        Rng rng(700 + seed);
        ShadingQuery query = RandomQuery(rng, bounds.pMin, bounds.pMax);
        auto pmf = [&] {
            std::vector<double> f(S), p(S);
            state.network.Logits(query, f);
            SoftmaxPmf(f, p);
            return p;
        };
        auto kl = [&] {
            std::vector<double> p = pmf();
            double d = 0;
            for (int c = 0; c < S; ++c)
                d += F[c] / total * std::log(F[c] / total / p[c]);
            return d;
        };
        double initial = kl();
        for (int step = 0; step < 500; ++step) {
            std::vector<double> p = pmf();
            TrainingBatch batch(S, false);
            for (int j = 0; j < 64; ++j) {
                double u = rng.Uniform(), acc = 0;
                int c = S - 1;
                for (int k = 0; k < S; ++k)
                    if (u < (acc += p[k])) {
                        c = k;
                        break;
                    }
                TrainingRecord r;
                r.query = query;
                r.cluster = c;
                r.fEstimate = F[c];
                r.pmfCluster = p[c];
                batch.Add(r);
            }
            TrainOnBatch(state, batch, 3e-2, {});
        }
        double ratio = kl() / initial;
        halved += ratio <= 0.5;
        ratios += Format("%s%.3f", seed ? "," : "", ratio);
    }
    return {halved >= 9, Format("%d/10 seeds halved KL (final/initial %s)", halved, ratios.c_str())};
}

// Shared stress-scene experiment for criteria 6 to 8.
class StressRuns {
  public:
    static constexpr int kSeeds = 5;

    double Median(Strategy s, int level) {
        std::vector<double> v;
        for (int seed = 0; seed < kSeeds; ++seed)
            v.push_back(RelMse(s, level, seed));
        return ::Median(v);
    }

    void ResetClock() { spent = 0; }
    double Spent() const { return spent; }

  private:
    double RelMse(Strategy s, int level, int seed) {
        auto key = std::make_tuple(int(s), level, seed);
        auto it = cache.find(key);
        if (it != cache.end())
            return it->second;
        auto start = std::chrono::steady_clock::now();
        RenderConfig config;
        config.width = config.height = 256;
        config.spp = 128;
        config.trainRatio = 0.15;
        config.strategy = s;
        config.clusterLevel = level;
        config.seed = seed;
        if (!scene) {
            scene = std::make_unique<Scene>(GenerateProceduralScene(OcclusionStressSpec(0)));
            reference = ReferenceImage(*scene, config);
        }
        RenderOutput out = Render(*scene, config, reference);
        spent += Seconds(start);
        return cache[key] = out.stats.back().relMse;
    }

    std::unique_ptr<Scene> scene;
    std::vector<Spectrum> reference;
    std::map<std::tuple<int, int, int>, double> cache;
    double spent = 0;
};

StressRuns &Stress() {
    static StressRuns runs;
    return runs;
}

// 6. Learned selection beats the light-tree and power baselines.
Verdict VarianceOrdering() {
    StressRuns &runs = Stress();
    runs.ResetClock();
    double nr = runs.Median(Strategy::NeuralResidual, 6);
    double tb = runs.Median(Strategy::TreeBaseline, 6);
    double pw = runs.Median(Strategy::Power, 6);
    double elapsed = runs.Spent();
    bool pass = tb / nr >= 1.3 && pw / nr >= 1.3 && elapsed < 600;
    return {pass, Format("median relMSE neural-residual %.5f, tree-baseline %.5f (%.2fx), power %.5f (%.2fx), %.0fs",
                         nr, tb, tb / nr, pw, pw / nr, elapsed)};
}

// 7. Residual prediction beats direct prediction.
Verdict ResidualVsDirect() {
    double nr = Stress().Median(Strategy::NeuralResidual, 6);
    double nd = Stress().Median(Strategy::NeuralDirect, 6);
    return {nr < nd, Format("median relMSE residual %.5f, direct %.5f", nr, nd)};
}

// 8. The default cut level is close to the best of the sweep.
Verdict ClusterLevel() {
    std::map<int, double> byLevel;
    for (int k : {4, 6, 8})
        byLevel[k] = Stress().Median(Strategy::NeuralResidual, k);
    double best = std::min({byLevel[4], byLevel[6], byLevel[8]});
    return {byLevel[6] <= 1.2 * best, Format("median relMSE k=4 %.5f, k=6 %.5f, k=8 %.5f; k=6 / best %.3f",
                                             byLevel[4], byLevel[6], byLevel[8], byLevel[6] / best)};
}

// 9. Identical CLI invocations give identical bytes.
Verdict Determinism() {
    fs::path dir = fs::temp_directory_path() / "lumisel_acceptance_determinism";
    fs::remove_all(dir);
    auto run = [&](const std::string &name) {
        std::vector<std::string> args{"lumisel", "render", "--scene", "preset:stress:2", "--width", "64",
                                      "--height", "64", "--spp", "24", "--threads", "2", "--seed", "9",
                                      "--reference", "auto", "--cache-dir", (dir / "cache").string(),
                                      "--deterministic", "--out", (dir / name).string()};
        std::vector<const char *> argv;
        for (const auto &a : args)
            argv.push_back(a.c_str());
        std::ostringstream out, err;
        return cli::RunCli(int(argv.size()), argv.data(), out, err);
    };
    if (run("a") != 0 || run("b") != 0)
        return {false, "render failed"};
    bool same = true;
    size_t bytes = 0;
    for (const char *f : {"image.pfm", "image.csv", "image.ppm"}) {
        std::string a = ReadFile((dir / "a" / f).string()), b = ReadFile((dir / "b" / f).string());
        same = same && a == b && !a.empty();
        bytes += a.size();
    }
    fs::remove_all(dir);
    return {same, Format("%zu bytes compared across PFM, CSV and PPM", bytes)};
}

// 10. Stochastic traversal frequencies against the analytic in-cluster PMF.
Verdict TreeOracle() {
    Rng rng(1001);
    const int kDraws = 100000;
    int configs = 0, failed = 0;
    double minP = 1;
    for (int n : {3, 8, 21, 64}) {
        std::vector<Light> lights = RandomLights(rng, n);
        LightTree tree = LightTree::Build(lights);
        for (int level : {0, 2}) {
            ClusterCut cut = SelectCut(tree, level);
            ShadingQuery q = RandomQuery(rng, {-3, -1, -3}, {3, 0.5, 3});
            // Test the root cluster and the largest cluster of the cut.
            std::vector<int> size(cut.Size(), 0);
            for (int c : cut.clusterOfLight)
                ++size[c];
            int c = int(std::max_element(size.begin(), size.end()) - size.begin());
            if (size[c] < 2)
                continue;
            std::vector<int> members;
            for (int y = 0; y < n; ++y)
                if (cut.clusterOfLight[y] == c)
                    members.push_back(y);
            std::vector<double> probs, obs(members.size(), 0);
            for (int y : members)
                probs.push_back(PmfInClusterOf(tree, cut, c, y, q));
            for (int i = 0; i < kDraws; ++i) {
                ClusterSample s = SampleInCluster(tree, cut, c, q, rng.Uniform());
                auto pos = std::find(members.begin(), members.end(), s.light) - members.begin();
                obs[pos] += 1;
            }
            ChiSquareResult r = ChiSquareTest(obs, probs);
            minP = std::min(minP, r.pValue);
            failed += r.pValue < 0.01;
            ++configs;
        }
    }
    return {failed == 0 && configs > 0,
            Format("%d configurations, %d rejected at 0.01, min p-value %.3f", configs, failed, minP)};
}

}  // namespace

int main(int argc, char **argv) {
    const std::vector<std::pair<const char *, std::function<Verdict()>>> criteria{
        {"pmf validity", PmfValidity},
        {"zero-residual identity", ZeroResidualIdentity},
        {"gradient correctness", GradientCorrectness},
        {"estimator unbiasedness", Unbiasedness},
        {"learning effectiveness", LearningEffectiveness},
        {"variance-reduction ordering", VarianceOrdering},
        {"residual vs direct", ResidualVsDirect},
        {"cluster level", ClusterLevel},
        {"determinism", Determinism},
        {"tree pmf oracle", TreeOracle},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i)
        selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        int id = int(i) + 1;
        if (!selected.empty() && !selected.count(id))
            continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception &e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("criterion %2d %s: %s: %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
