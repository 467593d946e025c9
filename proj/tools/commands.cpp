// SPDX-License-Identifier: Apache-2.0

#include "commands.h"

#include <lumisel/image.h>
#include <lumisel/procedural.h>
#include <lumisel/scene_io.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#ifndef LUMISEL_BUILD_ID
#define LUMISEL_BUILD_ID "unknown"
#endif

namespace lumisel::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

const char *BuildId() { return LUMISEL_BUILD_ID; }

namespace {

constexpr int kCompareCsvVersion = 1;
constexpr int kAblateCsvVersion = 1;
constexpr int kManifestVersion = 1;
constexpr int kDefaultTimedSppCap = 1 << 20;

Scene BuildScene(const LoadedScene &loaded) {
    try {
        return Scene(loaded.desc);
    } catch (const std::invalid_argument &e) {
        throw SceneError(loaded.source + ": validation error: " + e.what());
    }
}

double Seconds(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string FormatNumber(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string UtcNow() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<std::string> SplitList(const std::string &text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            items.push_back(item);
    return items;
}

InputMode ParseInputMode(const std::string &name) {
    if (name == "continuous")
        return InputMode::Continuous;
    if (name == "discrete")
        return InputMode::Discrete;
    throw std::invalid_argument("unknown input mode '" + name + "'");
}

std::string ToString(InputMode mode) {
    return mode == InputMode::Discrete ? "discrete" : "continuous";
}

// Options shared by render, compare and ablate.
struct CommonArgs {
    std::string scene;
    bool lenient = false;
    std::string strategy = "neural-residual";
    std::optional<int> spp;
    std::optional<double> timeBudget;
    double trainRatio = 0.15;
    int clusterLevel = 6;
    double lr = 3e-2;
    uint64_t seed = 0;
    std::string out;
    std::string reference;
    std::string cacheDir = "lumisel-cache";
    std::string importance = "geo-cos";
    bool noWeightClamp = false;
    bool discardTrainingWaves = false;
    int width = 256;
    int height = 256;
    std::string crop;
    int threads = 0;
    std::string inputMode = "continuous";
    bool deterministic = false;
};

void AddSceneOptions(CLI::App *cmd, CommonArgs &a) {
    cmd->add_option("--scene", a.scene, "Scene file or preset:NAME[:SEED] (stress, wall)")->required();
    cmd->add_flag("--lenient", a.lenient, "Ignore unknown scene fields");
}

void AddRenderOptions(CLI::App *cmd, CommonArgs &a, bool withStrategy) {
    AddSceneOptions(cmd, a);
    if (withStrategy)
        cmd->add_option("--strategy", a.strategy, "Light selection strategy")
            ->check(CLI::IsMember({"uniform", "power", "tree-baseline", "neural-direct", "neural-residual"}));
    cmd->add_option("--spp", a.spp, "Samples per pixel (a cap when a time budget is set)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--time-budget", a.timeBudget, "Render time budget in seconds")->check(CLI::PositiveNumber);
    cmd->add_option("--train-ratio", a.trainRatio, "Fraction of waves or time spent training")
        ->check(CLI::Range(0.0, 0.999999));
    cmd->add_option("--cluster-level", a.clusterLevel, "Depth k of the cluster cut")->check(CLI::NonNegativeNumber);
    cmd->add_option("--lr", a.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", a.seed, "Seed for all randomness");
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--reference", a.reference, "Reference PFM, or 'auto' for a cached reference");
    cmd->add_option("--cache-dir", a.cacheDir, "Directory for cached references");
    cmd->add_option("--importance", a.importance, "Traversal importance")
        ->check(CLI::IsMember({"power", "geo", "geo-cos"}));
    cmd->add_flag("--no-weight-clamp", a.noWeightClamp, "Disable the importance-weight clamp");
    cmd->add_flag("--discard-training-waves", a.discardTrainingWaves,
                  "Exclude training-phase samples from the image");
    cmd->add_option("--width", a.width, "Image width")->check(CLI::PositiveNumber);
    cmd->add_option("--height", a.height, "Image height")->check(CLI::PositiveNumber);
    cmd->add_option("--crop", a.crop, "Render only x,y,w,h");
    cmd->add_option("--threads", a.threads, "Worker threads (0: LUMISEL_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--input-mode", a.inputMode, "Network inputs")->check(CLI::IsMember({"continuous", "discrete"}));
    cmd->add_flag("--deterministic", a.deterministic, "Write 0 for every time column");
}

RenderConfig MakeConfig(const CommonArgs &a) {
    RenderConfig c;
    c.width = a.width;
    c.height = a.height;
    if (!a.crop.empty())
        c.crop = ParseCrop(a.crop);
    c.timeBudget = a.timeBudget;
    c.spp = a.spp ? *a.spp : (a.timeBudget ? kDefaultTimedSppCap : 128);
    c.strategy = ParseStrategy(a.strategy);
    c.trainRatio = a.trainRatio;
    c.clusterLevel = a.clusterLevel;
    c.lr = a.lr;
    c.seed = a.seed;
    c.importance = ParseImportanceMode(a.importance);
    c.weightClamp = !a.noWeightClamp;
    c.discardTrainingWaves = a.discardTrainingWaves;
    c.inputMode = ParseInputMode(a.inputMode);
    c.threads = a.threads;
    c.Validate();
    return c;
}

json ConfigJson(const RenderConfig &c) {
    json j;
    j["width"] = c.width;
    j["height"] = c.height;
    if (c.crop)
        j["crop"] = {c.crop->x, c.crop->y, c.crop->width, c.crop->height};
    else
        j["crop"] = nullptr;
    j["spp"] = c.spp;
    j["strategy"] = ToString(c.strategy);
    j["train_ratio"] = c.trainRatio;
    j["cluster_level"] = c.clusterLevel;
    j["lr"] = c.lr;
    j["seed"] = c.seed;
    j["time_budget"] = c.timeBudget ? json(*c.timeBudget) : json(nullptr);
    j["importance"] = ToString(c.importance);
    j["weight_clamp"] = c.weightClamp;
    j["discard_training_waves"] = c.discardTrainingWaves;
    j["input_mode"] = ToString(c.inputMode);
    j["threads"] = ResolveThreadCount(c.threads);
    j["batch_size"] = c.batchSize;
    return j;
}

struct Manifest {
    json doc;
    Clock::time_point start = Clock::now();

    Manifest(const std::string &command, int argc, const char *const *argv) {
        doc["format"] = "lumisel-manifest";
        doc["version"] = kManifestVersion;
        doc["command"] = command;
        json args = json::array();
        for (int i = 0; i < argc; ++i)
            args.push_back(argv[i]);
        doc["argv"] = args;
        doc["build_id"] = BuildId();
        doc["started_at"] = UtcNow();
        doc["outputs"] = json::array();
    }

    void Scene(const LoadedScene &s) {
        doc["scene"] = {{"source", s.source}, {"hash", s.hash}};
        doc["timing"]["scene_load_seconds"] = s.loadSeconds;
    }

    void Output(const std::string &path) { doc["outputs"].push_back(fs::path(path).filename().string()); }

    void Write(const std::string &path) {
        doc["timing"]["wall_clock_seconds"] = Seconds(start);
        WriteFileAtomic(path, doc.dump(2) + "\n");
    }
};

struct Reference {
    std::vector<Spectrum> pixels;
    json info;
};

// Resolves --reference: empty (none), "auto" (cache), or a PFM path.
Reference ResolveReference(const CommonArgs &a, bool required, const Scene &scene,
                           const LoadedScene &loaded, const RenderConfig &config) {
    Reference ref;
    std::string mode = a.reference.empty() && required ? "auto" : a.reference;
    if (mode.empty())
        return ref;
    PixelRect region = config.Region();
    if (mode == "auto") {
        std::string path;
        ref.pixels = CachedReference(scene, loaded.hash, config, a.cacheDir, &path);
        ref.info = {{"source", "cache"}, {"path", path}, {"exact", AllPointLights(scene)}};
        return ref;
    }
    Image img = ReadPfm(mode);
    if (img.width != region.width || img.height != region.height)
        throw std::runtime_error("reference " + mode + " is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", expected " +
                                 std::to_string(region.width) + "x" + std::to_string(region.height));
    ref.pixels = std::move(img.pixels);
    ref.info = {{"source", "file"}, {"path", mode}};
    return ref;
}

// Writes <dir>/<stem>.pfm, .ppm and .csv and records them in the manifest.
void WriteRunOutputs(const std::string &dir, const std::string &stem, const RenderOutput &out,
                     const std::string &strategy, bool deterministic, Manifest &manifest,
                     bool withPpm = true) {
    std::string base = (fs::path(dir) / stem).string();
    WritePfm(base + ".pfm", out.width, out.height, out.image);
    manifest.Output(base + ".pfm");
    if (withPpm) {
        WritePpm(base + ".ppm", out.width, out.height, out.image);
        manifest.Output(base + ".ppm");
    }
    WriteStatsCsv(base + ".csv", out.stats, strategy, deterministic);
    manifest.Output(base + ".csv");
}

json RunJson(const RenderOutput &out) {
    json j;
    j["spp"] = out.samplesPerPixel;
    j["waves"] = out.waves;
    j["training_waves"] = out.trainingWaves;
    j["training_steps"] = out.trainingSteps;
    j["clusters"] = out.numClusters;
    j["tree_build_seconds"] = out.treeBuildSeconds;
    j["render_seconds"] = out.renderSeconds;
    if (!out.stats.empty() && out.stats.back().hasMetrics) {
        j["mse"] = out.stats.back().mse;
        j["relmse"] = out.stats.back().relMse;
    }
    return j;
}

std::string MetricRow(const RenderOutput &out, bool deterministic) {
    const WaveStats &last = out.stats.back();
    return std::to_string(out.samplesPerPixel) + "," +
           (deterministic ? std::string("0") : FormatNumber(out.renderSeconds)) + "," +
           FormatNumber(last.mse) + "," + FormatNumber(last.relMse);
}

int CmdRender(const CommonArgs &a, const std::string &dumpTree, int argc, const char *const *argv,
              std::ostream &out) {
    Manifest manifest("render", argc, argv);
    RenderConfig config = MakeConfig(a);
    LoadedScene loaded = LoadSceneArg(a.scene, a.lenient);
    Scene scene = BuildScene(loaded);
    manifest.Scene(loaded);
    fs::create_directories(a.out);
    Reference ref = ResolveReference(a, false, scene, loaded, config);
    if (!dumpTree.empty()) {
        LightTree tree = LightTree::Build(scene.Lights(), config.importance);
        WriteFileAtomic(dumpTree, tree.ToJson() + "\n");
        manifest.Output(dumpTree);
    }
    RenderOutput result = Render(scene, config, ref.pixels);
    WriteRunOutputs(a.out, "image", result, a.strategy, a.deterministic, manifest);
    manifest.doc["config"] = ConfigJson(config);
    manifest.doc["reference"] = ref.info.is_null() ? json(nullptr) : ref.info;
    manifest.doc["run"] = RunJson(result);
    manifest.doc["timing"]["tree_build_seconds"] = result.treeBuildSeconds;
    manifest.doc["timing"]["render_seconds"] = result.renderSeconds;
    manifest.Write((fs::path(a.out) / "manifest.json").string());
    out << "rendered " << result.width << "x" << result.height << " at " << result.samplesPerPixel
        << " spp in " << result.renderSeconds << " s";
    if (!result.stats.empty() && result.stats.back().hasMetrics)
        out << ", relMSE " << result.stats.back().relMse;
    out << "\n";
    return kExitOk;
}

int CmdCompare(const CommonArgs &a, const std::string &strategies, const std::string &mode,
               int argc, const char *const *argv, std::ostream &out) {
    Manifest manifest("compare", argc, argv);
    std::vector<std::string> names = SplitList(strategies);
    if (names.empty())
        throw std::invalid_argument("no strategies given");
    for (const std::string &n : names)
        ParseStrategy(n);
    std::vector<std::string> modes;
    if (mode == "equal-spp" || mode == "both")
        modes.push_back("equal-spp");
    if (mode == "equal-time" || mode == "both")
        modes.push_back("equal-time");
    if (!a.timeBudget && modes.back() == "equal-time")
        throw std::invalid_argument("equal-time comparison needs --time-budget");

    LoadedScene loaded = LoadSceneArg(a.scene, a.lenient);
    Scene scene = BuildScene(loaded);
    manifest.Scene(loaded);
    fs::create_directories(a.out);

    CommonArgs base = a;
    base.strategy = names.front();
    RenderConfig probe = MakeConfig(base);
    Reference ref = ResolveReference(a, true, scene, loaded, probe);

    std::string csv = "# lumisel-compare v" + std::to_string(kCompareCsvVersion) + "\n" +
                      kCompareCsvHeader + "\n";
    json runs = json::array();
    for (const std::string &m : modes) {
        for (const std::string &name : names) {
            CommonArgs run = a;
            run.strategy = name;
            if (m == "equal-spp")
                run.timeBudget.reset();
            else if (!a.spp)
                run.spp.reset();
            RenderConfig config = MakeConfig(run);
            RenderOutput result = Render(scene, config, ref.pixels);
            WriteRunOutputs(a.out, m + "-" + name, result, name, a.deterministic, manifest, false);
            csv += m + "," + name + "," + MetricRow(result, a.deterministic) + "\n";
            json r = RunJson(result);
            r["mode"] = m;
            r["config"] = ConfigJson(config);
            runs.push_back(r);
            out << m << " " << name << ": " << result.samplesPerPixel << " spp, relMSE "
                << result.stats.back().relMse << "\n";
        }
    }
    std::string csvPath = (fs::path(a.out) / "compare.csv").string();
    WriteFileAtomic(csvPath, csv);
    manifest.Output(csvPath);
    manifest.doc["reference"] = ref.info;
    manifest.doc["runs"] = runs;
    manifest.Write((fs::path(a.out) / "manifest.json").string());
    return kExitOk;
}

struct AblationPoint {
    std::string value;
    CommonArgs args;
};

std::vector<AblationPoint> AblationPoints(const std::string &axis, const CommonArgs &a,
                                          const std::string &values) {
    std::vector<std::string> items = SplitList(values);
    auto defaults = [&](std::vector<std::string> d) {
        if (items.empty())
            items = std::move(d);
    };
    std::vector<AblationPoint> points;
    if (axis == "residual") {
        defaults({"residual", "direct"});
        for (const std::string &v : items) {
            if (v != "residual" && v != "direct")
                throw std::invalid_argument("residual axis takes residual or direct, not '" + v + "'");
            CommonArgs p = a;
            p.strategy = v == "residual" ? "neural-residual" : "neural-direct";
            points.push_back({v, p});
        }
        return points;
    }
    if (!IsNeural(ParseStrategy(a.strategy)))
        throw std::invalid_argument("ablations need a neural strategy");
    if (axis == "cluster-level")
        defaults({"4", "6", "8"});
    else if (axis == "inputs")
        defaults({"continuous", "discrete"});
    else if (axis == "train-ratio")
        defaults({"0.05", "0.1", "0.15", "0.25", "0.5"});
    else if (axis == "lr")
        defaults({"3e-2", "3e-3"});
    else
        throw std::invalid_argument("unknown ablation axis '" + axis + "'");
    for (const std::string &v : items) {
        CommonArgs p = a;
        size_t used = 0;
        try {
            if (axis == "cluster-level") {
                p.clusterLevel = std::stoi(v, &used);
            } else if (axis == "inputs") {
                ParseInputMode(v);
                p.inputMode = v;
                used = v.size();
            } else if (axis == "train-ratio") {
                p.trainRatio = std::stod(v, &used);
            } else {
                p.lr = std::stod(v, &used);
            }
        } catch (const std::logic_error &) {
            used = 0;
        }
        if (used != v.size())
            throw std::invalid_argument("invalid value '" + v + "' for axis " + axis);
        points.push_back({v, p});
    }
    return points;
}

int CmdAblate(const CommonArgs &a, const std::string &axis, const std::string &values, int seeds,
              int argc, const char *const *argv, std::ostream &out) {
    Manifest manifest("ablate", argc, argv);
    std::vector<AblationPoint> points = AblationPoints(axis, a, values);
    for (const AblationPoint &p : points)
        MakeConfig(p.args);
    LoadedScene loaded = LoadSceneArg(a.scene, a.lenient);
    Scene scene = BuildScene(loaded);
    manifest.Scene(loaded);
    fs::create_directories(a.out);
    Reference ref = ResolveReference(a, true, scene, loaded, MakeConfig(points.front().args));

    std::string csv = "# lumisel-ablate v" + std::to_string(kAblateCsvVersion) + "\n" +
                      kAblateCsvHeader + "\n";
    json runs = json::array();
    for (int s = 0; s < seeds; ++s) {
        for (const AblationPoint &p : points) {
            CommonArgs run = p.args;
            run.seed = a.seed + uint64_t(s);
            RenderConfig config = MakeConfig(run);
            RenderOutput result = Render(scene, config, ref.pixels);
            std::string stem = axis + "-" + p.value + "-seed" + std::to_string(run.seed);
            WriteRunOutputs(a.out, stem, result, run.strategy, a.deterministic, manifest, false);
            csv += axis + "," + p.value + "," + std::to_string(run.seed) + "," + run.strategy + "," +
                   MetricRow(result, a.deterministic) + "\n";
            json r = RunJson(result);
            r["value"] = p.value;
            r["config"] = ConfigJson(config);
            runs.push_back(r);
            out << axis << "=" << p.value << " seed " << run.seed << ": relMSE "
                << result.stats.back().relMse << "\n";
        }
    }
    std::string csvPath = (fs::path(a.out) / "ablate.csv").string();
    WriteFileAtomic(csvPath, csv);
    manifest.Output(csvPath);
    manifest.doc["axis"] = axis;
    manifest.doc["reference"] = ref.info;
    manifest.doc["runs"] = runs;
    manifest.Write((fs::path(a.out) / "manifest.json").string());
    return kExitOk;
}

struct GenArgs {
    std::string preset;
    uint64_t seed = 0;
    std::string out;
    std::optional<double> occludedScale;
    std::optional<double> dominantScale;
    std::optional<int> walls;
};

int CmdGenScene(const GenArgs &g, int argc, const char *const *argv, std::ostream &out) {
    Manifest manifest("gen-scene", argc, argv);
    ProceduralSpec spec = PresetSpec(g.preset, g.seed);
    if (g.occludedScale)
        spec.occludedScale = *g.occludedScale;
    if (g.dominantScale)
        spec.dominantScale = *g.dominantScale;
    if (g.walls)
        spec.walls = *g.walls;
    SceneDescription desc = GenerateProceduralScene(spec);
    Scene validated(desc);
    fs::path path(g.out);
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    SaveScene(desc, path.string());
    manifest.Output(path.string());
    manifest.doc["scene"] = {{"source", "preset:" + g.preset + ":" + std::to_string(g.seed)},
                             {"hash", SceneHashHex(desc)}};
    manifest.doc["generator"] = {{"preset", g.preset},
                                 {"seed", g.seed},
                                 {"lights", desc.lights.size()},
                                 {"occluded_scale", spec.occludedScale},
                                 {"dominant_scale", spec.dominantScale},
                                 {"walls", spec.walls}};
    fs::path manifestPath = path;
    manifestPath.replace_extension(".manifest.json");
    manifest.Write(manifestPath.string());
    out << "wrote " << path.string() << " (" << desc.lights.size() << " lights, hash "
        << SceneHashHex(desc) << ")\n";
    return kExitOk;
}

void ValidateTable(const std::string &contents, const std::string &versionLine, const std::string &header,
                   const std::function<void(const std::vector<std::string> &, const std::function<void(const std::string &)> &)> &row) {
    std::istringstream in(contents);
    std::string line;
    int lineNo = 1;
    auto fail = [&](const std::string &what) {
        throw std::runtime_error("CSV line " + std::to_string(lineNo) + ": " + what);
    };
    if (!std::getline(in, line) || line != versionLine)
        fail("missing or unsupported version line");
    ++lineNo;
    if (!std::getline(in, line) || line != header)
        fail("unexpected header");
    size_t columns = std::count(header.begin(), header.end(), ',') + 1;
    int rows = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ','))
            fields.push_back(f);
        if (!line.empty() && line.back() == ',')
            fields.push_back("");
        if (fields.size() != columns)
            fail("expected " + std::to_string(columns) + " columns");
        row(fields, fail);
        ++rows;
    }
    if (rows == 0)
        fail("no rows");
}

void CheckNumber(const std::string &s, const std::function<void(const std::string &)> &fail,
                 bool integer) {
    char *end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v) || v < 0 ||
        (integer && v != std::floor(v)))
        fail("invalid number '" + s + "'");
}

void CheckStrategy(const std::string &s, const std::function<void(const std::string &)> &fail) {
    try {
        ParseStrategy(s);
    } catch (const std::invalid_argument &) {
        fail("unknown strategy '" + s + "'");
    }
}

}  // namespace

LoadedScene LoadSceneArg(const std::string &arg, bool lenient) {
    auto start = Clock::now();
    LoadedScene s;
    s.source = arg;
    const std::string prefix = "preset:";
    if (arg.rfind(prefix, 0) == 0) {
        std::string rest = arg.substr(prefix.size());
        uint64_t seed = 0;
        size_t colon = rest.find(':');
        if (colon != std::string::npos) {
            std::string seedText = rest.substr(colon + 1);
            size_t used = 0;
            try {
                seed = std::stoull(seedText, &used);
            } catch (const std::logic_error &) {
                used = 0;
            }
            if (seedText.empty() || used != seedText.size())
                throw std::invalid_argument("invalid preset seed in '" + arg + "'");
            rest = rest.substr(0, colon);
        }
        s.desc = GenerateProceduralScene(PresetSpec(rest, seed));
    } else {
        SceneLoadOptions options;
        options.lenient = lenient;
        s.desc = LoadSceneDescription(arg, options);
    }
    s.hash = SceneHashHex(s.desc);
    s.loadSeconds = Seconds(start);
    return s;
}

PixelRect ParseCrop(const std::string &text) {
    std::vector<std::string> parts = SplitList(text);
    if (parts.size() != 4)
        throw std::invalid_argument("crop must be x,y,w,h");
    int v[4];
    for (int i = 0; i < 4; ++i) {
        size_t used = 0;
        try {
            v[i] = std::stoi(parts[i], &used);
        } catch (const std::logic_error &) {
            used = 0;
        }
        if (used != parts[i].size())
            throw std::invalid_argument("crop must be x,y,w,h");
    }
    return {v[0], v[1], v[2], v[3]};
}

std::vector<Spectrum> CachedReference(const Scene &scene, const std::string &sceneHash,
                                      const RenderConfig &config, const std::string &cacheDir,
                                      std::string *path) {
    PixelRect r = config.Region();
    char name[160];
    std::snprintf(name, sizeof(name), "ref-%s-%dx%d-%d_%d_%d_%d.pfm", sceneHash.c_str(), config.width,
                  config.height, r.x, r.y, r.width, r.height);
    fs::path file = fs::path(cacheDir) / name;
    if (path)
        *path = file.string();
    if (fs::exists(file)) {
        Image img = ReadPfm(file.string());
        if (img.width == r.width && img.height == r.height)
            return img.pixels;
    }
    RenderConfig refConfig = config;
    refConfig.seed = HashCombine(config.seed, 0x726566);
    std::vector<Spectrum> ref = ReferenceImage(scene, refConfig);
    fs::create_directories(cacheDir);
    WritePfm(file.string(), r.width, r.height, ref);
    return ReadPfm(file.string()).pixels;
}

void ValidateCompareCsv(const std::string &contents) {
    ValidateTable(contents, "# lumisel-compare v" + std::to_string(kCompareCsvVersion), kCompareCsvHeader,
                  [](const std::vector<std::string> &f, const std::function<void(const std::string &)> &fail) {
                      if (f[0] != "equal-spp" && f[0] != "equal-time")
                          fail("unknown mode '" + f[0] + "'");
                      CheckStrategy(f[1], fail);
                      CheckNumber(f[2], fail, true);
                      for (int i = 3; i < 6; ++i)
                          CheckNumber(f[i], fail, false);
                  });
}

void ValidateAblateCsv(const std::string &contents) {
    ValidateTable(contents, "# lumisel-ablate v" + std::to_string(kAblateCsvVersion), kAblateCsvHeader,
                  [](const std::vector<std::string> &f, const std::function<void(const std::string &)> &fail) {
                      static const std::vector<std::string> axes{"residual", "cluster-level", "inputs",
                                                                 "train-ratio", "lr"};
                      if (std::find(axes.begin(), axes.end(), f[0]) == axes.end())
                          fail("unknown axis '" + f[0] + "'");
                      if (f[1].empty())
                          fail("missing value");
                      CheckNumber(f[2], fail, true);
                      CheckStrategy(f[3], fail);
                      CheckNumber(f[4], fail, true);
                      for (int i = 5; i < 8; ++i)
                          CheckNumber(f[i], fail, false);
                  });
}

int RunCli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Neural many-light sampling renderer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("lumisel ") + BuildId());

    CommonArgs renderArgs;
    std::string dumpTree;
    CLI::App *render = app.add_subcommand("render", "Render one scene with one strategy");
    AddRenderOptions(render, renderArgs, true);
    render->add_option("--dump-light-tree", dumpTree, "Write the light tree as JSON");

    CommonArgs compareArgs;
    std::string strategies = "uniform,power,tree-baseline,neural-residual";
    std::string mode = "equal-spp";
    CLI::App *compare = app.add_subcommand("compare", "Run a strategy matrix against a reference");
    AddRenderOptions(compare, compareArgs, false);
    compare->add_option("--strategies", strategies, "Comma-separated strategies");
    compare->add_option("--mode", mode, "Budget")->check(CLI::IsMember({"equal-spp", "equal-time", "both"}));

    CommonArgs ablateArgs;
    std::string axis, values;
    int seeds = 1;
    CLI::App *ablate = app.add_subcommand("ablate", "Sweep one design axis");
    AddRenderOptions(ablate, ablateArgs, true);
    ablate->add_option("--axis", axis, "residual, cluster-level, inputs, train-ratio or lr")
        ->required()
        ->check(CLI::IsMember({"residual", "cluster-level", "inputs", "train-ratio", "lr"}));
    ablate->add_option("--values", values, "Comma-separated values (default: the standard grid)");
    ablate->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

    GenArgs gen;
    CLI::App *genScene = app.add_subcommand("gen-scene", "Write a procedural scene file");
    genScene->add_option("--preset", gen.preset, "stress or wall")->required()->check(CLI::IsMember({"stress", "wall"}));
    genScene->add_option("--seed", gen.seed, "Generator seed");
    genScene->add_option("--out", gen.out, "Scene file to write")->required();
    genScene->add_option("--occluded-scale", gen.occludedScale, "Emission scale of occluded lights")
        ->check(CLI::NonNegativeNumber);
    genScene->add_option("--dominant-scale", gen.dominantScale, "Emission scale of the dominant light")
        ->check(CLI::PositiveNumber);
    genScene->add_option("--walls", gen.walls, "Number of random low walls")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (render->parsed())
            return CmdRender(renderArgs, dumpTree, argc, argv, out);
        if (compare->parsed())
            return CmdCompare(compareArgs, strategies, mode, argc, argv, out);
        if (ablate->parsed())
            return CmdAblate(ablateArgs, axis, values, seeds, argc, argv, out);
        if (genScene->parsed())
            return CmdGenScene(gen, argc, argv, out);
    } catch (const std::invalid_argument &e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace lumisel::cli
