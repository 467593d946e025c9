// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/integrator.h>
#include <lumisel/scene.h>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lumisel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char *kCompareCsvHeader = "mode,strategy,spp,seconds,MSE,relMSE";
inline constexpr const char *kAblateCsvHeader = "axis,value,seed,strategy,spp,seconds,MSE,relMSE";

// Entry point shared by the executable and the tests.
int RunCli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

const char *BuildId();

// "preset:NAME[:SEED]" or a scene file path.
struct LoadedScene {
    SceneDescription desc;
    std::string source;
    std::string hash;
    double loadSeconds = 0;
};
LoadedScene LoadSceneArg(const std::string &arg, bool lenient);

// "x,y,w,h"; throws std::invalid_argument.
PixelRect ParseCrop(const std::string &text);

// Cached reference for the region of config, keyed by scene hash and region. The
// stored float32 image is what callers receive, so cached and fresh runs agree.
std::vector<Spectrum> CachedReference(const Scene &scene, const std::string &sceneHash,
                                      const RenderConfig &config, const std::string &cacheDir,
                                      std::string *path = nullptr);

// One CSV validator per schema; all throw std::runtime_error naming the line.
void ValidateCompareCsv(const std::string &contents);
void ValidateAblateCsv(const std::string &contents);

}  // namespace lumisel::cli
