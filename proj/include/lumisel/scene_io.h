// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/scene.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lumisel {

// Parse errors carry "line L, column C"; field errors carry a JSON path such as
// "lights[2].emission"; validation errors name the offending element.
class SceneError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct SceneLoadOptions {
    // Ignore unknown fields instead of rejecting them.
    bool lenient = false;
};

// baseDir resolves relative sidecar buffer paths.
SceneDescription ParseSceneDescription(const std::string &text, const std::string &baseDir = ".",
                                       const SceneLoadOptions &options = {});
SceneDescription LoadSceneDescription(const std::string &path,
                                      const SceneLoadOptions &options = {});
// Parses and validates.
Scene LoadScene(const std::string &path, const SceneLoadOptions &options = {});

// Inline-array JSON document accepted by the loader.
std::string SerializeScene(const SceneDescription &desc, int indent = 1);
void SaveScene(const SceneDescription &desc, const std::string &path);

// FNV-1a over the canonical serialization; identical scenes hash identically
// regardless of how their buffers were stored.
uint64_t SceneHash(const SceneDescription &desc);
std::string SceneHashHex(const SceneDescription &desc);

}  // namespace lumisel
