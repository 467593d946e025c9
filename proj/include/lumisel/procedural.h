// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/scene.h>

#include <cstdint>
#include <string>

namespace lumisel {

// Floor with a grid of point lights above it. With occludeHalf, the lights with
// x < 0 sit inside an opaque tray that hides them from everything below the
// lights. Random low walls on the floor make visibility vary between nearby
// shading points.
struct ProceduralSpec {
    int lightsX = 32;
    int lightsZ = 16;
    double lightSpanX = 8;
    double lightSpanZ = 4;
    double lightHeight = 1.5;
    double intensity = 0.1;
    // Intensities are scaled by a random factor in [1 - jitter, 1 + jitter].
    double intensityJitter = 0.5;
    bool occludeHalf = true;
    double occludedScale = 1;
    // Scale of one visible light near the middle; 1 disables it.
    double dominantScale = 20;
    int walls = 12;
    // A wall across the floor at x = 0 of this height; 0 disables it.
    double centralWallHeight = 0;
    double floorSize = 12;
    uint64_t seed = 0;
    Camera camera{{0, 1.3, 6.5}, {0, 0, -0.5}, {0, 1, 0}, 60};
};

// 512 lights, half of them occluded, one dominant visible light.
ProceduralSpec OcclusionStressSpec(uint64_t seed = 0);
// 16 lights and one occluding wall, viewed up close.
ProceduralSpec OccludedWallSpec(uint64_t seed = 0);

SceneDescription GenerateProceduralScene(const ProceduralSpec &spec);

// Looks up a named preset ("stress" or "wall"); throws std::invalid_argument.
ProceduralSpec PresetSpec(const std::string &name, uint64_t seed);

}  // namespace lumisel
