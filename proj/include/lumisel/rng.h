// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace lumisel {

inline uint64_t MixBits(uint64_t v) {
    v ^= (v >> 31);
    v *= 0x7fb5d329728ea185ULL;
    v ^= (v >> 27);
    v *= 0x81dadef4bc2dd44dULL;
    v ^= (v >> 33);
    return v;
}

inline uint64_t HashCombine(uint64_t seed, uint64_t v) {
    return MixBits(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

// PCG32 (O'Neill); small state so one generator per pixel per wave is cheap.
class Rng {
  public:
    Rng() { SetSequence(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL); }
    Rng(uint64_t seqIndex, uint64_t offset) { SetSequence(seqIndex, offset); }
    explicit Rng(uint64_t seqIndex) { SetSequence(seqIndex, MixBits(seqIndex)); }

    void SetSequence(uint64_t seqIndex, uint64_t offset) {
        state = 0u;
        inc = (seqIndex << 1u) | 1u;
        Next32();
        state += offset;
        Next32();
    }

    uint32_t Next32() {
        uint64_t old = state;
        state = old * 0x5851f42d4c957f2dULL + inc;
        auto xorshifted = uint32_t(((old >> 18u) ^ old) >> 27u);
        auto rot = uint32_t(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31));
    }

    // Uniform double in [0, 1) with 53 random bits.
    double Uniform() {
        uint64_t hi = Next32() >> 5, lo = Next32() >> 6;
        return double(hi * 67108864ULL + lo) * 0x1.0p-53;
    }

  private:
    uint64_t state = 0, inc = 0;
};

// Deterministic per-(seed, pixel, wave) stream, independent of tiling and threads.
inline Rng PixelRng(uint64_t seed, uint64_t pixelIndex, uint64_t wave) {
    uint64_t h = HashCombine(HashCombine(MixBits(seed + 1), pixelIndex), wave);
    return Rng(h, MixBits(h ^ 0x2545f4914f6cdd1dULL));
}

}  // namespace lumisel
