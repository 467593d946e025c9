// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/integrator.h>
#include <lumisel/spectrum.h>

#include <span>
#include <string>
#include <vector>

namespace lumisel {

struct Image {
    int width = 0, height = 0;
    std::vector<Spectrum> pixels;  // row 0 is the top row
};

// Color PFM, little-endian float32, rows stored bottom to top.
void WritePfm(const std::string &path, int width, int height, std::span<const Spectrum> pixels);
Image ReadPfm(const std::string &path);

// 8-bit binary PPM after clamping to [0, 1] and applying the sRGB transfer curve.
void WritePpm(const std::string &path, int width, int height, std::span<const Spectrum> pixels);
double SrgbEncode(double linear);

inline constexpr int kStatsCsvVersion = 1;
inline constexpr const char *kStatsCsvHeader = "wave,spp,seconds,MSE,relMSE,strategy";

// Stats CSV: a "# lumisel-stats v1" line, the header, then one row per wave. MSE
// and relMSE are empty without a reference. With zeroTimes the seconds column is 0
// so that files are reproducible byte for byte.
std::string FormatStatsCsv(std::span<const WaveStats> stats, const std::string &strategy,
                           bool zeroTimes);
void WriteStatsCsv(const std::string &path, std::span<const WaveStats> stats,
                   const std::string &strategy, bool zeroTimes);

// Checks the version line, header, column count and numeric fields; throws
// std::runtime_error with the offending line number.
void ValidateStatsCsv(const std::string &contents);

// Writes contents to path via a temporary file and rename.
void WriteFileAtomic(const std::string &path, const std::string &contents);
std::string ReadFile(const std::string &path);

}  // namespace lumisel
