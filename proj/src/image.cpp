// SPDX-License-Identifier: Apache-2.0

#include <lumisel/image.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lumisel {

void WriteFileAtomic(const std::string &path, const std::string &contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write " + path);
        out.write(contents.data(), std::streamsize(contents.size()));
        if (!out)
            throw std::runtime_error("cannot write " + path);
    }
    std::filesystem::rename(tmp, path);
}

std::string ReadFile(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

void PutFloat(std::string &out, float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    for (int i = 0; i < 4; ++i)
        out.push_back(char((bits >> (8 * i)) & 0xff));
}

float GetFloat(const char *p, bool littleEndian) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        int shift = littleEndian ? 8 * i : 8 * (3 - i);
        bits |= uint32_t(uint8_t(p[i])) << shift;
    }
    return std::bit_cast<float>(bits);
}

}  // namespace

void WritePfm(const std::string &path, int width, int height, std::span<const Spectrum> pixels) {
    if (pixels.size() != size_t(width) * height)
        throw std::invalid_argument("pixel count does not match image size");
    std::string out = "PF\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
    out.reserve(out.size() + pixels.size() * 12);
    for (int y = height - 1; y >= 0; --y)
        for (int x = 0; x < width; ++x) {
            const Spectrum &s = pixels[size_t(y) * width + x];
            PutFloat(out, float(s.r));
            PutFloat(out, float(s.g));
            PutFloat(out, float(s.b));
        }
    WriteFileAtomic(path, out);
}

Image ReadPfm(const std::string &path) {
    std::string data = ReadFile(path);
    std::istringstream header(data);
    std::string magic;
    double scale = 0;
    Image img;
    header >> magic >> img.width >> img.height >> scale;
    if (magic != "PF" || !header || img.width <= 0 || img.height <= 0 || scale == 0)
        throw std::runtime_error("not a color PFM file: " + path);
    size_t offset = size_t(header.tellg()) + 1;
    size_t count = size_t(img.width) * img.height;
    if (data.size() < offset + count * 12)
        throw std::runtime_error("truncated PFM file: " + path);
    bool little = scale < 0;
    img.pixels.resize(count);
    const char *p = data.data() + offset;
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x, p += 12)
            img.pixels[size_t(y) * img.width + x] =
                Spectrum(GetFloat(p, little), GetFloat(p + 4, little), GetFloat(p + 8, little));
    return img;
}

double SrgbEncode(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1 / 2.4) - 0.055;
}

void WritePpm(const std::string &path, int width, int height, std::span<const Spectrum> pixels) {
    if (pixels.size() != size_t(width) * height)
        throw std::invalid_argument("pixel count does not match image size");
    std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (const Spectrum &s : pixels)
        for (int c = 0; c < 3; ++c)
            out.push_back(char(uint8_t(std::lround(255 * SrgbEncode(s[c])))));
    WriteFileAtomic(path, out);
}

namespace {

std::string FormatNumber(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string FormatStatsCsv(std::span<const WaveStats> stats, const std::string &strategy,
                           bool zeroTimes) {
    std::string out = "# lumisel-stats v" + std::to_string(kStatsCsvVersion) + "\n";
    out += kStatsCsvHeader;
    out += "\n";
    for (const WaveStats &s : stats) {
        out += std::to_string(s.wave) + "," + std::to_string(s.spp) + ",";
        out += zeroTimes ? "0" : FormatNumber(s.seconds);
        out += ",";
        if (s.hasMetrics)
            out += FormatNumber(s.mse) + "," + FormatNumber(s.relMse);
        else
            out += ",";
        out += "," + strategy + "\n";
    }
    return out;
}

void WriteStatsCsv(const std::string &path, std::span<const WaveStats> stats,
                   const std::string &strategy, bool zeroTimes) {
    WriteFileAtomic(path, FormatStatsCsv(stats, strategy, zeroTimes));
}

void ValidateStatsCsv(const std::string &contents) {
    std::istringstream in(contents);
    std::string line;
    int lineNo = 0;
    auto fail = [&](const std::string &what) {
        throw std::runtime_error("stats CSV line " + std::to_string(lineNo) + ": " + what);
    };
    ++lineNo;
    if (!std::getline(in, line) || line != "# lumisel-stats v" + std::to_string(kStatsCsvVersion))
        fail("missing or unsupported version line");
    ++lineNo;
    if (!std::getline(in, line) || line != kStatsCsvHeader)
        fail("unexpected header");
    int lastSpp = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ','))
            fields.push_back(f);
        if (!line.empty() && line.back() == ',')
            fields.push_back("");
        if (fields.size() != 6)
            fail("expected 6 columns");
        auto number = [&](const std::string &s, bool optional) {
            if (s.empty()) {
                if (!optional)
                    fail("missing value");
                return;
            }
            char *end = nullptr;
            double v = std::strtod(s.c_str(), &end);
            if (end != s.c_str() + s.size() || !std::isfinite(v) || v < 0)
                fail("invalid number '" + s + "'");
        };
        for (int i = 0; i < 3; ++i)
            number(fields[i], false);
        number(fields[3], true);
        number(fields[4], true);
        if (fields[3].empty() != fields[4].empty())
            fail("MSE and relMSE must both be present or both be empty");
        int spp = std::atoi(fields[1].c_str());
        if (spp <= lastSpp)
            fail("spp must increase");
        lastSpp = spp;
        try {
            ParseStrategy(fields[5]);
        } catch (const std::invalid_argument &) {
            fail("unknown strategy '" + fields[5] + "'");
        }
    }
}

}  // namespace lumisel
