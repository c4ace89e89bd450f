#include "rgbd/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "rgbd/common.hpp"

namespace rgbd {
namespace io {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}

// reads one whitespace/comment-delimited token of a netpbm header
std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back((char)c);
    }
    if (tok.empty()) throw IoError("truncated netpbm header");
    return tok;
}

uint8_t to_u8(float v) {
    double x = ((double)v + 1.0) * 0.5 * 255.0;
    x = std::nearbyint(x);
    return (uint8_t)(x < 0 ? 0 : (x > 255 ? 255 : x));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& rgb) {
    require(rgb.rank() == 3 && rgb.shape[0] == 3, "write_ppm expects [3,H,W]");
    int64_t h = rgb.shape[1], w = rgb.shape[2];
    auto f = open_out(path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row((size_t)(w * 3));
    for (int64_t i = 0; i < h; i++) {
        for (int64_t j = 0; j < w; j++)
            for (int64_t c = 0; c < 3; c++)
                row[(size_t)(j * 3 + c)] = to_u8(rgb[(c * h + i) * w + j]);
        f.write((const char*)row.data(), (std::streamsize)row.size());
    }
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
    auto f = open_in(path);
    if (pnm_token(f) != "P6") throw IoError("not a binary PPM: " + path);
    int64_t w = std::stoll(pnm_token(f));
    int64_t h = std::stoll(pnm_token(f));
    int64_t maxval = std::stoll(pnm_token(f));
    if (maxval != 255) throw IoError("unsupported PPM maxval in " + path);
    Tensor rgb({3, h, w});
    std::vector<uint8_t> row((size_t)(w * 3));
    for (int64_t i = 0; i < h; i++) {
        f.read((char*)row.data(), (std::streamsize)row.size());
        if (!f) throw IoError("truncated PPM payload: " + path);
        for (int64_t j = 0; j < w; j++)
            for (int64_t c = 0; c < 3; c++)
                rgb[(c * h + i) * w + j] = (float)row[(size_t)(j * 3 + c)] / 255.0f * 2.0f - 1.0f;
    }
    return rgb;
}

void write_pgm16(const std::string& path, const Tensor& map, float lo, float hi) {
    require(map.rank() == 2, "write_pgm16 expects [H,W]");
    require(lo < hi, "write_pgm16: empty quantization range");
    int64_t h = map.shape[0], w = map.shape[1];
    auto f = open_out(path);
    f << "P5\n" << w << " " << h << "\n65535\n";
    std::vector<uint8_t> row((size_t)(w * 2));
    for (int64_t i = 0; i < h; i++) {
        for (int64_t j = 0; j < w; j++) {
            double q = ((double)map[i * w + j] - lo) / ((double)hi - lo) * 65535.0;
            q = std::nearbyint(q);
            uint16_t v = (uint16_t)(q < 0 ? 0 : (q > 65535 ? 65535 : q));
            row[(size_t)(j * 2)] = (uint8_t)(v >> 8);  // big-endian per PGM
            row[(size_t)(j * 2 + 1)] = (uint8_t)(v & 0xff);
        }
        f.write((const char*)row.data(), (std::streamsize)row.size());
    }
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_pgm16(const std::string& path, float lo, float hi) {
    auto f = open_in(path);
    if (pnm_token(f) != "P5") throw IoError("not a binary PGM: " + path);
    int64_t w = std::stoll(pnm_token(f));
    int64_t h = std::stoll(pnm_token(f));
    int64_t maxval = std::stoll(pnm_token(f));
    if (maxval != 65535) throw IoError("expected 16-bit PGM in " + path);
    Tensor map({h, w});
    std::vector<uint8_t> row((size_t)(w * 2));
    for (int64_t i = 0; i < h; i++) {
        f.read((char*)row.data(), (std::streamsize)row.size());
        if (!f) throw IoError("truncated PGM payload: " + path);
        for (int64_t j = 0; j < w; j++) {
            uint16_t v = (uint16_t)((row[(size_t)(j * 2)] << 8) | row[(size_t)(j * 2 + 1)]);
            map[i * w + j] = (float)(lo + (double)v / 65535.0 * ((double)hi - lo));
        }
    }
    return map;
}

void write_pbm(const std::string& path, const Tensor& mask) {
    require(mask.rank() == 2, "write_pbm expects [H,W]");
    int64_t h = mask.shape[0], w = mask.shape[1];
    auto f = open_out(path);
    f << "P4\n" << w << " " << h << "\n";
    int64_t rowbytes = (w + 7) / 8;
    std::vector<uint8_t> row((size_t)rowbytes);
    for (int64_t i = 0; i < h; i++) {
        std::fill(row.begin(), row.end(), 0);
        for (int64_t j = 0; j < w; j++)
            if (mask[i * w + j] != 0.0f) row[(size_t)(j / 8)] |= (uint8_t)(0x80 >> (j % 8));
        f.write((const char*)row.data(), (std::streamsize)row.size());
    }
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_pbm(const std::string& path) {
    auto f = open_in(path);
    if (pnm_token(f) != "P4") throw IoError("not a binary PBM: " + path);
    int64_t w = std::stoll(pnm_token(f));
    int64_t h = std::stoll(pnm_token(f));
    Tensor mask({h, w});
    int64_t rowbytes = (w + 7) / 8;
    std::vector<uint8_t> row((size_t)rowbytes);
    for (int64_t i = 0; i < h; i++) {
        f.read((char*)row.data(), (std::streamsize)row.size());
        if (!f) throw IoError("truncated PBM payload: " + path);
        for (int64_t j = 0; j < w; j++)
            mask[i * w + j] = (row[(size_t)(j / 8)] & (0x80 >> (j % 8))) ? 1.0f : 0.0f;
    }
    return mask;
}

void write_audio_features(const std::string& path, const Tensor& features, float frame_rate) {
    require(features.rank() == 2, "audio features must be [T,A]");
    auto f = open_out(path);
    f.write("AUDF", 4);
    uint32_t t = (uint32_t)features.shape[0], a = (uint32_t)features.shape[1];
    f.write((const char*)&t, 4);
    f.write((const char*)&a, 4);
    f.write((const char*)&frame_rate, 4);
    f.write((const char*)features.ptr(), (std::streamsize)(features.numel() * 4));
    if (!f) throw IoError("write failed: " + path);
}

std::pair<Tensor, float> read_audio_features(const std::string& path) {
    auto f = open_in(path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "AUDF", 4) != 0)
        throw IoError("not an audio feature file: " + path);
    uint32_t t = 0, a = 0;
    float rate = 0;
    f.read((char*)&t, 4);
    f.read((char*)&a, 4);
    f.read((char*)&rate, 4);
    if (!f || t == 0 || a == 0) throw IoError("bad audio feature header: " + path);
    Tensor feats({(int64_t)t, (int64_t)a});
    f.read((char*)feats.ptr(), (std::streamsize)(feats.numel() * 4));
    if (!f) throw IoError("truncated audio feature payload: " + path);
    return {std::move(feats), rate};
}

}  // namespace io
}  // namespace rgbd
