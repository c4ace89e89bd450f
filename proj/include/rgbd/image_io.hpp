#ifndef RGBD_IMAGE_IO_HPP
#define RGBD_IMAGE_IO_HPP

#include <string>
#include <utility>

#include "rgbd/tensor.hpp"

namespace rgbd {
namespace io {

// 8-bit binary PPM (P6); [3,H,W] values in [-1,1] map to 0..255
void write_ppm(const std::string& path, const Tensor& rgb);
Tensor read_ppm(const std::string& path);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples); [H,W] values
// quantized over [lo, hi]
void write_pgm16(const std::string& path, const Tensor& map, float lo, float hi);
Tensor read_pgm16(const std::string& path, float lo, float hi);

// 1-bit binary PBM (P4); [H,W], nonzero writes a set bit
void write_pbm(const std::string& path, const Tensor& mask);
Tensor read_pbm(const std::string& path);

// audio feature file: magic "AUDF", u32 T, u32 A, f32 frame_rate, then T*A
// f32 little-endian feature rows
void write_audio_features(const std::string& path, const Tensor& features, float frame_rate);
std::pair<Tensor, float> read_audio_features(const std::string& path);

}  // namespace io
}  // namespace rgbd

#endif
