#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transfg/tensor.hpp"

namespace transfg {

// Binary PPM (P6, maxval 255). Images are [H×W×C] reals in [0,1]; C is 1 or
// 3 and single-channel images are written as gray RGB. Quantisation is
// round-half-up: byte = floor(v·255 + 0.5).
std::uint8_t quantize_pixel(double v);
std::vector<std::uint8_t> encode_ppm(const Tensor<double>& image);
void write_ppm(const Tensor<double>& image, const std::filesystem::path& path);

// Returns [H×W×3] in [0,1].
Tensor<double> decode_ppm(const std::vector<std::uint8_t>& bytes);
Tensor<double> read_ppm(const std::filesystem::path& path);

// Reads a PPM or a single-record TFGT file, chosen by magic bytes. A rank-2
// TFGT tensor is taken as a single-channel image.
Tensor<double> load_image(const std::filesystem::path& path);

// Mean over channels, [H×W×C] -> [H×W×1].
Tensor<double> to_grayscale(const Tensor<double>& image);

}  // namespace transfg
