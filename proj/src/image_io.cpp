#include "transfg/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "transfg/serialize.hpp"

namespace transfg {

std::uint8_t quantize_pixel(double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ContractError("pixel value " + std::to_string(v) + " outside [0,1]");
  }
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

std::vector<std::uint8_t> encode_ppm(const Tensor<double>& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("write_ppm needs an [H×W×1] or [H×W×3] image, got " +
                         shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + h * w * 3);
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      bytes.push_back(quantize_pixel(image[p * c + (c == 1 ? 0 : k)]));
    }
  }
  return bytes;
}

void write_ppm(const Tensor<double>& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

namespace {

std::size_t read_header_int(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  // whitespace and '#' comments may separate header fields
  while (pos < bytes.size()) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError("malformed PPM header");
  std::size_t v = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
  return v;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor<double> decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw IoError("not a P6 PPM");
  std::size_t pos = 2;
  const auto w = read_header_int(bytes, pos);
  const auto h = read_header_int(bytes, pos);
  const auto maxval = read_header_int(bytes, pos);
  if (maxval != 255) throw IoError("only 8-bit PPM (maxval 255) is supported");
  if (w == 0 || h == 0) throw IoError("PPM with empty extent");
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() - pos != w * h * 3) {
    throw IoError("PPM payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                  std::to_string(w * h * 3));
  }
  Tensor<double> image({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) image[i] = bytes[pos + i] / 255.0;
  return image;
}

Tensor<double> read_ppm(const std::filesystem::path& path) { return decode_ppm(slurp(path)); }

Tensor<double> load_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kTensorMagic)) {
    auto t = load_tensor(path);
    if (t.rank() == 2) return t.reshaped({t.dim(0), t.dim(1), 1});
    if (t.rank() != 3) throw DimensionError("image tensor must be rank 2 or 3, got " + shape_string(t.shape()));
    return t;
  }
  return decode_ppm(bytes);
}

Tensor<double> to_grayscale(const Tensor<double>& image) {
  if (image.rank() != 3) throw DimensionError("to_grayscale expects [H×W×C]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<double> out({h, w, 1});
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0;
    for (std::size_t k = 0; k < c; ++k) acc += image[p * c + k];
    out[p] = acc / static_cast<double>(c);
  }
  return out;
}

}  // namespace transfg
