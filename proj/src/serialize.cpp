#include "transfg/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace transfg {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(b.data(), 8);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("truncated TFGT header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void get_f64_block(std::istream& is, std::span<double> out) {
  std::vector<unsigned char> raw(out.size() * 8);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("truncated TFGT payload");
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(raw[k * 8 + i]) << (8 * i);
    out[k] = std::bit_cast<double>(bits);
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string() + " for reading");
  return is;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::istringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor<double>& t) {
  os.write(kTensorMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (auto v : t.data()) put_f64(os, v);
}

Tensor<double> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated TFGT record");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad TFGT magic");
  const auto rank = get_u32(is);
  if (rank == 0 || rank > 16) throw IoError("implausible TFGT rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is);
  Tensor<double> t(shape);
  get_f64_block(is, t.data());
  return t;
}

std::size_t tensor_record_size(const Shape& shape) {
  return 4 + 4 + 4 * shape.size() + 8 * shape_numel(shape);
}

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t) {
  save_tensors(path, {t});
}

Tensor<double> load_tensor(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_tensor(is);
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor<double>>& ts) {
  auto os = open_out(path);
  for (const auto& t : ts) write_tensor(os, t);
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<Tensor<double>> load_tensors(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::vector<Tensor<double>> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

void save_checkpoint(const std::filesystem::path& stem, const NamedTensors& tensors) {
  auto data_path = stem;
  data_path += ".tfgt";
  auto manifest_path = stem;
  manifest_path += ".manifest";
  auto os = open_out(data_path);
  auto ms = open_out(manifest_path);
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    write_tensor(os, t);
    ms << name << '\t' << shape_token(t.shape()) << '\t' << offset << '\n';
    offset += tensor_record_size(t.shape());
  }
  if (!os || !ms) throw IoError("write failed for checkpoint " + stem.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& stem) {
  auto data_path = stem;
  data_path += ".tfgt";
  auto manifest_path = stem;
  manifest_path += ".manifest";
  auto ms = open_in(manifest_path);
  auto is = open_in(data_path);
  NamedTensors out;
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape_text;
    std::size_t offset = 0;
    if (!(std::getline(ls, name, '\t') && std::getline(ls, shape_text, '\t') && (ls >> offset))) {
      throw IoError("malformed manifest line: " + line);
    }
    is.seekg(static_cast<std::streamoff>(offset));
    auto t = read_tensor(is);
    if (t.shape() != parse_shape(shape_text)) {
      throw IoError("manifest shape " + shape_text + " disagrees with record for " + name);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace transfg
