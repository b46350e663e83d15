#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "transfg/tensor.hpp"

namespace transfg {

// "TFGT" record: 4-byte magic, u32 rank, rank x u32 extents, then the
// elements as little-endian IEEE-754 binary64 in row-major order. A file may
// hold several records back to back.

inline constexpr char kTensorMagic[4] = {'T', 'F', 'G', 'T'};

void write_tensor(std::ostream& os, const Tensor<double>& t);
Tensor<double> read_tensor(std::istream& is);

// Byte size of the record write_tensor produces for this shape.
std::size_t tensor_record_size(const Shape& shape);

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t);
Tensor<double> load_tensor(const std::filesystem::path& path);

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor<double>>& ts);
std::vector<Tensor<double>> load_tensors(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

// Checkpoint: `<stem>.tfgt` holds the records in order; `<stem>.manifest`
// has one line per tensor: name, shape (e.g. 4x64), byte offset of the record.
void save_checkpoint(const std::filesystem::path& stem, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& stem);

}  // namespace transfg
