#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "msgnet/tensor.hpp"

namespace msgnet {

// "MSGT" dump: magic, u32 LE rank, rank x u32 LE extents, f32 LE payload.
void write_msgt(std::ostream& os, const Shape& shape, std::span<const float> values);
void read_msgt(std::istream& is, Shape& shape, std::vector<float>& values);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Checkpoint directory: weights.msgt (concatenated MSGT records) plus
// manifest.txt with one "name offset extents" line per record, extents
// written as AxBxC.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& dir);

}  // namespace msgnet
