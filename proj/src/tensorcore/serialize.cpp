#include "msgnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace msgnet {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'G', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw std::runtime_error("MSGT: truncated header");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_msgt(std::ostream& os, const Shape& shape, std::span<const float> values) {
  if (numel(shape) != values.size()) throw ShapeError("write_msgt: shape/value count mismatch");
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) put_u32(os, static_cast<std::uint32_t>(e));
  for (float v : values) put_u32(os, std::bit_cast<std::uint32_t>(v));
}

void read_msgt(std::istream& is, Shape& shape, std::vector<float>& values) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("MSGT: bad magic");
  }
  const std::uint32_t rank = get_u32(is);
  shape.assign(rank, 0);
  for (auto& e : shape) e = get_u32(is);
  values.resize(numel(shape));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(is));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  std::vector<float> values(t.data().begin(), t.data().end());
  write_msgt(os, t.shape(), values);
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  Shape shape;
  std::vector<float> values;
  read_msgt(is, shape, values);
  return Tensor<T>(shape, std::vector<T>(values.begin(), values.end()));
}

void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "weights.msgt", std::ios::binary);
  std::ofstream manifest(dir / "manifest.txt");
  if (!bin || !manifest) throw std::runtime_error("cannot write checkpoint in " + dir.string());
  for (const auto& t : tensors) {
    const auto offset = static_cast<std::uint64_t>(bin.tellp());
    write_msgt(bin, t.shape, t.values);
    manifest << t.name << ' ' << offset << ' ';
    for (std::size_t i = 0; i < t.shape.size(); ++i) manifest << (i ? "x" : "") << t.shape[i];
    manifest << '\n';
  }
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream bin(dir / "weights.msgt", std::ios::binary);
  std::ifstream manifest(dir / "manifest.txt");
  if (!bin || !manifest) throw std::runtime_error("no checkpoint in " + dir.string());
  std::vector<NamedTensor> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    NamedTensor t;
    std::uint64_t offset = 0;
    std::string extents;
    if (!(ls >> t.name >> offset >> extents)) throw std::runtime_error("bad manifest line: " + line);
    bin.seekg(static_cast<std::streamoff>(offset));
    read_msgt(bin, t.shape, t.values);
    out.push_back(std::move(t));
  }
  return out;
}

template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace msgnet
