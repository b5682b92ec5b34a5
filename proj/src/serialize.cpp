#include "serialize.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace exacfs {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("short read in " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("short read in " + path);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void write_tensor_container(const std::string& path, const std::vector<ad::Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("EXFS", 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const ad::Tensor& t : tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(os, v);
  }
  if (!os) throw IoError("write failed for " + path);
}

std::vector<ad::Tensor> read_tensor_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EXFS", 4) != 0) {
    throw IoError(path + ": bad magic, expected EXFS");
  }
  const std::uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(is, path);
  std::vector<ad::Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rank = get_u32(is, path);
    if (rank > 8) throw IoError(path + ": implausible tensor rank " + std::to_string(rank));
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = get_u32(is, path);
      if (d == 0 || d > (1u << 24)) throw IoError(path + ": bad dimension");
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    std::vector<double> values(n);
    for (std::size_t j = 0; j < n; ++j) values[j] = get_f64(is, path);
    out.push_back(ad::Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void save_model(const std::string& path, const Model& model) {
  write_tensor_container(path, model.all_tensors());
}

void load_model_into(const std::string& path, Model& model) {
  model.load_tensors(read_tensor_container(path));
}

void save_significance_csv(const std::string& path, const SignificanceTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "stage,component,class,value\n";
  char buf[40];
  for (std::size_t j = 0; j < table.dims.size(); ++j) {
    for (int q = 0; q < table.dims[j]; ++q) {
      for (int c = 0; c < table.num_classes; ++c) {
        std::snprintf(buf, sizeof(buf), "%.12g", table.at(static_cast<int>(j), c, q));
        os << (j + 1) << "," << q << "," << c << "," << buf << "\n";
      }
    }
  }
}

void save_significance_binary(const std::string& path, const SignificanceTable& table) {
  std::vector<ad::Tensor> tensors;
  tensors.reserve(table.dims.size());
  for (std::size_t j = 0; j < table.dims.size(); ++j) {
    tensors.push_back(ad::Tensor::from({table.num_classes, table.dims[j]},
                                       std::vector<double>(table.values[j])));
  }
  write_tensor_container(path, tensors);
}

}  // namespace exacfs
