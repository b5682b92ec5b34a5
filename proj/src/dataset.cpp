#include "dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "errors.hpp"
#include "rng.hpp"

namespace exacfs {

using ad::Tensor;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

void check_generator_args(int classes, int samples_per_class) {
  if (classes < 2) throw ContractError("dataset: classes must be >= 2");
  if (samples_per_class < 5) {
    throw ContractError("dataset: samples_per_class must be >= 5, got " +
                        std::to_string(samples_per_class));
  }
}

// Writers/readers below spell out little-endian byte order so the container
// is identical on any host.
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

void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<std::uint32_t>(v));
}

float get_f32(std::istream& is, const std::string& path) {
  return std::bit_cast<float>(get_u32(is, path));
}

}  // namespace

Dataset split_80_20(RawDataset raw, std::uint64_t seed) {
  Dataset out;
  out.classes = raw.classes;
  out.shape = raw.shape;
  std::vector<std::vector<int>> by_class(raw.classes);
  for (int i = 0; i < static_cast<int>(raw.samples.size()); ++i) {
    const int label = raw.samples[i].label;
    if (label < 0 || label >= raw.classes) {
      throw ContractError("dataset: label " + std::to_string(label) + " out of range");
    }
    by_class[label].push_back(i);
  }
  for (int c = 0; c < raw.classes; ++c) {
    auto& idx = by_class[c];
    Rng rng(mix_seed(seed, "split", static_cast<std::uint64_t>(c)));
    rng.shuffle(idx);
    const int n = static_cast<int>(idx.size());
    const int n_train = (4 * n) / 5;
    for (int i = 0; i < n; ++i) {
      (i < n_train ? out.train : out.test).push_back(raw.samples[idx[i]]);
    }
  }
  return out;
}

Dataset generate_blobs(int classes, int dims, int samples_per_class, double separation,
                       double noise, std::uint64_t seed) {
  check_generator_args(classes, samples_per_class);
  if (dims < classes) {
    throw ContractError("blobs: dims (" + std::to_string(dims) +
                        ") must be >= classes (" + std::to_string(classes) +
                        ") for orthogonal class directions");
  }
  Rng dir_rng(mix_seed(seed, "blob-dirs"));
  // Gram-Schmidt over seeded Gaussian draws.
  std::vector<std::vector<double>> dirs;
  while (static_cast<int>(dirs.size()) < classes) {
    std::vector<double> v(dims);
    for (double& e : v) e = dir_rng.normal();
    for (const auto& u : dirs) {
      double dot = 0.0;
      for (int i = 0; i < dims; ++i) dot += v[i] * u[i];
      for (int i = 0; i < dims; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& e : v) e /= norm;
    dirs.push_back(std::move(v));
  }

  RawDataset raw;
  raw.classes = classes;
  raw.shape = {1, 1, dims};
  for (int c = 0; c < classes; ++c) {
    Rng rng(mix_seed(seed, "blob-samples", static_cast<std::uint64_t>(c)));
    for (int s = 0; s < samples_per_class; ++s) {
      std::vector<double> v(dims);
      for (int i = 0; i < dims; ++i) v[i] = separation * dirs[c][i] + noise * rng.normal();
      raw.samples.push_back({Tensor::from({1, 1, dims}, std::move(v)), c});
    }
  }
  return split_80_20(std::move(raw), seed);
}

Dataset generate_patches(int classes, std::array<int, 3> shape, int samples_per_class,
                         double separation, double noise, std::uint64_t seed) {
  check_generator_args(classes, samples_per_class);
  const int ch = shape[0], h = shape[1], w = shape[2];
  if (ch < 1 || h < 2 || w < 2) {
    throw ContractError("patches: shape must be at least 1x2x2");
  }
  RawDataset raw;
  raw.classes = classes;
  raw.shape = shape;
  for (int c = 0; c < classes; ++c) {
    // Orientation spaced over [0, pi); frequency alternates between two bands
    // so neighbouring orientations are not the only cue.
    const double theta = kPi * static_cast<double>(c) / classes;
    const double cycles = 2.0 + static_cast<double>(c % 2);
    const double ct = std::cos(theta), st = std::sin(theta);
    Rng rng(mix_seed(seed, "patch-samples", static_cast<std::uint64_t>(c)));
    for (int s = 0; s < samples_per_class; ++s) {
      std::vector<double> v(static_cast<std::size_t>(ch) * h * w);
      for (int k = 0; k < ch; ++k) {
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w;
            const double vv = (y + 0.5) / h;
            const double wave = std::sin(2.0 * kPi * cycles * (u * ct + vv * st) + phase);
            v[(static_cast<std::size_t>(k) * h + y) * w + x] =
                separation * wave + noise * rng.normal();
          }
        }
      }
      raw.samples.push_back({Tensor::from({ch, h, w}, std::move(v)), c});
    }
  }
  return split_80_20(std::move(raw), seed);
}

RawDataset load_csv_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  RawDataset raw;
  int dims = -1;
  int max_label = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (vals.size() < 2) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected label,feat_0,...");
    }
    const int label = static_cast<int>(vals[0]);
    if (label < 0 || static_cast<double>(label) != vals[0]) {
      throw IoError(path + ":" + std::to_string(line_no) + ": bad label");
    }
    const int d = static_cast<int>(vals.size()) - 1;
    if (dims == -1) {
      dims = d;
    } else if (d != dims) {
      throw IoError(path + ":" + std::to_string(line_no) + ": inconsistent feature count");
    }
    std::vector<double> feat(vals.begin() + 1, vals.end());
    raw.samples.push_back({Tensor::from({1, 1, dims}, std::move(feat)), label});
    max_label = std::max(max_label, label);
  }
  if (raw.samples.empty()) throw IoError(path + ": no samples");
  raw.classes = max_label + 1;
  raw.shape = {1, 1, dims};
  return raw;
}

void save_csv_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.precision(17);
  for (const Sample& s : samples) {
    os << s.label;
    for (double v : s.x.data()) os << "," << v;
    os << "\n";
  }
}

RawDataset load_exds(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EXDS", 4) != 0) {
    throw IoError(path + ": bad magic, expected EXDS");
  }
  const std::uint32_t count = get_u32(is, path);
  const int c = static_cast<int>(get_u32(is, path));
  const int h = static_cast<int>(get_u32(is, path));
  const int w = static_cast<int>(get_u32(is, path));
  if (c <= 0 || h <= 0 || w <= 0) throw IoError(path + ": bad sample shape");
  RawDataset raw;
  raw.shape = {c, h, w};
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  int max_label = -1;
  for (std::uint32_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(get_u32(is, path));
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) v[j] = static_cast<double>(get_f32(is, path));
    raw.samples.push_back({Tensor::from({c, h, w}, std::move(v)), label});
    max_label = std::max(max_label, label);
  }
  if (raw.samples.empty()) throw IoError(path + ": no samples");
  raw.classes = max_label + 1;
  return raw;
}

void save_exds(const std::string& path, const std::vector<Sample>& samples,
               std::array<int, 3> shape) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("EXDS", 4);
  put_u32(os, static_cast<std::uint32_t>(samples.size()));
  put_u32(os, static_cast<std::uint32_t>(shape[0]));
  put_u32(os, static_cast<std::uint32_t>(shape[1]));
  put_u32(os, static_cast<std::uint32_t>(shape[2]));
  for (const Sample& s : samples) {
    put_u32(os, static_cast<std::uint32_t>(s.label));
    for (double v : s.x.data()) put_f32(os, static_cast<float>(v));
  }
}

}  // namespace exacfs
