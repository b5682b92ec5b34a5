#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace exacfs {

struct Sample {
  ad::Tensor x;  // [c,h,w]
  int label = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  int classes = 0;
  std::array<int, 3> shape{1, 1, 1};
};

// Unsplit sample pool, as read from a file.
struct RawDataset {
  std::vector<Sample> samples;
  int classes = 0;
  std::array<int, 3> shape{1, 1, 1};
};

// Gaussian blobs on mutually orthogonal directions; vector samples are shaped
// [1,1,dims]. Requires dims >= classes and samples_per_class >= 5.
Dataset generate_blobs(int classes, int dims, int samples_per_class, double separation,
                       double noise, std::uint64_t seed);

// Procedural oriented-grating patches: class-specific frequency/orientation,
// random per-sample phase, additive pixel noise.
Dataset generate_patches(int classes, std::array<int, 3> shape, int samples_per_class,
                         double separation, double noise, std::uint64_t seed);

// Per-class 80/20 split, shuffled by a per-class stream of `seed`.
Dataset split_80_20(RawDataset raw, std::uint64_t seed);

// CSV rows: label,feat_0,...,feat_{D-1}. Vector data only.
RawDataset load_csv_samples(const std::string& path);
void save_csv_samples(const std::string& path, const std::vector<Sample>& samples);

// Binary container: magic "EXDS", u32 count, u32 c,h,w, then per sample
// u32 label + c*h*w float32 values, little-endian.
RawDataset load_exds(const std::string& path);
void save_exds(const std::string& path, const std::vector<Sample>& samples,
               std::array<int, 3> shape);

}  // namespace exacfs
