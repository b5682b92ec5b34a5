#pragma once

#include <string>
#include <vector>

#include "network.hpp"
#include "significance.hpp"
#include "tensor.hpp"

namespace exacfs {

// Flat container: magic "EXFS", u32 version, u32 tensor count, then per
// tensor u32 rank, u32 dims, raw 64-bit little-endian values.
void write_tensor_container(const std::string& path, const std::vector<ad::Tensor>& tensors);
std::vector<ad::Tensor> read_tensor_container(const std::string& path);

void save_model(const std::string& path, const Model& model);
// Shapes must match the model's configuration.
void load_model_into(const std::string& path, Model& model);

// Audit CSV: stage,component,class,value.
void save_significance_csv(const std::string& path, const SignificanceTable& table);
// One [classes x d_j] tensor per stage in the container format.
void save_significance_binary(const std::string& path, const SignificanceTable& table);

}  // namespace exacfs
