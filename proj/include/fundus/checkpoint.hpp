#ifndef FUNDUS_CHECKPOINT_HPP
#define FUNDUS_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "fundus/config.hpp"

namespace fundus {

enum class ModelKind { FagNet, FgcNet };

std::string to_string(ModelKind kind);

using ShapeInventory = std::vector<std::pair<std::string, std::vector<std::int64_t>>>;

/// Every parameter and buffer, by qualified name, in registration order.
ShapeInventory shape_inventory(const torch::nn::Module& module);
std::string format_inventory(const ShapeInventory& inventory);

struct CheckpointHeader {
    ModelKind kind = ModelKind::FagNet;
    // Model and loss keys that shaped the parameters.
    Config config;
    std::string inventory;
};

/// Archive holding the model kind, its config, the shape inventory and all
/// named parameters and buffers.
void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const Config& model_config,
                     const torch::nn::Module& module);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads tensors into `module`. Throws compatibility errors when the stored
/// kind or inventory differs from the module's.
void load_checkpoint_into(const std::filesystem::path& path, ModelKind expected, torch::nn::Module& module);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace fundus

#endif
