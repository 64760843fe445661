#ifndef DDRNN_MODEL_IO_HPP
#define DDRNN_MODEL_IO_HPP

#include <filesystem>

#include "ddrnn/model.hpp"

namespace ddrnn {

struct StoredModel {
  ModelConfig config;
  ModelParams<float> params;
};

/// Writes model.cfg, one f32 DDRT file per parameter tensor and a
/// manifest.txt listing "<tensor name> <file name>" in visit order.
void save_model(const std::filesystem::path& dir, const ModelConfig& config, const ModelParams<float>& params);

/// Throws IoError or FormatError on unreadable files, ShapeError when a
/// tensor does not match model.cfg.
StoredModel load_model(const std::filesystem::path& dir);

}  // namespace ddrnn

#endif  // DDRNN_MODEL_IO_HPP
