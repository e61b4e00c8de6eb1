#pragma once

// Versioned little-endian binary dump of a trained model. Layout is described
// in docs/checkpoint-format.md.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/pipeline.hpp"

namespace fsvae::checkpoint {

inline constexpr char kMagic[8] = {'F', 'S', 'V', 'A', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize(const pipeline::TrainedModel& model);
pipeline::TrainedModel deserialize(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const pipeline::TrainedModel& model);
pipeline::TrainedModel load(const std::filesystem::path& path);

}  // namespace fsvae::checkpoint
