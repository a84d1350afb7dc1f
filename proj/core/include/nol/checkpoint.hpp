#pragma once

#include <string>

#include "nol/trainer.hpp"

namespace nol {

// Binary checkpoint of a full training state: architecture, parameters,
// optional noise bank, momentum buffers, epoch counter. Little-endian,
// length-prefixed, versioned; round trips are bit exact.
void save_checkpoint(const std::string& path, const TrainState& state);

// Throws std::runtime_error with a specific message on missing file, bad
// magic, unsupported version, or truncation.
TrainState load_checkpoint(const std::string& path);

// Convenience guard: load and require a specific architecture id.
TrainState load_checkpoint(const std::string& path, const std::string& expected_arch);

}  // namespace nol
