#pragma once

#include <stdexcept>
#include <string>

#include "evmf/nn.hpp"

namespace evmf {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Little-endian binary parameter snapshot:
//   magic "EVMF", u32 format version, u32 parameter count, then per parameter
//   u16 name length, name bytes, u8 rank, u32 extents, raw f64 values.
// Round-trips bit-exactly.
void save_checkpoint(const ParamRegistry& reg, const std::string& path);

// Loads into an existing registry; every stored parameter must match an
// existing name and shape, and every registered parameter must be present.
void load_checkpoint(ParamRegistry& reg, const std::string& path);

}  // namespace evmf
