#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "packer/policy.hpp"

namespace packer::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Layout: 8-byte magic, u32 version, config record, u32 tensor count, then per
// tensor a u32-length name, u32 rows, u32 cols and row-major f64 values. All
// integers and floats little endian. Nothing depends on the bin dimensions.
void write_params(const PolicyParams& params, std::ostream& os);
PolicyParams read_params(std::istream& is);

void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);

}  // namespace packer::nn
