#pragma once

#include <string>
#include <vector>

#include "afd/tensor.hpp"

namespace afd {

/// Named float array; the unit of checkpoint storage.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

// Binary layout, all integers little-endian:
//   "AFDK" | u32 version = 1 | u32 entry count |
//   per entry: u16 name length | name bytes (UTF-8) | u8 rank | u32 dims[rank] | f32 values[prod(dims)]
inline constexpr char kCheckpointMagic[4] = {'A', 'F', 'D', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Throws IoError on write failure.
void write_checkpoint(const std::string& path, const std::vector<NamedArray>& entries);

/// Throws IoError when the file cannot be opened and FormatError on malformed content.
std::vector<NamedArray> read_checkpoint(const std::string& path);

const NamedArray* find_array(const std::vector<NamedArray>& entries, const std::string& name);

}  // namespace afd
