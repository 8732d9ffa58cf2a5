#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "robodet/network.hpp"

namespace robodet {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

// Little-endian layout:
//   "ROBO" | u16 version | u16 name length, name | u16 k | u16 layer count
//   per layer: u16 kernel, stride, in_ch, out_ch | u32 weight count | f32 weights | f32 biases
//              | u8 bn flag [+ f32 gamma, beta, running mean, running var] | u32 mask bytes | packed mask
//   anchors: 4 × (f32 w, f32 h)
// Layers are the backbone followed by head_lo and head_hi. Mask bits are LSB-first, 1 = kept.

void write_weights(std::ostream& out, const Network<float>& net);
void save_weights(const Network<float>& net, const std::filesystem::path& path);

/// Reads a weight file. Without an explicit spec the model is rebuilt from the
/// stored name and k, which must name a built-in architecture.
Network<float> read_weights(std::istream& in, const std::optional<ModelSpec>& spec = std::nullopt);
Network<float> load_weights(const std::filesystem::path& path, const std::optional<ModelSpec>& spec = std::nullopt);

}  // namespace robodet
