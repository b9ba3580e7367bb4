#pragma once

#include <string>

#include "voxreg/network.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

// Raw volume format (RVF): "RVF1" magic, kind byte, little-endian u32 dims
// (D,H,W), 16 reserved zero bytes, then the payload row-major. Kinds:
//   0 intensity  f32
//   1 labels     u16
//   2 field      f32 x3 (component-major: [3][D][H][W])
// Intensity and field payloads are stored as f32; round trips are bit-exact
// for f32-representable values.

void write_volume(const std::string& path, const Volume& volume);
Volume read_volume(const std::string& path);

void write_labels(const std::string& path, const LabelMap& labels);
LabelMap read_labels(const std::string& path);

void write_field(const std::string& path, const DeformationField& field);
DeformationField read_field(const std::string& path);

// Checkpoint format: "HSGK" magic, u32-length-prefixed UTF-8 key=value config
// block, then one record per parameter in canonical model order:
// u32 name length, name bytes, u32 rank, u32 dims, f64 payload.

void write_checkpoint(const std::string& path, RegistrationModel& model);
RegistrationModel read_checkpoint(const std::string& path);

std::string config_to_text(const NetworkConfig& config);
NetworkConfig config_from_text(const std::string& text);

}  // namespace voxreg
