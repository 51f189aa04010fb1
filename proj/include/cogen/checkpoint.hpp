#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogen/optim.hpp"
#include "cogen/parameters.hpp"

namespace cogen {

// Binary checkpoint layout (all integers and floats little-endian):
//   "COGENCKP" | u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes }
//   u32 n_params { u32 len, name bytes, u32 rank, u64 dims[rank], f32 values[numel] }
//   u8 has_adam  [ f64 lr, f64 beta1, f64 beta2, f64 eps,
//                  u32 n_slots { u64 t, u8 has_moments, [f32 m[numel], f32 v[numel]] } ]
inline constexpr std::string_view kCheckpointMagic = "COGENCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct AdamSnapshot {
  struct Slot {
    std::uint64_t t = 0;
    std::vector<float> m;  // empty when the parameter was never updated
    std::vector<float> v;
  };
  AdamConfig config;
  std::vector<Slot> slots;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedArray> params;
  std::optional<AdamSnapshot> adam;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Real>
Checkpoint capture_checkpoint(const ParameterSet<Real>& params, const AdamState<Real>* adam);

// Copies values into an existing parameter set; names and shapes must match.
template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, const ParameterSet<Real>& params, AdamState<Real>* adam);

}  // namespace cogen
