#pragma once

#include <string>
#include <vector>

#include "priorlens/common.hpp"
#include "priorlens/tensor.hpp"

namespace priorlens {

// One entry of a tensor container file. Only f32 payloads exist today, but
// the on-disk format carries a dtype code so a reader can reject anything
// newer instead of misparsing it.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  static NamedTensor of(std::string name, const Tensor& t) {
    return {std::move(name), t.shape(), {t.data().begin(), t.data().end()}};
  }
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Container layout, all little-endian regardless of host:
//   "PLNS" | u32 format version | u64 entry count |
//   per entry: u32 name length, name bytes, u32 dtype code (0 = f32),
//              u32 rank, dims as u64 |
//   payloads: raw f32 data in manifest order.
// Round-trips are bit-exact. Readers validate sizes against the file length
// so a corrupt header produces a LoadError rather than a wild allocation.
void save_tensors(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_tensors(const std::string& path);

// Throws LoadError naming the entry if absent.
const NamedTensor& find_tensor(const std::vector<NamedTensor>& entries, const std::string& name);
bool has_tensor(const std::vector<NamedTensor>& entries, const std::string& name);

}  // namespace priorlens
