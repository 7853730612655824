#include "priorlens/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace priorlens {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'N', 'S'};
constexpr uint32_t kDtypeF32 = 0;
constexpr uint32_t kMaxRank = 16;
// smallest possible manifest record: 4-byte name length, 1-byte name,
// dtype, rank, one u64 dimension
constexpr uint64_t kMinManifestRecord = 4 + 1 + 4 + 4 + 8;

static_assert(std::endian::native == std::endian::little,
              "byte-swapping writer not implemented");

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }

// Bounds-checked cursor over the file image; every read that would run past
// the end throws a "truncated" LoadError naming what it was after.
struct Reader {
  const char* p;
  size_t left;

  void need(size_t n, const char* what) {
    if (n > left) throw LoadError(cat("checkpoint truncated while reading ", what));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    left -= 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s(p, n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace

void save_tensors(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) throw UsageError("save_tensors: empty tensor name");
    if (!seen.insert(e.name).second)
      throw UsageError(cat("save_tensors: duplicate tensor name '", e.name, "'"));
    if (static_cast<int64_t>(e.data.size()) != shape_numel(e.shape))
      throw UsageError(cat("save_tensors: '", e.name, "' has ", e.data.size(),
                           " values for shape ", shape_str(e.shape)));
  }

  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, entries.size());
  for (const auto& e : entries) {
    put_u32(buf, static_cast<uint32_t>(e.name.size()));
    buf.append(e.name);
    put_u32(buf, kDtypeF32);
    put_u32(buf, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) put_u64(buf, static_cast<uint64_t>(d));
  }
  for (const auto& e : entries)
    buf.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(float));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError(cat("cannot open '", path, "' for writing"));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw UsageError(cat("short write to '", path, "'"));
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(cat("cannot open checkpoint '", path, "'"));
  std::string image((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{image.data(), image.size()};
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw LoadError(cat("not a PLNS checkpoint: '", path, "'"));
  const uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion)
    throw LoadError(cat("unsupported checkpoint version ", version, " (expected ",
                        kCheckpointVersion, ")"));

  const uint64_t count = r.u64("entry count");
  if (count > r.left / kMinManifestRecord)
    throw LoadError(cat("corrupt manifest: ", count, " entries cannot fit in ", r.left,
                        " bytes"));

  std::vector<NamedTensor> entries;
  entries.reserve(count);
  std::set<std::string> seen;
  uint64_t payload_floats = 0;
  for (uint64_t i = 0; i < count; ++i) {
    NamedTensor e;
    const uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > r.left)
      throw LoadError(cat("corrupt manifest: name length ", name_len));
    e.name = r.bytes(name_len, "name");
    if (!seen.insert(e.name).second)
      throw LoadError(cat("corrupt manifest: duplicate tensor '", e.name, "'"));
    const uint32_t dtype = r.u32("dtype");
    if (dtype != kDtypeF32)
      throw LoadError(cat("unsupported dtype code ", dtype, " for tensor '", e.name, "'"));
    const uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > kMaxRank)
      throw LoadError(cat("corrupt manifest: rank ", rank, " for tensor '", e.name, "'"));
    uint64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t dim = r.u64("dimension");
      // the whole payload has to fit in what is left of the file
      if (dim == 0 || dim > r.left || numel > r.left / dim)
        throw LoadError(cat("corrupt manifest: dimensions of tensor '", e.name, "'"));
      numel *= dim;
      e.shape.push_back(static_cast<int64_t>(dim));
    }
    payload_floats += numel;
    entries.push_back(std::move(e));
  }

  if (payload_floats * sizeof(float) != r.left)
    throw LoadError(cat("checkpoint payload is ", r.left, " bytes, manifest declares ",
                        payload_floats * sizeof(float)));
  for (auto& e : entries) {
    const size_t n = static_cast<size_t>(shape_numel(e.shape));
    e.data.resize(n);
    std::memcpy(e.data.data(), r.p, n * sizeof(float));
    r.p += n * sizeof(float);
    r.left -= n * sizeof(float);
  }
  return entries;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw LoadError(cat("checkpoint is missing tensor '", name, "'"));
}

bool has_tensor(const std::vector<NamedTensor>& entries, const std::string& name) {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const NamedTensor& e) { return e.name == name; });
}

}  // namespace priorlens
