#include "checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "core/common.hpp"

namespace add {

namespace {

// The format is little-endian by definition; this code assumes a
// little-endian host (checked nowhere else in the project either).

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t take_u32(std::istream& in, const char* what) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  ADD_CHECK(in.gcount() == sizeof(v), ErrorCode::Format, "checkpoint truncated reading %s", what);
  return v;
}

constexpr char kMagic[4] = {'A', 'D', 'D', 'C'};
// Guards against allocating absurd buffers from corrupted length fields.
constexpr uint32_t kMaxFieldLen = 1u << 30;

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& blobs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  ADD_CHECK(out.good(), ErrorCode::Io, "cannot open %s for writing", path.c_str());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  for (const auto& [name, t] : blobs) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float v = static_cast<float>(t.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  out.flush();
  ADD_CHECK(out.good(), ErrorCode::Io, "write to %s failed", path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  ADD_CHECK(in.good(), ErrorCode::Io, "cannot open %s", path.c_str());
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  ADD_CHECK(in.gcount() == sizeof(magic) && std::memcmp(magic, kMagic, sizeof(magic)) == 0,
            ErrorCode::Format, "%s is not a checkpoint file (bad magic)", path.c_str());
  Checkpoint ckpt;
  ckpt.version = take_u32(in, "version");
  ADD_CHECK(ckpt.version == kCheckpointVersion, ErrorCode::Format,
            "unsupported checkpoint version %u", ckpt.version);
  const uint32_t config_len = take_u32(in, "config length");
  ADD_CHECK(config_len <= kMaxFieldLen, ErrorCode::Format, "implausible config length %u",
            config_len);
  ckpt.config_json.resize(config_len);
  in.read(ckpt.config_json.data(), config_len);
  ADD_CHECK(in.gcount() == static_cast<std::streamsize>(config_len), ErrorCode::Format,
            "checkpoint truncated reading config");

  while (true) {
    uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.gcount() == 0 && in.eof()) break;  // clean end after the last blob
    ADD_CHECK(in.gcount() == sizeof(name_len), ErrorCode::Format,
              "checkpoint truncated reading blob name length");
    ADD_CHECK(name_len > 0 && name_len <= kMaxFieldLen, ErrorCode::Format,
              "implausible blob name length %u", name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    ADD_CHECK(in.gcount() == static_cast<std::streamsize>(name_len), ErrorCode::Format,
              "checkpoint truncated reading blob name");
    const uint32_t rank = take_u32(in, "blob rank");
    ADD_CHECK(rank >= 1 && rank <= 8, ErrorCode::Format, "implausible blob rank %u", rank);
    Shape shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = take_u32(in, "blob dim");
      ADD_CHECK(d >= 1 && d <= kMaxFieldLen, ErrorCode::Format, "implausible blob dim %u", d);
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    Tensor t = Tensor::empty(std::move(shape));
    for (int64_t i = 0; i < numel; ++i) {
      float v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      ADD_CHECK(in.gcount() == sizeof(v), ErrorCode::Format,
                "checkpoint truncated reading payload of %s", name.c_str());
      t.data()[i] = static_cast<real>(v);
    }
    ckpt.blobs.push_back({std::move(name), std::move(t)});
  }
  return ckpt;
}

void load_tensors(const Checkpoint& ckpt,
                  const std::vector<std::pair<std::string, Tensor>>& dst) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : ckpt.blobs) {
    ADD_CHECK(by_name.emplace(name, t).second, ErrorCode::Format,
              "checkpoint has duplicate blob %s", name.c_str());
  }
  for (const auto& [name, target] : dst) {
    auto it = by_name.find(name);
    ADD_CHECK(it != by_name.end(), ErrorCode::Format, "checkpoint is missing blob %s",
              name.c_str());
    ADD_CHECK(it->second.shape() == target.shape(), ErrorCode::Format,
              "checkpoint blob %s has the wrong shape", name.c_str());
    Tensor mutable_target = target;
    std::memcpy(mutable_target.data(), it->second.data(),
                sizeof(real) * static_cast<size_t>(target.numel()));
    by_name.erase(it);
  }
  ADD_CHECK(by_name.empty(), ErrorCode::Format, "checkpoint has %zu unexpected blobs",
            by_name.size());
}

}  // namespace add
