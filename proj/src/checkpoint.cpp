#include "mlrn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

#include "mlrn/errors.hpp"
#include "binary_io.hpp"

namespace mlrn {
namespace model {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'R', 'N'};
constexpr std::uint32_t kMaxRank = 8;

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  io::put_u32(out, kCheckpointVersion);

  const std::string config_json = config_to_json(model.config);
  io::put_u64(out, config_json.size());
  out += config_json;

  for (const auto& [name, tensor] : model.named_tensors()) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::put_u32(out, static_cast<std::uint32_t>(tensor->shape.size()));
    for (std::size_t d : tensor->shape) io::put_u64(out, d);
    for (double v : tensor->data) io::put_f64(out, v);
  }

  io::put_u32(out, crc_of(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failure on " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path);
  const std::string buf = ss.str();

  if (buf.size() < 12) {
    throw CheckpointError(path + ": truncated checkpoint (" +
                          std::to_string(buf.size()) + " bytes)");
  }
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw CheckpointError(path + ": bad magic, not a checkpoint file");
  }
  const std::uint32_t stored_crc =
      io::Reader(buf.data() + buf.size() - 4, 4).u32("checkpoint crc");
  const std::uint32_t actual_crc = crc_of(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    throw CheckpointError(path + ": crc mismatch (file is corrupt)");
  }

  try {
    io::Reader r(buf.data(), buf.size() - 4);
    r.take(4, "checkpoint magic");
    const std::uint32_t version = r.u32("checkpoint version");
    if (version != kCheckpointVersion) {
      throw CheckpointError(path + ": unsupported checkpoint version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t config_len = r.u64("checkpoint config length");
    ModelConfig config;
    try {
      config = config_from_json(
          r.bytes(static_cast<std::size_t>(config_len), "checkpoint config"));
    } catch (const Error& e) {
      throw CheckpointError(path + ": bad config blob: " + e.what());
    }

    Model model = build_model(config);
    std::unordered_map<std::string, TensorPtr> by_name;
    for (const auto& [name, tensor] : model.named_tensors()) {
      by_name.emplace(name, tensor);
    }

    std::unordered_map<std::string, bool> filled;
    while (!r.done()) {
      const std::uint32_t name_len = r.u32("tensor name length");
      const std::string name = r.bytes(name_len, "tensor name");
      const std::uint32_t rank = r.u32("rank of tensor `" + name + "`");
      if (rank > kMaxRank) {
        throw CheckpointError(path + ": tensor `" + name +
                              "` has implausible rank " + std::to_string(rank));
      }
      Shape shape;
      std::uint64_t numel = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint64_t d = r.u64("dims of tensor `" + name + "`");
        if (d == 0 || d > (1ull << 32) || numel > (1ull << 32)) {
          throw CheckpointError(path + ": tensor `" + name +
                                "` has an implausible shape");
        }
        shape.push_back(static_cast<std::size_t>(d));
        numel *= d;
      }

      auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw CheckpointError(path + ": unknown tensor `" + name +
                              "` (not part of this architecture)");
      }
      if (filled.count(name)) {
        throw CheckpointError(path + ": duplicate tensor `" + name + "`");
      }
      if (it->second->shape != shape) {
        throw CheckpointError(path + ": tensor `" + name + "` has shape " +
                              shape_str(shape) + ", model expects " +
                              shape_str(it->second->shape));
      }
      for (std::uint64_t i = 0; i < numel; ++i) {
        it->second->data[static_cast<std::size_t>(i)] =
            r.f64("values of tensor `" + name + "`");
      }
      filled.emplace(name, true);
    }

    for (const auto& [name, tensor] : by_name) {
      if (!filled.count(name)) {
        throw CheckpointError(path + ": missing tensor `" + name + "`");
      }
    }
    return model;
  } catch (const ParseError& e) {
    // Bounds failures from the reader become structural checkpoint errors.
    throw CheckpointError(path + ": " + e.what());
  }
}

}  // namespace model
}  // namespace mlrn
