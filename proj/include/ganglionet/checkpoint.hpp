#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ganglionet/io.hpp"
#include "ganglionet/nabla_net.hpp"

namespace ganglionet {

// Checkpoint container (.gnet):
//
//   GANGLIONET-CHECKPOINT
//   version=1
//   <architecture key=value lines>
//   step_count=<n>
//   adam_state=<0|1>
//   tensor_count=<k>
//   tensor <name> <d0,d1,..> <weight_offset> [<m_offset> <v_offset>]   (k lines)
//   payload_bytes=<bytes>
//   payload_fnv1a=<16 hex digits>
//   header_fnv1a=<16 hex digits>        hash of every header byte above this line
//   end_header
//   <payload: little-endian float32, offsets in bytes from payload start>

inline constexpr std::string_view kCheckpointMagic = "GANGLIONET-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

enum class CheckpointFault { BadMagic, VersionMismatch, Truncated, IndexInconsistent, ChecksumMismatch, ArchMismatch };

inline std::string_view to_string(CheckpointFault f) {
  switch (f) {
    case CheckpointFault::BadMagic: return "bad magic";
    case CheckpointFault::VersionMismatch: return "version mismatch";
    case CheckpointFault::Truncated: return "truncated";
    case CheckpointFault::IndexInconsistent: return "index inconsistent";
    case CheckpointFault::ChecksumMismatch: return "checksum mismatch";
    case CheckpointFault::ArchMismatch: return "architecture mismatch";
  }
  return "unknown";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& what)
      : Error(fault == CheckpointFault::ArchMismatch ? ErrorCode::ArchMismatch : ErrorCode::Checkpoint,
              "checkpoint " + std::string(to_string(fault)) + ": " + what),
        fault_(fault) {}
  CheckpointFault fault() const noexcept { return fault_; }

 private:
  CheckpointFault fault_;
};

struct Checkpoint {
  NablaArchitecture arch;
  ParamStore store;
  bool has_adam_state = false;
};

namespace detail {

inline void append_floats(std::string& out, const Tensor& t) {
  const std::size_t start = out.size();
  out.resize(start + t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + start + 4 * i, &bits, 4);
  }
}

inline void read_floats(std::string_view payload, std::size_t offset, Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, payload.data() + offset + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    t[i] = std::bit_cast<float>(bits);
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    require(!item.empty() && item.find_first_not_of("0123456789") == std::string::npos, ErrorCode::Config,
            "expected a comma-separated list of non-negative integers, got '" + s + "'");
    out.push_back(std::stoull(item));
  }
  return out;
}

}  // namespace detail

/// Applies one architecture key; returns false for unknown keys.
inline bool apply_arch_key(NablaArchitecture& a, const std::string& key, const std::string& value) {
  auto num = [&] {
    auto v = detail::parse_size_list(value);
    require(v.size() == 1, ErrorCode::Config, "expected one integer for '" + key + "', got '" + value + "'");
    return v[0];
  };
  if (key == "encoder_widths") a.encoder_widths = detail::parse_size_list(value);
  else if (key == "decoder_widths") a.decoder_widths = detail::parse_size_list(value);
  else if (key == "n_decode_levels") a.n_decode_levels = num();
  else if (key == "input_channels") a.input_channels = num();
  else if (key == "output_channels") a.output_channels = num();
  else if (key == "patch_side") a.patch_side = num();
  else if (key == "t_steps") a.t_steps = num();
  else if (key == "rcl_per_unit") a.rcl_per_unit = num();
  else if (key == "seed") a.seed = num();
  else return false;
  return true;
}

inline std::string serialize_checkpoint(const ParamStore& store, const NablaArchitecture& arch,
                                        bool include_adam = true) {
  require_store_matches(store, arch);
  const auto layout = parameter_layout(arch);
  std::string payload;
  std::ostringstream index;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = store.entries()[i];
    index << "tensor " << e.name << ' ';
    for (std::size_t d = 0; d < e.weight.rank(); ++d) index << (d ? "," : "") << e.weight.dim(d);
    index << ' ' << payload.size();
    detail::append_floats(payload, e.weight);
    if (include_adam) {
      index << ' ' << payload.size();
      detail::append_floats(payload, e.adam_m);
      index << ' ' << payload.size();
      detail::append_floats(payload, e.adam_v);
    }
    index << '\n';
  }

  std::ostringstream header;
  header << kCheckpointMagic << '\n'
         << "version=" << kCheckpointVersion << '\n'
         << arch.describe() << "step_count=" << store.step_count() << '\n'
         << "adam_state=" << (include_adam ? 1 : 0) << '\n'
         << "tensor_count=" << store.size() << '\n'
         << index.str() << "payload_bytes=" << payload.size() << '\n'
         << "payload_fnv1a=" << hex64(fnv1a64(payload)) << '\n';
  std::string head = header.str();
  head += "header_fnv1a=" + hex64(fnv1a64(head)) + "\nend_header\n";
  return head + payload;
}

inline void save_checkpoint(const ParamStore& store, const NablaArchitecture& arch,
                            const std::filesystem::path& path, bool include_adam = true) {
  write_file_atomic(path, serialize_checkpoint(store, arch, include_adam));
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  using F = CheckpointFault;
  auto bad = [](F f, const std::string& m) { throw CheckpointError(f, m); };

  const std::string magic_line = std::string(kCheckpointMagic) + "\n";
  if (bytes.substr(0, magic_line.size()) != magic_line) bad(F::BadMagic, "file does not start with the .gnet tag");

  const std::size_t end_marker = bytes.find("\nend_header\n");
  if (end_marker == std::string_view::npos) bad(F::Truncated, "header terminator not found");
  const std::string_view header = bytes.substr(0, end_marker + 1);
  const std::string_view payload = bytes.substr(end_marker + std::string_view("\nend_header\n").size());

  std::vector<std::string> lines;
  {
    std::string h(header);
    std::stringstream ss(h);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
  }
  if (lines.size() < 2 || lines[1].rfind("version=", 0) != 0) bad(F::VersionMismatch, "missing version line");
  if (lines[1] != "version=" + std::to_string(kCheckpointVersion))
    bad(F::VersionMismatch, "found '" + lines[1] + "', reader supports version " + std::to_string(kCheckpointVersion));

  const std::string& hash_line = lines.back();
  if (hash_line.rfind("header_fnv1a=", 0) != 0) bad(F::IndexInconsistent, "missing header checksum");
  const std::size_t hash_pos = header.rfind("header_fnv1a=");
  if (hex64(fnv1a64(header.substr(0, hash_pos))) != hash_line.substr(13))
    bad(F::ChecksumMismatch, "header bytes do not match their checksum");

  Checkpoint ck;
  std::size_t tensor_count = 0, payload_bytes = 0;
  std::string payload_hash;
  bool adam = false;
  struct IndexRow {
    std::string name;
    Shape shape;
    std::vector<std::size_t> offsets;
  };
  std::vector<IndexRow> rows;
  try {
    for (std::size_t i = 2; i + 1 < lines.size(); ++i) {
      const auto& line = lines[i];
      if (line.rfind("tensor ", 0) == 0) {
        std::istringstream ls(line.substr(7));
        IndexRow row;
        std::string dims;
        ls >> row.name >> dims;
        row.shape = detail::parse_size_list(dims);
        std::size_t off;
        while (ls >> off) row.offsets.push_back(off);
        rows.push_back(std::move(row));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) bad(F::IndexInconsistent, "malformed header line '" + line + "'");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (apply_arch_key(ck.arch, key, value)) continue;
      if (key == "step_count") ck.store.set_step_count(std::stoull(value));
      else if (key == "adam_state") adam = value == "1";
      else if (key == "tensor_count") tensor_count = std::stoull(value);
      else if (key == "payload_bytes") payload_bytes = std::stoull(value);
      else if (key == "payload_fnv1a") payload_hash = value;
      else bad(F::IndexInconsistent, "unknown header key '" + key + "'");
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    bad(F::IndexInconsistent, std::string("unparseable header: ") + e.what());
  }

  if (rows.size() != tensor_count)
    bad(F::IndexInconsistent, "tensor_count=" + std::to_string(tensor_count) + " but " +
                                  std::to_string(rows.size()) + " index rows");
  std::vector<ParamSpec> layout;
  try {
    layout = parameter_layout(ck.arch);
  } catch (const Error& e) {
    bad(F::IndexInconsistent, std::string("architecture descriptor invalid: ") + e.what());
  }
  if (layout.size() != rows.size())
    bad(F::IndexInconsistent, "architecture implies " + std::to_string(layout.size()) + " tensors, index lists " +
                                  std::to_string(rows.size()));

  // Offsets must tile the payload contiguously in index order.
  std::size_t cursor = 0;
  const std::size_t per_row = adam ? 3 : 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.name != layout[i].name || row.shape != layout[i].shape)
      bad(F::IndexInconsistent, "index row " + std::to_string(i) + " '" + row.name + "' " + shape_string(row.shape) +
                                    " does not match architecture slot '" + layout[i].name + "' " +
                                    shape_string(layout[i].shape));
    if (row.offsets.size() != per_row) bad(F::IndexInconsistent, "wrong offset count for '" + row.name + "'");
    for (auto off : row.offsets) {
      if (off != cursor) bad(F::IndexInconsistent, "offset of '" + row.name + "' overlaps or leaves a gap");
      cursor += element_count(row.shape) * 4;
    }
  }
  if (cursor != payload_bytes) bad(F::IndexInconsistent, "index covers " + std::to_string(cursor) +
                                                             " bytes, header declares " + std::to_string(payload_bytes));
  if (payload.size() < payload_bytes)
    bad(F::Truncated, "payload has " + std::to_string(payload.size()) + " of " + std::to_string(payload_bytes) +
                          " bytes");
  if (payload.size() > payload_bytes) bad(F::IndexInconsistent, "trailing bytes after payload");
  if (hex64(fnv1a64(payload)) != payload_hash) bad(F::ChecksumMismatch, "payload bytes do not match their checksum");

  const std::uint64_t steps = ck.store.step_count();
  ParamStore store;
  for (const auto& row : rows) {
    Tensor w(row.shape);
    detail::read_floats(payload, row.offsets[0], w);
    store.add(row.name, std::move(w));
    if (adam) {
      auto& e = store.entry(row.name);
      detail::read_floats(payload, row.offsets[1], e.adam_m);
      detail::read_floats(payload, row.offsets[2], e.adam_v);
    }
  }
  store.set_step_count(steps);
  ck.store = std::move(store);
  ck.has_adam_state = adam;
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

/// Loads and requires the stored topology to equal `expected` (seed excluded).
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const NablaArchitecture& expected) {
  auto ck = load_checkpoint(path);
  if (!ck.arch.same_structure(expected))
    throw CheckpointError(CheckpointFault::ArchMismatch, "'" + path.string() + "' holds\n" + ck.arch.describe() +
                                                             "but the configuration expects\n" + expected.describe());
  return ck;
}

}  // namespace ganglionet
