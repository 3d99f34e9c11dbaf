#include "saip/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace saip::checkpoint {
namespace {

constexpr std::string_view kMagicStem = "SAIPNET";
constexpr char kVersion = '1';

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::uint32_t crc_of(std::string_view text) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

[[noreturn]] void parse_fail(std::size_t line, const std::string& why) {
  throw CheckpointError(ErrorCode::manifest_parse, "manifest line " + std::to_string(line) + ": " + why);
}

std::uint64_t parse_uint(std::string_view token, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty()) {
    parse_fail(line, std::string("bad ") + what + " '" + std::string(token) + "'");
  }
  return v;
}

std::vector<Entry> parse_manifest(const std::string& manifest) {
  const auto tail = manifest.rfind("crc32 ");
  if (tail == std::string::npos || (tail != 0 && manifest[tail - 1] != '\n')) parse_fail(0, "missing checksum line");
  std::string crc_line = manifest.substr(tail + 6);
  if (!crc_line.empty() && crc_line.back() == '\n') crc_line.pop_back();
  std::uint32_t stored = 0;
  auto [ptr, ec] = std::from_chars(crc_line.data(), crc_line.data() + crc_line.size(), stored, 16);
  const bool lower_hex = crc_line.find_first_not_of("0123456789abcdef") == std::string::npos;
  if (ec != std::errc() || ptr != crc_line.data() + crc_line.size() || crc_line.size() != 8 || !lower_hex) {
    parse_fail(0, "bad checksum line");
  }
  const std::string body = manifest.substr(0, tail);
  if (crc_of(body) != stored) parse_fail(0, "checksum mismatch");

  std::vector<Entry> entries;
  std::istringstream in(body);
  std::string line;
  std::size_t number = 0;
  std::uint64_t expected_offset = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream fields(line);
    std::string name, shape, dtype, offset, extra;
    if (!(fields >> name >> shape >> dtype >> offset) || (fields >> extra)) parse_fail(number, "expected 4 fields");
    if (dtype != "f32") parse_fail(number, "unsupported dtype '" + dtype + "'");
    Entry e;
    e.name = name;
    std::size_t start = 0;
    while (start <= shape.size()) {
      const auto end = std::min(shape.find('x', start), shape.size());
      const auto extent = parse_uint(std::string_view(shape).substr(start, end - start), number, "extent");
      if (extent == 0) parse_fail(number, "zero extent");
      e.shape.push_back(static_cast<Index>(extent));
      start = end + 1;
    }
    e.offset = parse_uint(offset, number, "offset");
    if (e.offset != expected_offset) parse_fail(number, "offset " + offset + " is not contiguous");
    expected_offset += static_cast<std::uint64_t>(shape_numel(e.shape)) * 4;
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<std::pair<std::string, const Tensor*>> flatten(const network::TrainState& s, Tensor& step) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  auto add = [&](const std::string& group, const ParamSet<float>& set) {
    for (const auto& n : set.names()) out.emplace_back(group + "/" + n, &set.get(n));
  };
  add("params", s.model.params);
  add("buffers", s.model.buffers);
  add("adam_m", s.adam_m);
  add("adam_v", s.adam_v);
  step = Tensor::scalar(static_cast<float>(s.step));
  out.emplace_back("state/step", &step);
  return out;
}

void store(network::TrainState& s, const std::string& name, Tensor value) {
  const auto slash = name.find('/');
  const std::string group = name.substr(0, slash == std::string::npos ? 0 : slash);
  const std::string local = slash == std::string::npos ? name : name.substr(slash + 1);
  if (name == "state/step") {
    if (value.numel() != 1) throw CheckpointError(ErrorCode::shape_mismatch, "step must hold one value", name);
    s.step = static_cast<Index>(value[0]);
  } else if (group == "params") {
    s.model.params.add(local, std::move(value));
  } else if (group == "buffers") {
    s.model.buffers.add(local, std::move(value));
  } else if (group == "adam_m") {
    s.adam_m.add(local, std::move(value));
  } else if (group == "adam_v") {
    s.adam_v.add(local, std::move(value));
  } else {
    throw CheckpointError(ErrorCode::unknown_tensor, "unknown tensor group in '" + name + "'", name);
  }
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::manifest_parse: return "manifest_parse";
    case ErrorCode::unknown_tensor: return "unknown_tensor";
    case ErrorCode::missing_tensor: return "missing_tensor";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
  }
  return "unknown";
}

CheckpointError::CheckpointError(ErrorCode code, const std::string& message, std::string tensor)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), tensor_(std::move(tensor)) {}

void save(const network::TrainState& state, const std::filesystem::path& path) {
  Tensor step;
  const auto tensors = flatten(state, step);
  std::string manifest;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest += name + " " + shape_token(t->shape()) + " f32 " + std::to_string(offset) + "\n";
    offset += static_cast<std::uint64_t>(t->numel()) * 4;
  }
  std::array<char, 9> crc{};
  std::snprintf(crc.data(), crc.size(), "%08x", crc_of(manifest));
  manifest += "crc32 " + std::string(crc.data()) + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out.write(kMagicStem.data(), static_cast<std::streamsize>(kMagicStem.size()));
  out.put(kVersion);
  const auto length = static_cast<std::uint32_t>(manifest.size());
  out.write(reinterpret_cast<const char*>(&length), 4);
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->data().data()), static_cast<std::streamsize>(t->numel() * 4));
  }
  if (!out) throw CheckpointError(ErrorCode::io, "write to " + path.string() + " failed");
}

network::TrainState load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(ErrorCode::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw CheckpointError(ErrorCode::truncated, "file shorter than the header");
  if (bytes.compare(0, kMagicStem.size(), kMagicStem) != 0) throw CheckpointError(ErrorCode::bad_magic, "not a checkpoint");
  if (bytes[7] != kVersion) {
    throw CheckpointError(ErrorCode::version_mismatch,
                          std::string("format version '") + bytes[7] + "', expected '" + kVersion + "'");
  }
  std::uint32_t length = 0;
  std::memcpy(&length, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(length)) throw CheckpointError(ErrorCode::truncated, "manifest cut short");
  const auto entries = parse_manifest(bytes.substr(12, length));
  const std::size_t blob = 12 + static_cast<std::size_t>(length);

  network::TrainState state;
  bool has_step = false;
  for (const auto& e : entries) {
    const Index n = shape_numel(e.shape);
    if (blob + e.offset + static_cast<std::uint64_t>(n) * 4 > bytes.size()) {
      throw CheckpointError(ErrorCode::truncated, "data for '" + e.name + "' cut short", e.name);
    }
    Tensor t(e.shape);
    std::memcpy(t.data().data(), bytes.data() + blob + e.offset, static_cast<std::size_t>(n) * 4);
    has_step = has_step || e.name == "state/step";
    try {
      store(state, e.name, std::move(t));
    } catch (const std::invalid_argument& err) {
      throw CheckpointError(ErrorCode::manifest_parse, err.what(), e.name);
    }
  }
  const std::uint64_t end = entries.empty() ? 0 : entries.back().offset + static_cast<std::uint64_t>(shape_numel(entries.back().shape)) * 4;
  if (blob + end != bytes.size()) throw CheckpointError(ErrorCode::truncated, "trailing bytes after the last tensor");
  if (!has_step) throw CheckpointError(ErrorCode::missing_tensor, "missing 'state/step'", "state/step");
  return state;
}

network::TrainState load_compatible(const std::filesystem::path& path, const network::TrainState& expected) {
  auto loaded = load(path);
  auto compare = [](const std::string& group, const ParamSet<float>& got, const ParamSet<float>& want) {
    for (const auto& n : got.names()) {
      if (!want.contains(n)) throw CheckpointError(ErrorCode::unknown_tensor, "unexpected tensor '" + group + "/" + n + "'", group + "/" + n);
      if (got.get(n).shape() != want.get(n).shape()) {
        throw CheckpointError(ErrorCode::shape_mismatch,
                              "tensor '" + group + "/" + n + "' has shape " + shape_to_string(got.get(n).shape()) +
                                  ", model expects " + shape_to_string(want.get(n).shape()),
                              group + "/" + n);
      }
    }
    for (const auto& n : want.names()) {
      if (!got.contains(n)) throw CheckpointError(ErrorCode::missing_tensor, "missing tensor '" + group + "/" + n + "'", group + "/" + n);
    }
  };
  compare("params", loaded.model.params, expected.model.params);
  compare("buffers", loaded.model.buffers, expected.model.buffers);
  compare("adam_m", loaded.adam_m, expected.adam_m);
  compare("adam_v", loaded.adam_v, expected.adam_v);
  return loaded;
}

}  // namespace saip::checkpoint
