#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "saip/network.hpp"

/// Binary layout: 8-byte magic "SAIPNET1", 4-byte little-endian manifest length,
/// UTF-8 manifest, then contiguous little-endian f32 blobs. Manifest lines are
/// `name shape dtype offset` (shape as AxBxC, offset in bytes from the start of
/// the blob section), followed by a final `crc32 <8 hex digits>` line covering
/// the preceding manifest bytes.
namespace saip::checkpoint {

enum class ErrorCode { io, truncated, bad_magic, version_mismatch, manifest_parse, unknown_tensor, missing_tensor, shape_mismatch };

const char* to_string(ErrorCode code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(ErrorCode code, const std::string& message, std::string tensor = {});
  ErrorCode code() const { return code_; }
  /// Offending tensor name, when the error concerns one tensor.
  const std::string& tensor() const { return tensor_; }

 private:
  ErrorCode code_;
  std::string tensor_;
};

void save(const network::TrainState& state, const std::filesystem::path& path);

/// Loads every tensor as stored.
network::TrainState load(const std::filesystem::path& path);

/// Loads and checks that names and shapes match `expected` exactly.
network::TrainState load_compatible(const std::filesystem::path& path, const network::TrainState& expected);

}  // namespace saip::checkpoint
