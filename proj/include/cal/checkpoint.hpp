#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cal/encoder.hpp"
#include "cal/optim.hpp"

namespace cal {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrc {
  io,
  magic_mismatch,
  version_mismatch,
  truncated,
  malformed,
  shape_mismatch,
};

std::string to_string(CheckpointErrc code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : std::runtime_error(to_string(code) + ": " + what), code_(code) {}
  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

/// File layout (all integers little-endian u32):
///   "CALCKPT1" | version | header_len | header text | tensor_count |
///   per tensor: name_len, name, rank, dims[rank] | float32 payloads in order
///
/// The header text is key=value lines: `encoder.<field>` for the encoder
/// config and `meta.<key>` for run metadata (step, seed, dev metric, ...).
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  EncoderConfig config;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Parameters plus, when `optimizer` is given, its moments as
/// `adamw.m/<name>` / `adamw.v/<name>` and its step count in meta.
Checkpoint make_checkpoint(const EncoderParams& params, const AdamW* optimizer = nullptr,
                           std::map<std::string, std::string> meta = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

/// Copies parameter values into `params`. Throws shape_mismatch naming the
/// first tensor that is missing or has different dimensions.
void restore_params(const Checkpoint& ckpt, EncoderParams& params);
/// Fresh parameters built from the checkpoint's own encoder config.
EncoderParams params_from_checkpoint(const Checkpoint& ckpt);
void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer);

}  // namespace cal
