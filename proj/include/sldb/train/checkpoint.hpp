#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sldb/numerics/tensor.hpp"
#include "sldb/swin/encoder.hpp"

namespace sldb {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// A stored tensor has no counterpart in the model being restored.
class UnknownTensorError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Names or shapes disagree between checkpoint and model; lists every mismatch.
class CompatibilityError : public CheckpointError {
 public:
  CompatibilityError(const std::string& what, std::vector<std::string> tensors)
      : CheckpointError(what), tensors_(std::move(tensors)) {}
  const std::vector<std::string>& tensors() const { return tensors_; }

 private:
  std::vector<std::string> tensors_;
};

struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  std::size_t numel() const;
  template <typename T>
  Tensor<T> as() const;
  template <typename T>
  static StoredTensor from(const std::string& name, const Tensor<T>& tensor);
  template <typename T>
  static StoredTensor from(const std::string& name, const Shape& shape, const std::vector<T>& values);
};

/// Little-endian file: "SLDB", u32 version, u64 + JSON metadata, u32 count,
/// then per tensor u64 + name, u8 dtype, u32 rank, u64 dims, raw elements.
struct Checkpoint {
  std::string metadata;  // JSON text
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Optimizer moments are stored under these prefixes followed by the
/// parameter name.
inline constexpr const char* kFirstMomentPrefix = "adamw.m/";
inline constexpr const char* kSecondMomentPrefix = "adamw.v/";

/// Copies stored values into `params` by name (moment tensors are skipped).
/// A stored name missing from `params` raises UnknownTensorError; missing or
/// differently shaped parameters raise CompatibilityError. Nothing is written
/// unless every check passes.
template <typename T>
void restore_parameters(const Checkpoint& checkpoint, const ParameterList<T>& params);

}  // namespace sldb
