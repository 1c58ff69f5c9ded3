#pragma once

// Binary tensor block shared by embedding files and checkpoints:
//
//   offset  size  field
//   0       4     magic "MSMB"
//   4       2     version, u16 LE (= 1)
//   6       1     dtype, u8 (1 = float32, 2 = float64)
//   7       1     reserved, u8 (= 0)
//   8       4     rows, u32 LE
//   12      4     cols, u32 LE
//   16      ...   rows * cols values, LE, row-major
//
// Embedding files are exactly one float32 block with nothing after it.

#include "msmbd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace msmbd {

enum class TensorDtype : std::uint8_t { float32 = 1, float64 = 2 };

inline constexpr std::uint16_t kTensorBlockVersion = 1;

/// Writes `t` (rank 1 is stored as a single row) as one block.
void write_tensor_block(std::ostream& out, const Tensor& t, TensorDtype dtype);
/// Reads one block; errors name the offending header field. `context`
/// prefixes error messages (typically a file path).
Tensor read_tensor_block(std::istream& in, TensorDtype expected, const std::string& context);

void write_embedding_file(const std::filesystem::path& path, const Tensor& t);
Tensor load_embedding_file(const std::filesystem::path& path);

} // namespace msmbd
