#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

namespace enrolkit {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Embedding container layout (all little endian):
//   0  "SEMB"
//   4  u16 version (1)
//   6  u8  layer tag (opaque to the toolkit)
//   7  u8  reserved (0)
//   8  u32 row count N
//  12  u32 dim D
//  16  N*D f32, row-major
struct ContainerHeader {
  std::uint16_t version = 1;
  std::uint8_t layer = 0;
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
};

inline constexpr std::size_t kContainerHeaderBytes = 16;

struct EmbeddingContainer {
  ContainerHeader header;
  FloatMatrix data;
};

ContainerHeader read_container_header(const std::filesystem::path& path);
EmbeddingContainer read_embedding_container(const std::filesystem::path& path);
void write_embedding_container(const FloatMatrix& matrix, const std::filesystem::path& path,
                               std::uint8_t layer = 0);

}  // namespace enrolkit
