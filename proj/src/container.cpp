#include "enrolkit/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "enrolkit/error.hpp"

namespace enrolkit {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'E', 'M', 'B'};

void put_u16(unsigned char* p, std::uint16_t v) {
  p[0] = static_cast<unsigned char>(v & 0xFF);
  p[1] = static_cast<unsigned char>(v >> 8);
}

void put_u32(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

ContainerHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, kContainerHeaderBytes> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() < 4 || std::memcmp(buf.data(), kMagic.data(), 4) != 0) {
    fail(Errc::parse_error, path.string() + ": bad magic, expected \"SEMB\"");
  }
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    fail(Errc::parse_error, path.string() + ": truncated header");
  }
  ContainerHeader header;
  header.version = get_u16(buf.data() + 4);
  header.layer = buf[6];
  header.rows = get_u32(buf.data() + 8);
  header.dim = get_u32(buf.data() + 12);
  if (header.version != 1) {
    fail(Errc::parse_error,
         path.string() + ": unsupported container version " + std::to_string(header.version));
  }
  return header;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open embedding container " + path.string());
  return in;
}

}  // namespace

ContainerHeader read_container_header(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_header(in, path);
}

EmbeddingContainer read_embedding_container(const std::filesystem::path& path) {
  auto in = open_input(path);
  EmbeddingContainer out;
  out.header = parse_header(in, path);
  const std::size_t count = static_cast<std::size_t>(out.header.rows) * out.header.dim;
  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    fail(Errc::parse_error, path.string() + ": truncated payload, expected " +
                                std::to_string(payload.size()) + " bytes, found " +
                                std::to_string(in.gcount()));
  }
  out.data.resize(out.header.rows, out.header.dim);
  float* dst = out.data.data();
  for (std::size_t i = 0; i < count; ++i) {
    dst[i] = std::bit_cast<float>(get_u32(payload.data() + 4 * i));
  }
  return out;
}

void write_embedding_container(const FloatMatrix& matrix, const std::filesystem::path& path,
                               std::uint8_t layer) {
  const auto rows = static_cast<std::size_t>(matrix.rows());
  const auto dim = static_cast<std::size_t>(matrix.cols());
  std::vector<unsigned char> bytes(kContainerHeaderBytes + rows * dim * 4);
  std::memcpy(bytes.data(), kMagic.data(), 4);
  put_u16(bytes.data() + 4, 1);
  bytes[6] = layer;
  bytes[7] = 0;
  put_u32(bytes.data() + 8, static_cast<std::uint32_t>(rows));
  put_u32(bytes.data() + 12, static_cast<std::uint32_t>(dim));
  const float* src = matrix.data();
  for (std::size_t i = 0; i < rows * dim; ++i) {
    put_u32(bytes.data() + kContainerHeaderBytes + 4 * i, std::bit_cast<std::uint32_t>(src[i]));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write embedding container " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

}  // namespace enrolkit
