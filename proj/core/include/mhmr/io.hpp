#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mhmr::io {

// Little-endian scalar streams. Reads past the end throw FormatError.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const void* data, std::size_t size);
  void string(const std::string& s);  // u64 length + bytes
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  float f32();
  double f64();
  void bytes(void* data, std::size_t size);
  std::string string(std::uint64_t max_size = 1ull << 30);
  bool at_end();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// Row-major, top row first, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

/// Portable float map ("Pf" grey or "PF" three-channel).
Image read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image& image);

}  // namespace mhmr::io
