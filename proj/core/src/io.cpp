#include "mhmr/io.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "mhmr/errors.hpp"

namespace mhmr::io {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t size) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
}
void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void BinaryWriter::i32(std::int32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::f32(float v) { bytes(&v, sizeof v); }
void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }
void BinaryWriter::string(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}
void BinaryWriter::close() {
  out_.close();
  if (!out_) throw std::runtime_error("close failed: " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open " + path.string());
}

void BinaryReader::bytes(void* data, std::size_t size) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in_.gcount()) != size) throw FormatError(path_.string() + ": truncated file");
}
std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}
std::int32_t BinaryReader::i32() {
  std::int32_t v;
  bytes(&v, sizeof v);
  return v;
}
float BinaryReader::f32() {
  float v;
  bytes(&v, sizeof v);
  return v;
}
double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}
std::string BinaryReader::string(std::uint64_t max_size) {
  const std::uint64_t n = u64();
  if (n > max_size) throw FormatError(path_.string() + ": implausible string length " + std::to_string(n));
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}
bool BinaryReader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  double scale = 0;
  Image img;
  in >> magic >> img.width >> img.height >> scale;
  if (!in || (magic != "PF" && magic != "Pf")) throw FormatError(path.string() + ": not a PFM image");
  if (img.width <= 0 || img.height <= 0) throw FormatError(path.string() + ": bad PFM size");
  if (scale > 0) throw FormatError(path.string() + ": big-endian PFM is not supported");
  in.get();
  img.channels = magic == "PF" ? 3 : 1;
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  img.data.resize(row * img.height);
  for (int y = img.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(img.data.data() + row * y), static_cast<std::streamsize>(row * sizeof(float)));
    if (!in) throw FormatError(path.string() + ": truncated PFM");
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("PFM supports 1 or 3 channels, got " + std::to_string(image.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << (image.channels == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = image.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(image.data.data() + row * y), static_cast<std::streamsize>(row * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mhmr::io
