#include "tolo/grid_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tolo/errors.hpp"
#include "tolo/rng.hpp"

namespace tolo {

namespace {

constexpr char kMagic[4] = {'T', 'O', 'L', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tologrid(const MatrixXd& m) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + static_cast<std::size_t>(m.size()) * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
    }
  }
  return out;
}

MatrixXd decode_tologrid(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("TOLOGRID: bad magic");
  }
  if (get_u32(bytes, 4) != kVersion) throw FormatError("TOLOGRID: unsupported version");
  const std::uint32_t h = get_u32(bytes, 8);
  const std::uint32_t w = get_u32(bytes, 12);
  if (h == 0 || w == 0) throw FormatError("TOLOGRID: zero dimension");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 16 + 4 * n) throw FormatError("TOLOGRID: payload length mismatch");
  MatrixXd m(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
    if (!std::isfinite(f)) throw FormatError("TOLOGRID: non-finite value");
    m.data()[i] = f;
  }
  return m;
}

void write_tologrid(const std::string& path, const MatrixXd& m) {
  const auto bytes = encode_tologrid(m);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

MatrixXd read_tologrid(const std::string& path) {
  const std::string s = read_file(path);
  return decode_tologrid(std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::string encode_pgm(const MatrixXd& m) {
  std::ostringstream out;
  out << "P2\n" << m.cols() << " " << m.rows() << "\n255\n";
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  const double span = hi - lo;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      const int v = span > 0.0 ? static_cast<int>(std::lround(255.0 * (m(r, c) - lo) / span)) : 0;
      out << v << (c + 1 == m.cols() ? '\n' : ' ');
    }
  }
  return out.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string file_checksum(const std::string& path) {
  const std::uint64_t h = fnv1a64(read_file(path));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tolo
