#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tolo/grid.hpp"

namespace tolo {

/// TOLOGRID v1: "TOLG", u32 version = 1, u32 height, u32 width, then
/// height*width little-endian float32 values in row-major order.
std::vector<std::uint8_t> encode_tologrid(const MatrixXd& m);
MatrixXd decode_tologrid(const std::vector<std::uint8_t>& bytes);

void write_tologrid(const std::string& path, const MatrixXd& m);
MatrixXd read_tologrid(const std::string& path);

/// ASCII PGM (P2) with the grid's [min, max] rescaled linearly onto 0..255.
std::string encode_pgm(const MatrixXd& m);

/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view bytes);

std::string read_file(const std::string& path);

/// FNV-1a-64 of the file contents as 16 hex digits.
std::string file_checksum(const std::string& path);

}  // namespace tolo
