#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sdsep::io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Reads a file, inflating it first when it starts with the gzip magic.
std::vector<std::uint8_t> read_file_maybe_gzip(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Binary 8-bit greyscale PGM. `pixels` are row-major in [0,255].
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);
// Maps [-1,1] to [0,255] with clamping.
std::vector<std::uint8_t> to_gray(std::span<const float> values);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace sdsep::io
