#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imt/image.hpp"

namespace imt {

// PNG encode/decode. Frames are stored as 8-bit RGB, masks as 8-bit grayscale.
std::vector<std::uint8_t> encode_png(const Frame& f);
std::vector<std::uint8_t> encode_png(const Mask& m);
std::vector<std::uint8_t> encode_png(const RgbaImage& img);
Frame decode_frame_png(std::span<const std::uint8_t> bytes);
Mask decode_mask_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& p, const Frame& f);
void write_png(const std::filesystem::path& p, const Mask& m);
void write_png(const std::filesystem::path& p, const RgbaImage& img);
Frame read_frame_png(const std::filesystem::path& p);
Mask read_mask_png(const std::filesystem::path& p);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p);
void write_file_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);

}  // namespace imt
