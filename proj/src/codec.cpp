#include "imt/codec.hpp"

#include <fstream>
#include <iterator>

#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "imt/error.hpp"

namespace imt {
namespace {

std::vector<std::uint8_t> encode_mat(const cv::Mat& m) {
  std::vector<std::uint8_t> out;
  // Compression level is pinned so exports are byte-stable across runs.
  if (!cv::imencode(".png", m, out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    fail(ErrorKind::io, "png encode failed");
  }
  return out;
}

cv::Mat decode_mat(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) fail(ErrorKind::io, "empty png payload");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat img = cv::imdecode(raw, flags);
  if (img.empty()) fail(ErrorKind::io, "png decode failed");
  return img;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Frame& f) {
  cv::Mat rgb(f.height, f.width, CV_8UC3, const_cast<std::uint8_t*>(f.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return encode_mat(bgr);
}

std::vector<std::uint8_t> encode_png(const Mask& m) {
  cv::Mat g(m.height, m.width, CV_8UC1, const_cast<std::uint8_t*>(m.values.data()));
  return encode_mat(g);
}

std::vector<std::uint8_t> encode_png(const RgbaImage& img) {
  cv::Mat rgba(img.height, img.width, CV_8UC4, const_cast<std::uint8_t*>(img.pixels.data()));
  cv::Mat bgra;
  cv::cvtColor(rgba, bgra, cv::COLOR_RGBA2BGRA);
  return encode_mat(bgra);
}

Frame decode_frame_png(std::span<const std::uint8_t> bytes) {
  cv::Mat bgr = decode_mat(bytes, cv::IMREAD_COLOR);
  Frame f(bgr.cols, bgr.rows);
  cv::Mat rgb(f.height, f.width, CV_8UC3, f.pixels.data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return f;
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  cv::Mat g = decode_mat(bytes, cv::IMREAD_GRAYSCALE);
  Mask m(g.cols, g.rows);
  cv::Mat dst(m.height, m.width, CV_8UC1, m.values.data());
  g.copyTo(dst);
  return m;
}

void write_png(const std::filesystem::path& p, const Frame& f) { write_file_bytes(p, encode_png(f)); }
void write_png(const std::filesystem::path& p, const Mask& m) { write_file_bytes(p, encode_png(m)); }
void write_png(const std::filesystem::path& p, const RgbaImage& img) { write_file_bytes(p, encode_png(img)); }

Frame read_frame_png(const std::filesystem::path& p) { return decode_frame_png(read_file_bytes(p)); }
Mask read_mask_png(const std::filesystem::path& p) { return decode_mask_png(read_file_bytes(p)); }

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  // Accept data URLs from browsers.
  if (auto comma = text.find(','); text.starts_with("data:") && comma != std::string_view::npos) {
    text.remove_prefix(comma + 1);
  }
  if (text.size() % 4 != 0) fail(ErrorKind::invalid_argument, "malformed base64 payload");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) fail(ErrorKind::invalid_argument, "malformed base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::io, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace imt
