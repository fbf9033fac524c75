#include "floodwatch/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>

#include <jpeglib.h>

namespace floodwatch {

namespace {

struct ErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  int warnings = 0;
  char message[JMSG_LENGTH_MAX];
};

void on_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<ErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void on_emit_message(j_common_ptr cinfo, int level) {
  auto* err = reinterpret_cast<ErrorManager*>(cinfo->err);
  if (level < 0) {
    if (err->warnings++ == 0) (*cinfo->err->format_message)(cinfo, err->message);
  }
}

void silent_output(j_common_ptr) {}

}  // namespace

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 0xFF || bytes[1] != 0xD8) {
    throw DecodeError("not a JPEG stream");
  }
  // Heap-held so the pointer stays determinate across longjmp.
  auto img = std::make_unique<Image>();
  jpeg_decompress_struct cinfo{};
  ErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.emit_message = on_emit_message;
  err.pub.output_message = silent_output;
  err.message[0] = '\0';

  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  img->width = w;
  img->height = h;
  img->rgb.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img->rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  const int warnings = err.warnings;
  std::string message = err.message;
  jpeg_destroy_decompress(&cinfo);
  if (warnings > 0) throw DecodeError("jpeg: " + message);
  return std::move(*img);
}

std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality, std::string_view comment) {
  if (img.empty() || img.rgb.size() != img.stride() * img.height) {
    throw std::invalid_argument("encode_jpeg: malformed image");
  }
  jpeg_compress_struct cinfo{};
  ErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_error_exit;
  err.pub.output_message = silent_output;
  struct Sink {
    unsigned char* data = nullptr;
    unsigned long size = 0;
  };
  auto sink = std::make_unique<Sink>();

  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(sink->data);
    throw std::runtime_error(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &sink->data, &sink->size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  if (!comment.empty()) {
    jpeg_write_marker(&cinfo, JPEG_COM, reinterpret_cast<const JOCTET*>(comment.data()),
                      static_cast<unsigned int>(std::min<std::size_t>(comment.size(), 65533)));
  }
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(img.row(static_cast<int>(cinfo.next_scanline)));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> result(sink->data, sink->data + sink->size);
  jpeg_destroy_compress(&cinfo);
  std::free(sink->data);
  return result;
}

std::optional<std::string> read_jpeg_comment(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 0xFF || bytes[1] != 0xD8) return std::nullopt;
  std::size_t pos = 2;
  while (pos + 4 <= bytes.size()) {
    if (bytes[pos] != 0xFF) return std::nullopt;
    const std::uint8_t marker = bytes[pos + 1];
    if (marker == 0xFF) {  // fill byte
      ++pos;
      continue;
    }
    if (marker == 0xDA || marker == 0xD9) return std::nullopt;  // SOS / EOI: no more headers
    const std::size_t len = (static_cast<std::size_t>(bytes[pos + 2]) << 8) | bytes[pos + 3];
    if (len < 2 || pos + 2 + len > bytes.size()) return std::nullopt;
    if (marker == 0xFE) {
      return std::string(reinterpret_cast<const char*>(bytes.data() + pos + 4), len - 2);
    }
    pos += 2 + len;
  }
  return std::nullopt;
}

std::vector<std::uint8_t> splice_jpeg_comment(std::span<const std::uint8_t> jpeg,
                                               std::string_view comment) {
  if (jpeg.size() < 4 || jpeg[0] != 0xFF || jpeg[1] != 0xD8) {
    throw std::invalid_argument("splice_jpeg_comment: not a JPEG stream");
  }
  const std::size_t n = std::min<std::size_t>(comment.size(), 65533);
  std::size_t insert_at = 2;
  if (jpeg[2] == 0xFF && jpeg[3] == 0xE0 && jpeg.size() >= 6) {
    insert_at = 4 + ((static_cast<std::size_t>(jpeg[4]) << 8) | jpeg[5]);
    if (insert_at > jpeg.size()) insert_at = 2;
  }
  std::vector<std::uint8_t> out;
  out.reserve(jpeg.size() + n + 4);
  out.insert(out.end(), jpeg.begin(), jpeg.begin() + static_cast<std::ptrdiff_t>(insert_at));
  out.push_back(0xFF);
  out.push_back(0xFE);
  out.push_back(static_cast<std::uint8_t>(((n + 2) >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((n + 2) & 0xFF));
  out.insert(out.end(), comment.begin(), comment.begin() + static_cast<std::ptrdiff_t>(n));
  out.insert(out.end(), jpeg.begin() + static_cast<std::ptrdiff_t>(insert_at), jpeg.end());
  return out;
}

}  // namespace floodwatch
