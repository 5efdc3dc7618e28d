#include <cstddef>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cstring>
#include <memory>
#include <string>

#include "core/error.hpp"
#include "data/image.hpp"

namespace cxr {

ImageFormat sniff_format(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() >= 8 && std::memcmp(b.data(), kPngSig, 8) == 0) return ImageFormat::kPng;
  if (b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff) return ImageFormat::kJpeg;
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '5') return ImageFormat::kPgm;
  return ImageFormat::kUnknown;
}

namespace {

std::uint8_t scale_to_8bit(std::uint32_t v, std::uint32_t maxval) {
  return static_cast<std::uint8_t>((v * 255u + maxval / 2) / maxval);
}

// ---------------------------------------------------------------- PNG

// Mutable decoder state lives on the heap so nothing setjmp-sensitive is a
// local of the frame that longjmp returns to.
struct PngReadState {
  std::span<const std::uint8_t> input;
  std::size_t offset = 0;
  std::string error;
  RawImage image;
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* st = static_cast<PngReadState*>(png_get_error_ptr(png));
  st->error = msg ? msg : "unknown libpng error";
  std::longjmp(png_jmpbuf(png), 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

void png_read_fn(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + len > st->input.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, st->input.data() + st->offset, len);
  st->offset += len;
}

RawImage decode_png(std::span<const std::uint8_t> bytes) {
  auto st = std::make_unique<PngReadState>();
  st->input = bytes;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, st.get(),
                                           png_error_fn, png_warn_fn);
  if (!png) throw DataFormatError("png: cannot allocate decoder");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (!info) throw DataFormatError("png: cannot allocate decoder");

  if (setjmp(png_jmpbuf(png))) {
    throw DataFormatError("png decode failed: " + st->error);
  }
  png_set_read_fn(png, st.get(), png_read_fn);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t ch = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (ch != 1 && ch != 3) throw DataFormatError("png: unsupported channel layout");
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  st->raw.resize(rowbytes * h);
  st->rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) st->rows[y] = st->raw.data() + y * rowbytes;
  png_read_image(png, st->rows.data());

  st->image.width = w;
  st->image.height = h;
  st->image.channels = ch;
  st->image.pixels.resize(w * h * ch);
  if (depth == 16) {
    for (std::size_t i = 0; i < w * h * ch; ++i) {
      const std::uint32_t v = (static_cast<std::uint32_t>(st->raw[2 * i]) << 8) |
                              st->raw[2 * i + 1];
      st->image.pixels[i] = scale_to_8bit(v, 65535);
    }
  } else {
    for (std::size_t y = 0; y < h; ++y) {
      std::memcpy(st->image.pixels.data() + y * w * ch, st->rows[y], w * ch);
    }
  }
  return std::move(st->image);
}

struct PngWriteState {
  Bytes out;
  std::string error;
};

void png_write_fn(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
  st->out.insert(st->out.end(), data, data + len);
}

void png_flush_fn(png_structp) {}

void png_write_error_fn(png_structp png, png_const_charp msg) {
  auto* st = static_cast<PngWriteState*>(png_get_error_ptr(png));
  st->error = msg ? msg : "unknown libpng error";
  std::longjmp(png_jmpbuf(png), 1);
}

// ---------------------------------------------------------------- JPEG

struct JpegState {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
  RawImage image;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* st = reinterpret_cast<JpegState*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, st->message);
  std::longjmp(st->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

RawImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  auto st = std::make_unique<JpegState>();
  auto cinfo = std::make_unique<jpeg_decompress_struct>();
  cinfo->err = jpeg_std_error(&st->mgr);
  st->mgr.error_exit = jpeg_error_exit;
  st->mgr.emit_message = jpeg_silence;
  st->message[0] = '\0';
  jpeg_create_decompress(cinfo.get());
  struct Guard {
    jpeg_decompress_struct* c;
    ~Guard() { jpeg_destroy_decompress(c); }
  } guard{cinfo.get()};

  if (setjmp(st->jump)) {
    throw DataFormatError(std::string("jpeg decode failed: ") + st->message);
  }
  jpeg_mem_src(cinfo.get(), bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(cinfo.get(), TRUE);
  if (cinfo->jpeg_color_space == JCS_CMYK || cinfo->jpeg_color_space == JCS_YCCK) {
    std::strcpy(st->message, "CMYK JPEG is not supported");
    std::longjmp(st->jump, 1);
  }
  cinfo->out_color_space = cinfo->num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(cinfo.get());
  st->image.width = cinfo->output_width;
  st->image.height = cinfo->output_height;
  st->image.channels = static_cast<std::size_t>(cinfo->output_components);
  const std::size_t stride = st->image.width * st->image.channels;
  st->image.pixels.resize(stride * st->image.height);
  while (cinfo->output_scanline < cinfo->output_height) {
    JSAMPROW row = st->image.pixels.data() + cinfo->output_scanline * stride;
    jpeg_read_scanlines(cinfo.get(), &row, 1);
  }
  jpeg_finish_decompress(cinfo.get());
  return std::move(st->image);
}

// ---------------------------------------------------------------- PGM

RawImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::uint64_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9' && digits < 10) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      ++digits;
    }
    if (digits == 0) throw DataFormatError(std::string("pgm: missing ") + what);
    return v;
  };
  const std::uint64_t w = number("width");
  const std::uint64_t h = number("height");
  const std::uint64_t maxval = number("maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw DataFormatError("pgm: invalid header");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw DataFormatError("pgm: malformed header");
  }
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (w * h > (std::uint64_t{1} << 28) || bytes.size() - pos < w * h * bps) {
    throw DataFormatError("pgm: truncated pixel data");
  }
  RawImage img{static_cast<std::size_t>(w), static_cast<std::size_t>(h), 1, {}};
  img.pixels.resize(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    std::uint32_t v = bytes[pos + i * bps];
    if (bps == 2) v = (v << 8) | bytes[pos + i * 2 + 1];
    img.pixels[i] = maxval == 255 ? static_cast<std::uint8_t>(v)
                                  : scale_to_8bit(std::min<std::uint32_t>(v, maxval),
                                                  static_cast<std::uint32_t>(maxval));
  }
  return img;
}

}  // namespace

RawImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DataFormatError("empty image payload");
  RawImage img;
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng:
      img = decode_png(bytes);
      break;
    case ImageFormat::kJpeg:
      img = decode_jpeg(bytes);
      break;
    case ImageFormat::kPgm:
      img = decode_pgm(bytes);
      break;
    case ImageFormat::kUnknown:
      throw DataFormatError("unsupported image container (expected PNG, JPEG or PGM)");
  }
  if (img.width == 0 || img.height == 0) throw DataFormatError("image has no pixels");
  return img;
}

Bytes encode_png(const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw UsageError("encode_png: channels must be 1 or 3");
  }
  auto st = std::make_unique<PngWriteState>();
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, st.get(),
                                            png_write_error_fn, png_warn_fn);
  if (!png) throw Error(ErrorKind::kRuntime, "png: cannot allocate encoder");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  if (setjmp(png_jmpbuf(png))) {
    throw Error(ErrorKind::kRuntime, "png encode failed: " + st->error);
  }
  png_set_write_fn(png, st.get(), png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  return std::move(st->out);
}

Bytes encode_pgm(const RawImage& image) {
  if (image.channels != 1) throw UsageError("encode_pgm: image must be grayscale");
  const std::string header = "P5\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

}  // namespace cxr
