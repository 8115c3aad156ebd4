#include "panini/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

namespace panini {

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

std::vector<uint8_t> to_interleaved_u8(const FeatureMap& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> out(static_cast<size_t>(c) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        out[(static_cast<size_t>(y) * w + x) * c + k] = quantize_u8(img.at3(k, y, x));
  return out;
}

FeatureMap from_interleaved_u8(const uint8_t* data, int c, int h, int w) {
  FeatureMap img({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        img.at3(k, y, x) = static_cast<float>(data[(static_cast<size_t>(y) * w + x) * c + k]);
  return img;
}

void check_image(const FeatureMap& img) {
  require(img.rank() == 3, "image must be a rank-3 {C,H,W} tensor");
  require(img.dim(0) == 1 || img.dim(0) == 3, "image channel count must be 1 or 3");
  require(img.dim(1) > 0 && img.dim(2) > 0, "image must be non-empty");
}

}  // namespace

uint8_t quantize_u8(float v) {
  long r = std::lround(v);
  if (r < 0) r = 0;
  if (r > 255) r = 255;
  return static_cast<uint8_t>(r);
}

std::vector<uint8_t> jpeg_encode(const FeatureMap& img, int quality) {
  check_image(img);
  require(quality >= 1 && quality <= 100, "jpeg quality must be in [1,100]");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> pixels = to_interleaved_u8(img);

  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  uint8_t* buf = nullptr;
  unsigned long buf_len = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw IoError(std::string("jpeg encode failed: ") + err.message);
  }

  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_len);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = c;
  cinfo.in_color_space = (c == 3) ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  // 4:4:4 sampling: quality alone controls the loss, and q=100 round-trips
  // near-losslessly even on sharp synthetic content.
  for (int i = 0; i < cinfo.num_components; ++i) {
    cinfo.comp_info[i].h_samp_factor = 1;
    cinfo.comp_info[i].v_samp_factor = 1;
  }
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = &pixels[static_cast<size_t>(cinfo.next_scanline) * w * c];
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  std::vector<uint8_t> out(buf, buf + buf_len);
  free(buf);
  return out;
}

FeatureMap jpeg_decode(const std::vector<uint8_t>& bytes) {
  require(!bytes.empty(), "jpeg decode: empty buffer");
  jpeg_decompress_struct dinfo;
  JpegErrorMgr err;
  dinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  std::vector<uint8_t> pixels;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&dinfo);
    throw IoError(std::string("jpeg decode failed: ") + err.message);
  }

  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&dinfo, TRUE);
  jpeg_start_decompress(&dinfo);
  const int w = static_cast<int>(dinfo.output_width);
  const int h = static_cast<int>(dinfo.output_height);
  const int c = dinfo.output_components;
  pixels.resize(static_cast<size_t>(w) * h * c);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = &pixels[static_cast<size_t>(dinfo.output_scanline) * w * c];
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  return from_interleaved_u8(pixels.data(), c, h, w);
}

FeatureMap jpeg_roundtrip(const FeatureMap& img, int quality) {
  return jpeg_decode(jpeg_encode(img, quality));
}

void write_png(const std::string& path, const FeatureMap& img) {
  check_image(img);
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> pixels = to_interleaved_u8(img);

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, &pixels[static_cast<size_t>(y) * w * c]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

FeatureMap read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open for reading: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int c = static_cast<int>(png_get_channels(png, info));
  require(c == 1 || c == 3, "unsupported png channel count");
  std::vector<uint8_t> pixels(static_cast<size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    png_read_row(png, &pixels[static_cast<size_t>(y) * w * c], nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_interleaved_u8(pixels.data(), c, h, w);
}

void write_jpeg(const std::string& path, const FeatureMap& img, int quality) {
  std::vector<uint8_t> bytes = jpeg_encode(img, quality);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), fp);
  std::fclose(fp);
  if (n != bytes.size()) throw IoError("short write: " + path);
}

FeatureMap read_image(const std::string& path) {
  auto ends_with = [&](const char* s) {
    size_t l = std::strlen(s);
    return path.size() >= l && path.compare(path.size() - l, l, s) == 0;
  };
  if (ends_with(".png")) return read_png(path);
  if (ends_with(".jpg") || ends_with(".jpeg")) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open for reading: " + path);
    std::fseek(fp, 0, SEEK_END);
    long len = std::ftell(fp);
    std::fseek(fp, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    size_t n = std::fread(bytes.data(), 1, bytes.size(), fp);
    std::fclose(fp);
    if (n != bytes.size()) throw IoError("short read: " + path);
    return jpeg_decode(bytes);
  }
  throw InvalidArgument("unsupported image extension: " + path);
}

FeatureMap resize_bilinear(const FeatureMap& img, int out_h, int out_w) {
  require(img.rank() == 3, "resize_bilinear expects rank-3 input");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be positive");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h == h && out_w == w) return img;

  FeatureMap out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > h - 1) fy = h - 1;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > w - 1) fx = w - 1;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int k = 0; k < c; ++k) {
        const double a = img.at3(k, y0, x0), b = img.at3(k, y0, x1);
        const double d = img.at3(k, y1, x0), e = img.at3(k, y1, x1);
        out.at3(k, y, x) = static_cast<float>((a * (1 - wx) + b * wx) * (1 - wy) +
                                              (d * (1 - wx) + e * wx) * wy);
      }
    }
  }
  return out;
}

Tensor to_net_range(const Tensor& img255) {
  Tensor out = img255;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] / 127.5f - 1.0f;
  return out;
}

Tensor to_image_range(const Tensor& net) {
  Tensor out = net;
  for (int64_t i = 0; i < out.numel(); ++i) {
    float v = (net[i] + 1.0f) * 127.5f;
    out[i] = std::min(255.0f, std::max(0.0f, v));
  }
  return out;
}

}  // namespace panini
