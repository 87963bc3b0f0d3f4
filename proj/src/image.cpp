#include "cgiqa/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <jpeglib.h>
#include <png.h>

#include "cgiqa/error.hpp"

namespace cgiqa {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Image load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out(img.width, img.height);
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void save_png(const std::filesystem::path& path, const Image& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image load_jpeg(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Image(cinfo.output_width, cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

void save_jpeg(const std::filesystem::path& path, const Image& image) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.string().c_str(), "wb"),
                                                      &std::fclose);
  if (!file) throw IoError("cannot write " + path.string());
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw IoError("cannot encode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file.get());
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 95, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(image.rgb.data() +
                                        static_cast<std::size_t>(cinfo.next_scanline) * image.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

}  // namespace

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw IoError("truncated PPM header");
    return bytes.substr(start, pos - start);
  };
  const std::string magic = next_token();
  if (magic != "P6" && magic != "P3") throw IoError("unsupported PPM magic " + magic);
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::logic_error&) {
    throw IoError("malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw IoError("unsupported PPM geometry or depth");
  }
  Image out(w, h);
  auto scale = [&](std::size_t v) {
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };
  if (magic == "P6") {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + out.rgb.size()) throw IoError("truncated PPM payload");
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
      out.rgb[i] = scale(static_cast<unsigned char>(bytes[pos + i]));
    }
  } else {
    for (auto& v : out.rgb) v = scale(std::stoul(next_token()));
  }
  return out;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  Image img;
  if (ext == ".png") {
    img = load_png(path);
  } else if (ext == ".jpg" || ext == ".jpeg") {
    img = load_jpeg(path);
  } else if (ext == ".ppm") {
    img = decode_ppm(read_file(path));
  } else {
    throw IoError("unsupported image format: " + path.string());
  }
  return img;
}

void save_image(const std::filesystem::path& path, const Image& image) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    save_png(path, image);
  } else if (ext == ".jpg" || ext == ".jpeg") {
    save_jpeg(path, image);
  } else if (ext == ".ppm") {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << encode_ppm(image);
  } else {
    throw IoError("unsupported image format: " + path.string());
  }
}

std::string image_content_type(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "";
}

Tensor image_to_tensor(const Image& image) {
  Tensor t({3, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = image.rgb[i * 3 + c] / 255.0;
  }
  return t;
}

Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
  require_rank(chw, 3, "resize_bilinear");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear: empty extent");
  }
  if (h == out_h && w == out_w) return chw;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = chw.data().data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
        const double bot = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
        out[(ch * out_h + y) * out_w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& chw, std::size_t top, std::size_t left, std::size_t size) {
  require_rank(chw, 3, "crop");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (top + size > h || left + size > w) {
    throw DimensionError("crop window exceeds " + shape_string(chw.shape()));
  }
  Tensor out({c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < size; ++y) {
      const double* src = chw.data().data() + (ch * h + top + y) * w + left;
      std::copy_n(src, size, out.data().data() + (ch * size + y) * size);
    }
  }
  return out;
}

Tensor center_crop(const Tensor& chw, std::size_t size) {
  require_rank(chw, 3, "center_crop");
  if (size > chw.dim(1) || size > chw.dim(2)) {
    throw DimensionError("center_crop larger than image");
  }
  return crop(chw, (chw.dim(1) - size) / 2, (chw.dim(2) - size) / 2, size);
}

namespace {

Image separable_filter(const Image& image, const std::vector<double>& kernel) {
  const std::size_t w = image.width, h = image.height;
  const auto radius = static_cast<long>(kernel.size() / 2);
  std::vector<double> tmp(w * h * 3);
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 image.rgb[(y * w + clampi(static_cast<long>(x) + k, w)) * 3 + c];
        }
        tmp[(y * w + x) * 3 + c] = acc;
      }
    }
  }
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp[(clampi(static_cast<long>(y) + k, h) * w + x) * 3 + c];
        }
        out.rgb[(y * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;
  return separable_filter(image, kernel);
}

Image box_filter3(const Image& image) {
  return separable_filter(image, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      std::copy_n(image.pixel(image.width - 1 - x, y), 3, out.pixel(x, y));
    }
  }
  return out;
}

}  // namespace cgiqa
