#include "dmsd/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dmsd {

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out(img.w, img.h);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto* p = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, x, y);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        p[c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  return out;
}

ImageF to_float(const ImageU8& img) {
  ImageF out(img.w, img.h);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const auto* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) out.at(c, x, y) = static_cast<float>(p[c]) / 255.0f;
    }
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DataError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

ImageU8 read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw DataError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DataError("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  ImageU8 img(static_cast<int>(png_get_image_width(png, info)),
              static_cast<int>(png_get_image_height(png, info)));
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

namespace {

inline float sample_clamped(const std::vector<float>& plane, int w, int h, int x, int y) {
  x = x < 0 ? 0 : (x >= w ? w - 1 : x);
  y = y < 0 ? 0 : (y >= h ? h - 1 : y);
  return plane[static_cast<std::size_t>(y) * w + x];
}

}  // namespace

ImageF resize_bilinear(const ImageF& src, int ow, int oh) {
  if (ow == src.w && oh == src.h) return src;
  ImageF out(ow, oh);
  double sx = static_cast<double>(src.w) / ow;
  double sy = static_cast<double>(src.h) / oh;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < oh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      for (int x = 0; x < ow; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        double v00 = sample_clamped(src.ch[c], src.w, src.h, x0, y0);
        double v10 = sample_clamped(src.ch[c], src.w, src.h, x0 + 1, y0);
        double v01 = sample_clamped(src.ch[c], src.w, src.h, x0, y0 + 1);
        double v11 = sample_clamped(src.ch[c], src.w, src.h, x0 + 1, y0 + 1);
        out.at(c, x, y) = static_cast<float>((1 - wy) * ((1 - wx) * v00 + wx * v10) +
                                             wy * ((1 - wx) * v01 + wx * v11));
      }
    }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& src, int ow, int oh) {
  if (ow == src.w && oh == src.h) return src;
  return to_u8(resize_bilinear(to_float(src), ow, oh));
}

Eigen::Matrix3d tilt_homography(int w, int h, double tilt_deg) {
  double f = static_cast<double>(w);
  double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  double a = tilt_deg * 3.14159265358979323846 / 180.0;
  Eigen::Matrix3d K, Rx;
  K << f, 0, cx, 0, f, cy, 0, 0, 1;
  Rx << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return K * Rx * K.inverse();
}

ImageU8 warp_homography(const ImageU8& src, const Eigen::Matrix3d& out_to_src) {
  ImageU8 out(src.w, src.h);
  ImageF srcf = to_float(src);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      Eigen::Vector3d p = out_to_src * Eigen::Vector3d(x, y, 1.0);
      double u = p.x() / p.z(), v = p.y() / p.z();
      int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      double wx = u - x0, wy = v - y0;
      auto* q = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double v00 = sample_clamped(srcf.ch[c], src.w, src.h, x0, y0);
        double v10 = sample_clamped(srcf.ch[c], src.w, src.h, x0 + 1, y0);
        double v01 = sample_clamped(srcf.ch[c], src.w, src.h, x0, y0 + 1);
        double v11 = sample_clamped(srcf.ch[c], src.w, src.h, x0 + 1, y0 + 1);
        double val = (1 - wy) * ((1 - wx) * v00 + wx * v10) + wy * ((1 - wx) * v01 + wx * v11);
        val = val < 0.0 ? 0.0 : (val > 1.0 ? 1.0 : val);
        q[c] = static_cast<std::uint8_t>(std::lround(val * 255.0));
      }
    }
  return out;
}

void fill(ImageU8& img, Color c) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto* p = img.px(x, y);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
}

namespace {

inline void put(ImageU8& img, int x, int y, Color c) {
  if (!img.inside(x, y)) return;
  auto* p = img.px(x, y);
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

}  // namespace

void draw_disc(ImageU8& img, double cx, double cy, double radius, Color c) {
  int x0 = static_cast<int>(std::floor(cx - radius)), x1 = static_cast<int>(std::ceil(cx + radius));
  int y0 = static_cast<int>(std::floor(cy - radius)), y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= radius * radius) put(img, x, y, c);
    }
}

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, Color c, double thickness) {
  double dx = x1 - x0, dy = y1 - y0;
  double len = std::sqrt(dx * dx + dy * dy);
  int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
  double rad = 0.5 * thickness;
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    double px = x0 + t * dx, py = y0 + t * dy;
    if (rad <= 0.5) {
      put(img, static_cast<int>(std::lround(px)), static_cast<int>(std::lround(py)), c);
    } else {
      draw_disc(img, px, py, rad, c);
    }
  }
}

void draw_cross(ImageU8& img, double cx, double cy, double half, Color c, double thickness) {
  draw_line(img, cx - half, cy - half, cx + half, cy + half, c, thickness);
  draw_line(img, cx - half, cy + half, cx + half, cy - half, c, thickness);
}

void draw_triangle(ImageU8& img, double cx, double cy, double size, double angle_rad, Color c) {
  // Apex points along angle_rad measured counterclockwise from +x with image
  // y increasing downward, so screen-up is angle pi/2.
  double ax = std::cos(angle_rad), ay = -std::sin(angle_rad);
  double bx = -ay, by = ax;
  double p0x = cx + ax * size, p0y = cy + ay * size;
  double p1x = cx - ax * size * 0.6 + bx * size * 0.7, p1y = cy - ay * size * 0.6 + by * size * 0.7;
  double p2x = cx - ax * size * 0.6 - bx * size * 0.7, p2y = cy - ay * size * 0.6 - by * size * 0.7;
  int x0 = static_cast<int>(std::floor(std::min({p0x, p1x, p2x})));
  int x1 = static_cast<int>(std::ceil(std::max({p0x, p1x, p2x})));
  int y0 = static_cast<int>(std::floor(std::min({p0y, p1y, p2y})));
  int y1 = static_cast<int>(std::ceil(std::max({p0y, p1y, p2y})));
  auto edge = [](double ax_, double ay_, double bx_, double by_, double px_, double py_) {
    return (bx_ - ax_) * (py_ - ay_) - (by_ - ay_) * (px_ - ax_);
  };
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double e0 = edge(p0x, p0y, p1x, p1y, x, y);
      double e1 = edge(p1x, p1y, p2x, p2y, x, y);
      double e2 = edge(p2x, p2y, p0x, p0y, x, y);
      if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) put(img, x, y, c);
    }
}

void draw_circle_outline(ImageU8& img, double cx, double cy, double radius, Color c, double thickness) {
  int n = std::max(12, static_cast<int>(radius * 8));
  for (int i = 0; i < n; ++i) {
    double a = 2.0 * 3.14159265358979323846 * i / n;
    draw_disc(img, cx + radius * std::cos(a), cy + radius * std::sin(a), 0.5 * thickness, c);
  }
}

void draw_star(ImageU8& img, double cx, double cy, double radius, Color c) {
  for (int i = 0; i < 5; ++i) {
    double a0 = -3.14159265358979323846 / 2 + i * 2 * 3.14159265358979323846 / 5;
    double a1 = a0 + 2 * 3.14159265358979323846 * 2 / 5;
    draw_line(img, cx + radius * std::cos(a0), cy + radius * std::sin(a0), cx + radius * std::cos(a1),
              cy + radius * std::sin(a1), c, 1.5);
  }
}

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (msb of the 5 = left column).
struct Glyph {
  char ch;
  std::uint8_t rows[7];
};

constexpr Glyph kGlyphs[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1e}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const auto& g : kGlyphs)
    if (g.ch == ch) return &g;
  return nullptr;
}

}  // namespace

int text_width(const std::string& text, int scale) {
  return static_cast<int>(text.size()) * 6 * scale;
}

void draw_text(ImageU8& img, int x, int y, const std::string& text, Color c, int scale) {
  int cx = x;
  for (char ch : text) {
    const Glyph* g = find_glyph(ch);
    if (g) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (g->rows[row] & (1 << (4 - col)))
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx) put(img, cx + col * scale + sx, y + row * scale + sy, c);
    }
    cx += 6 * scale;
  }
}

}  // namespace dmsd
