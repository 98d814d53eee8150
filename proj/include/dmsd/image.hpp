#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dmsd/core.hpp"

namespace dmsd {

// Interleaved 8-bit RGB raster, row-major.
struct ImageU8 {
  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;

  ImageU8() = default;
  ImageU8(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 0) {}

  std::uint8_t* px(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * w + x); }
  const std::uint8_t* px(int x, int y) const { return rgb.data() + 3 * (static_cast<std::size_t>(y) * w + x); }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < w && y < h; }
};

// Planar float RGB in [0,1]; channel planes of h*w values, row-major.
struct ImageF {
  int w = 0, h = 0;
  std::array<std::vector<float>, 3> ch;

  ImageF() = default;
  ImageF(int w_, int h_) : w(w_), h(h_) {
    for (auto& c : ch) c.assign(static_cast<std::size_t>(w_) * h_, 0.0f);
  }
  float& at(int c, int x, int y) { return ch[c][static_cast<std::size_t>(y) * w + x]; }
  float at(int c, int x, int y) const { return ch[c][static_cast<std::size_t>(y) * w + x]; }
};

ImageU8 to_u8(const ImageF& img);
ImageF to_float(const ImageU8& img);

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Bilinear resample to (ow, oh); identity when sizes match.
ImageF resize_bilinear(const ImageF& src, int ow, int oh);
ImageU8 resize_bilinear(const ImageU8& src, int ow, int oh);

// Perspective warp by a 3x3 homography mapping output pixel coords to source
// coords (inverse warp); samples bilinearly, out-of-range reads clamp.
ImageU8 warp_homography(const ImageU8& src, const Eigen::Matrix3d& out_to_src);

// Homography for a camera tilted tilt_deg about the horizontal axis through
// the image center, focal length w pixels. Maps source -> warped coords.
Eigen::Matrix3d tilt_homography(int w, int h, double tilt_deg);

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

void fill(ImageU8& img, Color c);
void draw_disc(ImageU8& img, double cx, double cy, double radius, Color c);
void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, Color c, double thickness = 1.0);
void draw_cross(ImageU8& img, double cx, double cy, double half, Color c, double thickness = 1.5);
void draw_triangle(ImageU8& img, double cx, double cy, double size, double angle_rad, Color c);
void draw_circle_outline(ImageU8& img, double cx, double cy, double radius, Color c, double thickness = 1.5);
void draw_star(ImageU8& img, double cx, double cy, double radius, Color c);

// 5x7 bitmap glyphs for digits, '.', '%', ':', '-', and upper-case letters.
void draw_text(ImageU8& img, int x, int y, const std::string& text, Color c, int scale = 1);
int text_width(const std::string& text, int scale = 1);

}  // namespace dmsd
