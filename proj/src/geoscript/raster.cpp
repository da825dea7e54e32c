// Minimal rasterizer for the SVG subset emitted by render_svg: svg, g, rect,
// line, polyline, polygon, circle, path (M/L/A/Z) and text. Anything outside
// that subset is ignored if well formed and rejected otherwise.
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>

#include <fmt/format.h>

#include "geoforge/geoscript.hpp"

namespace geoforge::geoscript {
namespace {

constexpr double k_pi = 3.14159265358979323846;
constexpr int k_max_dimension = 16384;

[[noreturn]] void fail(const std::string& why) { throw GeoScriptError(ErrorKind::RasterFailure, "raster: " + why); }

// 5x7 glyphs, one byte per column, bit 0 is the top row. 0x20..0x7E, then a
// degree sign.
constexpr std::array<std::uint8_t, 96 * 5> k_font = {
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x5F, 0x00, 0x00, 0x00, 0x07, 0x00, 0x07, 0x00, 0x14, 0x7F, 0x14,
    0x7F, 0x14, 0x24, 0x2A, 0x7F, 0x2A, 0x12, 0x23, 0x13, 0x08, 0x64, 0x62, 0x36, 0x49, 0x55, 0x22, 0x50, 0x00,
    0x05, 0x03, 0x00, 0x00, 0x00, 0x1C, 0x22, 0x41, 0x00, 0x00, 0x41, 0x22, 0x1C, 0x00, 0x08, 0x2A, 0x1C, 0x2A,
    0x08, 0x08, 0x08, 0x3E, 0x08, 0x08, 0x00, 0x50, 0x30, 0x00, 0x00, 0x08, 0x08, 0x08, 0x08, 0x08, 0x00, 0x60,
    0x60, 0x00, 0x00, 0x20, 0x10, 0x08, 0x04, 0x02, 0x3E, 0x51, 0x49, 0x45, 0x3E, 0x00, 0x42, 0x7F, 0x40, 0x00,
    0x42, 0x61, 0x51, 0x49, 0x46, 0x21, 0x41, 0x45, 0x4B, 0x31, 0x18, 0x14, 0x12, 0x7F, 0x10, 0x27, 0x45, 0x45,
    0x45, 0x39, 0x3C, 0x4A, 0x49, 0x49, 0x30, 0x01, 0x71, 0x09, 0x05, 0x03, 0x36, 0x49, 0x49, 0x49, 0x36, 0x06,
    0x49, 0x49, 0x29, 0x1E, 0x00, 0x36, 0x36, 0x00, 0x00, 0x00, 0x56, 0x36, 0x00, 0x00, 0x08, 0x14, 0x22, 0x41,
    0x00, 0x14, 0x14, 0x14, 0x14, 0x14, 0x00, 0x41, 0x22, 0x14, 0x08, 0x02, 0x01, 0x51, 0x09, 0x06, 0x32, 0x49,
    0x79, 0x41, 0x3E, 0x7E, 0x11, 0x11, 0x11, 0x7E, 0x7F, 0x49, 0x49, 0x49, 0x36, 0x3E, 0x41, 0x41, 0x41, 0x22,
    0x7F, 0x41, 0x41, 0x22, 0x1C, 0x7F, 0x49, 0x49, 0x49, 0x41, 0x7F, 0x09, 0x09, 0x01, 0x01, 0x3E, 0x41, 0x41,
    0x51, 0x32, 0x7F, 0x08, 0x08, 0x08, 0x7F, 0x00, 0x41, 0x7F, 0x41, 0x00, 0x20, 0x40, 0x41, 0x3F, 0x01, 0x7F,
    0x08, 0x14, 0x22, 0x41, 0x7F, 0x40, 0x40, 0x40, 0x40, 0x7F, 0x02, 0x04, 0x02, 0x7F, 0x7F, 0x04, 0x08, 0x10,
    0x7F, 0x3E, 0x41, 0x41, 0x41, 0x3E, 0x7F, 0x09, 0x09, 0x09, 0x06, 0x3E, 0x41, 0x51, 0x21, 0x5E, 0x7F, 0x09,
    0x19, 0x29, 0x46, 0x46, 0x49, 0x49, 0x49, 0x31, 0x01, 0x01, 0x7F, 0x01, 0x01, 0x3F, 0x40, 0x40, 0x40, 0x3F,
    0x1F, 0x20, 0x40, 0x20, 0x1F, 0x7F, 0x20, 0x18, 0x20, 0x7F, 0x63, 0x14, 0x08, 0x14, 0x63, 0x03, 0x04, 0x78,
    0x04, 0x03, 0x61, 0x51, 0x49, 0x45, 0x43, 0x00, 0x00, 0x7F, 0x41, 0x41, 0x02, 0x04, 0x08, 0x10, 0x20, 0x41,
    0x41, 0x7F, 0x00, 0x00, 0x04, 0x02, 0x01, 0x02, 0x04, 0x40, 0x40, 0x40, 0x40, 0x40, 0x00, 0x01, 0x02, 0x04,
    0x00, 0x20, 0x54, 0x54, 0x54, 0x78, 0x7F, 0x48, 0x44, 0x44, 0x38, 0x38, 0x44, 0x44, 0x44, 0x20, 0x38, 0x44,
    0x44, 0x48, 0x7F, 0x38, 0x54, 0x54, 0x54, 0x18, 0x08, 0x7E, 0x09, 0x01, 0x02, 0x08, 0x14, 0x54, 0x54, 0x3C,
    0x7F, 0x08, 0x04, 0x04, 0x78, 0x00, 0x44, 0x7D, 0x40, 0x00, 0x20, 0x40, 0x44, 0x3D, 0x00, 0x00, 0x7F, 0x10,
    0x28, 0x44, 0x00, 0x41, 0x7F, 0x40, 0x00, 0x7C, 0x04, 0x18, 0x04, 0x78, 0x7C, 0x08, 0x04, 0x04, 0x78, 0x38,
    0x44, 0x44, 0x44, 0x38, 0x7C, 0x14, 0x14, 0x14, 0x08, 0x08, 0x14, 0x14, 0x18, 0x7C, 0x7C, 0x08, 0x04, 0x04,
    0x08, 0x48, 0x54, 0x54, 0x54, 0x20, 0x04, 0x3F, 0x44, 0x40, 0x20, 0x3C, 0x40, 0x40, 0x20, 0x7C, 0x1C, 0x20,
    0x40, 0x20, 0x1C, 0x3C, 0x40, 0x30, 0x40, 0x3C, 0x44, 0x28, 0x10, 0x28, 0x44, 0x0C, 0x50, 0x50, 0x50, 0x3C,
    0x44, 0x64, 0x54, 0x4C, 0x44, 0x00, 0x08, 0x36, 0x41, 0x00, 0x00, 0x00, 0x7F, 0x00, 0x00, 0x00, 0x41, 0x36,
    0x08, 0x00, 0x10, 0x08, 0x08, 0x10, 0x08, 0x00, 0x06, 0x09, 0x09, 0x06,
};
constexpr int k_degree_glyph = 95;

struct Vec {
  double x = 0;
  double y = 0;
};

struct Affine {
  double a = 1, b = 0, c = 0, d = 1, e = 0, f = 0;
  Vec apply(Vec p) const { return {a * p.x + c * p.y + e, b * p.x + d * p.y + f}; }
  Affine then(const Affine& inner) const {
    // this * inner: inner is applied first.
    return {a * inner.a + c * inner.b,     b * inner.a + d * inner.b,     a * inner.c + c * inner.d,
            b * inner.c + d * inner.d,     a * inner.e + c * inner.f + e, b * inner.e + d * inner.f + f};
  }
  double scale() const { return std::sqrt(std::abs(a * d - b * c)); }
};

// ---------------------------------------------------------------------------
// XML subset

struct Element {
  std::string name;
  std::map<std::string, std::string> attrs;
  bool self_closing = false;
  bool closing = false;
};

struct Token {
  enum Kind { Tag, Text } kind;
  Element element;
  std::string text;
};

std::string decode_entities(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    const auto semi = s.find(';', i);
    if (semi == std::string_view::npos) fail("unterminated entity");
    const std::string_view name = s.substr(i + 1, semi - i - 1);
    if (name == "amp") out.push_back('&');
    else if (name == "lt") out.push_back('<');
    else if (name == "gt") out.push_back('>');
    else if (name == "quot") out.push_back('"');
    else if (name == "apos") out.push_back('\'');
    else fail(fmt::format("unknown entity '&{};'", name));
    i = semi;
  }
  return out;
}

bool name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
         c == ':' || c == '.';
}

std::vector<Token> tokenize_xml(std::string_view src) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < src.size() && (src[i] == ' ' || src[i] == '\t' || src[i] == '\n' || src[i] == '\r')) ++i;
  };
  while (i < src.size()) {
    if (src[i] != '<') {
      const auto lt = src.find('<', i);
      const auto end = lt == std::string_view::npos ? src.size() : lt;
      tokens.push_back({Token::Text, {}, decode_entities(src.substr(i, end - i))});
      i = end;
      continue;
    }
    if (src.substr(i, 4) == "<!--") {
      const auto end = src.find("-->", i + 4);
      if (end == std::string_view::npos) fail("unterminated comment");
      i = end + 3;
      continue;
    }
    if (src.substr(i, 2) == "<?" || src.substr(i, 2) == "<!") {
      const auto end = src.find('>', i);
      if (end == std::string_view::npos) fail("unterminated declaration");
      i = end + 1;
      continue;
    }
    ++i;
    Element el;
    if (i < src.size() && src[i] == '/') {
      el.closing = true;
      ++i;
    }
    const std::size_t name_start = i;
    while (i < src.size() && name_char(src[i])) ++i;
    if (i == name_start) fail("expected element name");
    el.name = std::string(src.substr(name_start, i - name_start));
    while (true) {
      skip_ws();
      if (i >= src.size()) fail("unterminated tag <" + el.name + ">");
      if (src[i] == '>') {
        ++i;
        break;
      }
      if (src[i] == '/' && !el.closing) {
        if (i + 1 >= src.size() || src[i + 1] != '>') fail("stray '/' in tag <" + el.name + ">");
        el.self_closing = true;
        i += 2;
        break;
      }
      if (el.closing) fail("attributes on closing tag </" + el.name + ">");
      const std::size_t attr_start = i;
      while (i < src.size() && name_char(src[i])) ++i;
      if (i == attr_start) fail(fmt::format("unexpected character '{}' in tag <{}>", src[i], el.name));
      std::string attr(src.substr(attr_start, i - attr_start));
      skip_ws();
      if (i >= src.size() || src[i] != '=') fail("attribute '" + attr + "' has no value");
      ++i;
      skip_ws();
      if (i >= src.size() || (src[i] != '"' && src[i] != '\'')) fail("attribute '" + attr + "' is not quoted");
      const char quote = src[i++];
      const auto close = src.find(quote, i);
      if (close == std::string_view::npos) fail("unterminated attribute '" + attr + "'");
      if (!el.attrs.emplace(attr, decode_entities(src.substr(i, close - i))).second) {
        fail("duplicate attribute '" + attr + "'");
      }
      i = close + 1;
    }
    tokens.push_back({Token::Tag, std::move(el), {}});
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Attribute values

std::vector<double> parse_numbers(std::string_view s, const char* what) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == ' ' || c == ',' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    double v = 0;
    const char* begin = s.data() + i;
    // from_chars rejects a leading '+'.
    if (c == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (ec != std::errc() || !std::isfinite(v)) fail(fmt::format("bad number in {} '{}'", what, s));
    out.push_back(v);
    i = static_cast<std::size_t>(ptr - s.data());
  }
  return out;
}

double parse_length(const std::string& s, const char* what) {
  std::string_view v = s;
  if (v.size() > 2 && v.substr(v.size() - 2) == "px") v.remove_suffix(2);
  const auto nums = parse_numbers(v, what);
  if (nums.size() != 1) fail(fmt::format("expected one number for {}, got '{}'", what, s));
  return nums[0];
}

Affine parse_transform(std::string_view s) {
  Affine m;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == ' ' || s[i] == ',' || s[i] == '\t' || s[i] == '\n') {
      ++i;
      continue;
    }
    const auto open = s.find('(', i);
    const auto close = s.find(')', i);
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
      fail(fmt::format("bad transform '{}'", s));
    }
    std::string_view fn = s.substr(i, open - i);
    while (!fn.empty() && fn.back() == ' ') fn.remove_suffix(1);
    const auto args = parse_numbers(s.substr(open + 1, close - open - 1), "transform");
    Affine t;
    if (fn == "matrix" && args.size() == 6) {
      t = {args[0], args[1], args[2], args[3], args[4], args[5]};
    } else if (fn == "translate" && (args.size() == 1 || args.size() == 2)) {
      t.e = args[0];
      t.f = args.size() == 2 ? args[1] : 0.0;
    } else if (fn == "scale" && (args.size() == 1 || args.size() == 2)) {
      t.a = args[0];
      t.d = args.size() == 2 ? args[1] : args[0];
    } else {
      fail(fmt::format("unsupported transform '{}'", s.substr(i, close - i + 1)));
    }
    m = m.then(t);
    i = close + 1;
  }
  return m;
}

// Gray level in [0,1], or nullopt for "none".
std::optional<double> parse_paint(const std::string& s) {
  if (s == "none" || s == "transparent") return std::nullopt;
  if (s == "black") return 0.0;
  if (s == "white") return 1.0;
  if (s == "gray" || s == "grey") return 128.0 / 255.0;
  if (!s.empty() && s[0] == '#') {
    auto hex = [&](std::string_view h) {
      int v = 0;
      auto [ptr, ec] = std::from_chars(h.data(), h.data() + h.size(), v, 16);
      if (ec != std::errc() || ptr != h.data() + h.size()) fail("bad colour '" + s + "'");
      return v;
    };
    int r = 0, g = 0, b = 0;
    if (s.size() == 7) {
      r = hex(std::string_view(s).substr(1, 2));
      g = hex(std::string_view(s).substr(3, 2));
      b = hex(std::string_view(s).substr(5, 2));
    } else if (s.size() == 4) {
      r = hex(std::string_view(s).substr(1, 1)) * 17;
      g = hex(std::string_view(s).substr(2, 1)) * 17;
      b = hex(std::string_view(s).substr(3, 1)) * 17;
    } else {
      fail("bad colour '" + s + "'");
    }
    return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
  }
  fail("unsupported colour '" + s + "'");
}

// ---------------------------------------------------------------------------
// Canvas

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), gray_(static_cast<std::size_t>(w) * h, 1.0), mask_(gray_.size(), 0.0F) {}

  int width() const { return w_; }
  int height() const { return h_; }

  // Shapes accumulate coverage into the mask (max for strokes, sum for
  // fills) and are then composited once, so overlapping pieces of one shape
  // do not darken twice.
  void begin() {
    x0_ = w_;
    y0_ = h_;
    x1_ = -1;
    y1_ = -1;
  }

  void stroke_segment(Vec p, Vec q, double half_width) {
    const double pad = half_width + 1.0;
    const int xa = clamp_x(std::floor(std::min(p.x, q.x) - pad));
    const int xb = clamp_x(std::ceil(std::max(p.x, q.x) + pad));
    const int ya = clamp_y(std::floor(std::min(p.y, q.y) - pad));
    const int yb = clamp_y(std::ceil(std::max(p.y, q.y) + pad));
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    const double len2 = dx * dx + dy * dy;
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        const double cx = x + 0.5;
        const double cy = y + 0.5;
        double t = len2 > 0 ? ((cx - p.x) * dx + (cy - p.y) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double d = std::hypot(cx - (p.x + t * dx), cy - (p.y + t * dy));
        const double cov = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
        if (cov > 0) mark(x, y, static_cast<float>(cov), false);
      }
    }
  }

  // Even-odd fill, four sub-scanlines per pixel with exact horizontal spans.
  void fill_polygon(const std::vector<Vec>& pts) {
    if (pts.size() < 3) return;
    double min_y = pts[0].y;
    double max_y = pts[0].y;
    for (const auto& p : pts) {
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
    const int ya = clamp_y(std::floor(min_y));
    const int yb = clamp_y(std::ceil(max_y));
    std::vector<double> xs;
    for (int y = ya; y <= yb; ++y) {
      for (int sub = 0; sub < 4; ++sub) {
        const double sy = y + (sub + 0.5) / 4.0;
        xs.clear();
        for (std::size_t i = 0; i < pts.size(); ++i) {
          const Vec a = pts[i];
          const Vec b = pts[(i + 1) % pts.size()];
          if ((a.y <= sy) != (b.y <= sy)) xs.push_back(a.x + (sy - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) span(y, xs[k], xs[k + 1]);
      }
    }
  }

  void composite(double gray) {
    for (int y = y0_; y <= y1_; ++y) {
      for (int x = x0_; x <= x1_; ++x) {
        float& m = mask_[idx(x, y)];
        if (m <= 0) continue;
        const double a = std::min(1.0F, m);
        double& g = gray_[idx(x, y)];
        g = g * (1 - a) + gray * a;
        m = 0;
      }
    }
  }

  Bytes pixels() const {
    Bytes out(gray_.size());
    for (std::size_t i = 0; i < gray_.size(); ++i) {
      out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(gray_[i], 0.0, 1.0) * 255.0));
    }
    return out;
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int clamp_x(double v) const { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(w_ - 1))); }
  int clamp_y(double v) const { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(h_ - 1))); }

  void mark(int x, int y, float cov, bool additive) {
    float& m = mask_[idx(x, y)];
    m = additive ? m + cov : std::max(m, cov);
    x0_ = std::min(x0_, x);
    y0_ = std::min(y0_, y);
    x1_ = std::max(x1_, x);
    y1_ = std::max(y1_, y);
  }

  void span(int y, double xa, double xb) {
    xa = std::max(xa, 0.0);
    xb = std::min(xb, static_cast<double>(w_));
    if (xb <= xa) return;
    const int first = static_cast<int>(std::floor(xa));
    const int last = std::min(w_ - 1, static_cast<int>(std::ceil(xb)) - 1);
    for (int x = first; x <= last; ++x) {
      const double overlap = std::min(xb, x + 1.0) - std::max(xa, static_cast<double>(x));
      if (overlap > 0) mark(x, y, static_cast<float>(overlap / 4.0), true);
    }
  }

  int w_;
  int h_;
  std::vector<double> gray_;
  std::vector<float> mask_;
  int x0_ = 0, y0_ = 0, x1_ = -1, y1_ = -1;
};

// ---------------------------------------------------------------------------
// Drawing

struct Style {
  Affine ctm;
  std::optional<double> fill = 0.0;
  std::optional<double> stroke;
  double stroke_width = 1.0;
  std::vector<double> dashes;
  double font_size = 16.0;
  std::string text_anchor = "start";
  std::string baseline = "auto";
};

struct Path {
  std::vector<Vec> points;  // user space
  bool closed = false;
};

void flatten_arc(std::vector<Vec>& out, Vec p0, double rx, double ry, double phi_deg, bool large, bool sweep, Vec p1) {
  // Endpoint to centre parameterisation, then uniform subdivision.
  if (p0.x == p1.x && p0.y == p1.y) return;
  rx = std::abs(rx);
  ry = std::abs(ry);
  if (rx == 0 || ry == 0) {
    out.push_back(p1);
    return;
  }
  const double phi = phi_deg * k_pi / 180.0;
  const double cp = std::cos(phi);
  const double sp = std::sin(phi);
  const double hx = (p0.x - p1.x) / 2;
  const double hy = (p0.y - p1.y) / 2;
  const double x1p = cp * hx + sp * hy;
  const double y1p = -sp * hx + cp * hy;
  const double lambda = (x1p * x1p) / (rx * rx) + (y1p * y1p) / (ry * ry);
  if (lambda > 1) {
    rx *= std::sqrt(lambda);
    ry *= std::sqrt(lambda);
  }
  const double num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p;
  const double den = rx * rx * y1p * y1p + ry * ry * x1p * x1p;
  double coef = den > 0 ? std::sqrt(std::max(0.0, num / den)) : 0.0;
  if (large == sweep) coef = -coef;
  const double cxp = coef * rx * y1p / ry;
  const double cyp = -coef * ry * x1p / rx;
  const double cx = cp * cxp - sp * cyp + (p0.x + p1.x) / 2;
  const double cy = sp * cxp + cp * cyp + (p0.y + p1.y) / 2;
  const double theta1 = std::atan2((y1p - cyp) / ry, (x1p - cxp) / rx);
  double dtheta = std::atan2((-y1p - cyp) / ry, (-x1p - cxp) / rx) - theta1;
  if (sweep && dtheta < 0) dtheta += 2 * k_pi;
  if (!sweep && dtheta > 0) dtheta -= 2 * k_pi;
  const int steps = std::max(4, static_cast<int>(std::ceil(std::abs(dtheta) / (k_pi / 32))));
  for (int i = 1; i <= steps; ++i) {
    const double t = theta1 + dtheta * i / steps;
    const double ex = rx * std::cos(t);
    const double ey = ry * std::sin(t);
    out.push_back({cp * ex - sp * ey + cx, sp * ex + cp * ey + cy});
  }
  out.back() = p1;
}

std::vector<Path> parse_path_data(std::string_view d) {
  std::vector<Path> paths;
  std::size_t i = 0;
  char cmd = 0;
  Vec current;
  auto skip = [&] {
    while (i < d.size() && (d[i] == ' ' || d[i] == ',' || d[i] == '\t' || d[i] == '\n' || d[i] == '\r')) ++i;
  };
  auto number = [&] {
    skip();
    if (i >= d.size()) fail("path data ends early");
    double v = 0;
    const char* begin = d.data() + i;
    if (*begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, d.data() + d.size(), v);
    if (ec != std::errc() || !std::isfinite(v)) fail(fmt::format("bad number in path data '{}'", d));
    i = static_cast<std::size_t>(ptr - d.data());
    return v;
  };
  auto flag = [&] {
    skip();
    if (i >= d.size() || (d[i] != '0' && d[i] != '1')) fail("bad arc flag in path data");
    return d[i++] == '1';
  };
  while (true) {
    skip();
    if (i >= d.size()) break;
    const char c = d[i];
    if (std::isalpha(static_cast<unsigned char>(c))) {
      cmd = c;
      ++i;
    } else if (cmd == 0) {
      fail("path data must start with a command");
    }
    switch (cmd) {
      case 'M': {
        const double x = number();
        current = {x, number()};
        paths.push_back({{current}, false});
        cmd = 'L';  // implicit lineto for further pairs
        break;
      }
      case 'L': {
        if (paths.empty()) fail("lineto before moveto");
        const double x = number();
        current = {x, number()};
        paths.back().points.push_back(current);
        break;
      }
      case 'A': {
        if (paths.empty()) fail("arc before moveto");
        const double rx = number();
        const double ry = number();
        const double rot = number();
        const bool large = flag();
        const bool sweep = flag();
        const double x = number();
        const Vec end{x, number()};
        flatten_arc(paths.back().points, current, rx, ry, rot, large, sweep, end);
        current = end;
        break;
      }
      case 'Z':
      case 'z':
        if (paths.empty()) fail("closepath before moveto");
        paths.back().closed = true;
        current = paths.back().points.front();
        cmd = 0;
        break;
      default:
        fail(fmt::format("unsupported path command '{}'", cmd));
    }
  }
  return paths;
}

std::vector<Vec> circle_points(double cx, double cy, double r, double device_radius) {
  const int steps = std::clamp(static_cast<int>(std::ceil(2 * k_pi * device_radius / 2.0)), 16, 2048);
  std::vector<Vec> pts;
  pts.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double t = 2 * k_pi * i / steps;
    pts.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
  }
  return pts;
}

class Painter {
 public:
  explicit Painter(Canvas& canvas) : canvas_(canvas) {}

  void draw(const std::vector<Path>& paths, const Style& style, bool fillable) {
    if (fillable && style.fill) {
      canvas_.begin();
      for (const auto& p : paths) canvas_.fill_polygon(to_device(p.points, style));
      canvas_.composite(*style.fill);
    }
    if (style.stroke && style.stroke_width > 0) {
      canvas_.begin();
      const double hw = style.stroke_width * style.ctm.scale() / 2;
      for (const auto& p : paths) {
        std::vector<Vec> pts = to_device(p.points, style);
        if (p.closed && !pts.empty()) pts.push_back(pts.front());
        stroke_polyline(pts, hw, style);
      }
      canvas_.composite(*style.stroke);
    }
  }

  void text(Vec at, const std::string& content, const Style& style) {
    if (!style.fill) return;
    std::vector<int> glyphs;
    for (std::size_t i = 0; i < content.size(); ++i) {
      const auto c = static_cast<unsigned char>(content[i]);
      if (c >= 0x20 && c < 0x7F) {
        glyphs.push_back(c - 0x20);
      } else if (c == 0xC2 && i + 1 < content.size() && static_cast<unsigned char>(content[i + 1]) == 0xB0) {
        glyphs.push_back(k_degree_glyph);
        ++i;
      } else if (c >= 0x80) {
        // Other multi-byte characters render as '?'.
        while (i + 1 < content.size() && (static_cast<unsigned char>(content[i + 1]) & 0xC0) == 0x80) ++i;
        glyphs.push_back('?' - 0x20);
      }
    }
    if (glyphs.empty()) return;
    const Vec p = style.ctm.apply(at);
    const double unit = style.font_size * style.ctm.scale() / 8.0;
    const double width = (static_cast<double>(glyphs.size()) * 6 - 1) * unit;
    double left = p.x;
    if (style.text_anchor == "middle") left -= width / 2;
    else if (style.text_anchor == "end") left -= width;
    const double top = (style.baseline == "middle" || style.baseline == "central") ? p.y - 3.5 * unit : p.y - 7 * unit;

    canvas_.begin();
    for (std::size_t g = 0; g < glyphs.size(); ++g) {
      for (int col = 0; col < 5; ++col) {
        const std::uint8_t bits = k_font[static_cast<std::size_t>(glyphs[g]) * 5 + col];
        for (int row = 0; row < 7; ++row) {
          if (!(bits & (1U << row))) continue;
          const double x = left + (static_cast<double>(g) * 6 + col) * unit;
          const double y = top + row * unit;
          canvas_.fill_polygon({{x, y}, {x + unit, y}, {x + unit, y + unit}, {x, y + unit}});
        }
      }
    }
    canvas_.composite(*style.fill);
  }

 private:
  static std::vector<Vec> to_device(const std::vector<Vec>& pts, const Style& style) {
    std::vector<Vec> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(style.ctm.apply(p));
    return out;
  }

  void stroke_polyline(const std::vector<Vec>& pts, double hw, const Style& style) {
    if (pts.size() == 1) {
      canvas_.stroke_segment(pts[0], pts[0], hw);
      return;
    }
    double total = 0;
    for (double v : style.dashes) total += v;
    if (style.dashes.empty() || total <= 0) {
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) canvas_.stroke_segment(pts[i], pts[i + 1], hw);
      return;
    }
    // Odd-length dash arrays repeat to even length, as in SVG.
    std::vector<double> pattern = style.dashes;
    if (pattern.size() % 2 == 1) pattern.insert(pattern.end(), style.dashes.begin(), style.dashes.end());
    for (double& v : pattern) v *= style.ctm.scale();
    std::size_t slot = 0;
    double left = pattern[0];
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      Vec a = pts[i];
      const Vec b = pts[i + 1];
      double seg = std::hypot(b.x - a.x, b.y - a.y);
      while (seg > 0) {
        const double step = std::min(seg, left);
        const double t = step / seg;
        const Vec m{a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
        if (slot % 2 == 0) canvas_.stroke_segment(a, m, hw);
        a = m;
        seg -= step;
        left -= step;
        if (left <= 1e-9) {
          slot = (slot + 1) % pattern.size();
          left = pattern[slot];
        }
      }
    }
  }

  Canvas& canvas_;
};

double attr_number(const Element& el, const std::string& name, double fallback) {
  const auto it = el.attrs.find(name);
  return it == el.attrs.end() ? fallback : parse_length(it->second, name.c_str());
}

void apply_style_attrs(const Element& el, Style& style) {
  if (auto it = el.attrs.find("transform"); it != el.attrs.end()) style.ctm = style.ctm.then(parse_transform(it->second));
  if (auto it = el.attrs.find("fill"); it != el.attrs.end()) style.fill = parse_paint(it->second);
  if (auto it = el.attrs.find("stroke"); it != el.attrs.end()) style.stroke = parse_paint(it->second);
  if (auto it = el.attrs.find("stroke-width"); it != el.attrs.end()) style.stroke_width = parse_length(it->second, "stroke-width");
  if (auto it = el.attrs.find("stroke-dasharray"); it != el.attrs.end()) {
    style.dashes = it->second == "none" ? std::vector<double>{} : parse_numbers(it->second, "stroke-dasharray");
    for (double v : style.dashes) {
      if (v < 0) fail("negative dash length");
    }
  }
  if (auto it = el.attrs.find("font-size"); it != el.attrs.end()) style.font_size = parse_length(it->second, "font-size");
  if (auto it = el.attrs.find("text-anchor"); it != el.attrs.end()) style.text_anchor = it->second;
  if (auto it = el.attrs.find("dominant-baseline"); it != el.attrs.end()) style.baseline = it->second;
}

void draw_element(Painter& painter, const Element& el, const Style& style) {
  const std::string& n = el.name;
  if (n == "rect") {
    const double x = attr_number(el, "x", 0);
    const double y = attr_number(el, "y", 0);
    const double w = attr_number(el, "width", 0);
    const double h = attr_number(el, "height", 0);
    if (w < 0 || h < 0) fail("negative rect size");
    painter.draw({{{{x, y}, {x + w, y}, {x + w, y + h}, {x, y + h}}, true}}, style, true);
  } else if (n == "line") {
    const Vec a{attr_number(el, "x1", 0), attr_number(el, "y1", 0)};
    const Vec b{attr_number(el, "x2", 0), attr_number(el, "y2", 0)};
    painter.draw({{{a, b}, false}}, style, false);
  } else if (n == "polygon" || n == "polyline") {
    const auto it = el.attrs.find("points");
    const auto nums = it == el.attrs.end() ? std::vector<double>{} : parse_numbers(it->second, "points");
    if (nums.size() % 2 != 0) fail("odd number of coordinates in points");
    Path p;
    for (std::size_t i = 0; i < nums.size(); i += 2) p.points.push_back({nums[i], nums[i + 1]});
    p.closed = n == "polygon";
    painter.draw({p}, style, true);
  } else if (n == "circle") {
    const double r = attr_number(el, "r", 0);
    if (r < 0) fail("negative circle radius");
    if (r == 0) return;
    const double cx = attr_number(el, "cx", 0);
    const double cy = attr_number(el, "cy", 0);
    painter.draw({{circle_points(cx, cy, r, r * style.ctm.scale()), true}}, style, true);
  } else if (n == "path") {
    const auto it = el.attrs.find("d");
    if (it == el.attrs.end()) return;
    painter.draw(parse_path_data(it->second), style, true);
  }
}

}  // namespace

Bytes rasterize(std::string_view svg, int width_px) {
  if (width_px <= 0 || width_px > k_max_dimension) fail(fmt::format("width {} out of range", width_px));
  const auto tokens = tokenize_xml(svg);

  std::size_t pos = 0;
  while (pos < tokens.size() && tokens[pos].kind == Token::Text) {
    if (tokens[pos].text.find_first_not_of(" \t\r\n") != std::string::npos) fail("text before root element");
    ++pos;
  }
  if (pos == tokens.size()) fail("no root element");
  const Element& root = tokens[pos].element;
  if (root.name != "svg" || root.closing) fail("root element is not <svg>");
  const auto vb_it = root.attrs.find("viewBox");
  if (vb_it == root.attrs.end()) fail("missing viewBox");
  const auto vb = parse_numbers(vb_it->second, "viewBox");
  if (vb.size() != 4 || !(vb[2] > 0) || !(vb[3] > 0)) fail("viewBox must be four numbers with positive size");

  const double height_exact = width_px * vb[3] / vb[2];
  if (!(height_exact < k_max_dimension)) fail("image height out of range");
  const int height_px = std::max(1, static_cast<int>(std::lround(height_exact)));

  Canvas canvas(width_px, height_px);
  Painter painter(canvas);
  Style base;
  base.ctm = Affine{width_px / vb[2], 0, 0, height_px / vb[3], -vb[0] * width_px / vb[2], -vb[1] * height_px / vb[3]};
  apply_style_attrs(root, base);

  struct Frame {
    std::string name;
    Style style;
  };
  std::vector<Frame> stack{{"svg", base}};
  std::optional<std::pair<Vec, std::string>> pending_text;
  bool done = root.self_closing;
  if (done) stack.clear();

  for (++pos; pos < tokens.size(); ++pos) {
    const Token& tok = tokens[pos];
    if (tok.kind == Token::Text) {
      if (pending_text) pending_text->second += tok.text;
      else if (tok.text.find_first_not_of(" \t\r\n") != std::string::npos && stack.empty()) fail("text after root element");
      continue;
    }
    const Element& el = tok.element;
    if (stack.empty()) fail("element after root <svg>");
    if (el.closing) {
      if (stack.back().name != el.name) fail(fmt::format("</{}> does not close <{}>", el.name, stack.back().name));
      if (el.name == "text" && pending_text) {
        painter.text(pending_text->first, pending_text->second, stack.back().style);
        pending_text.reset();
      }
      stack.pop_back();
      continue;
    }
    Style style = stack.back().style;
    apply_style_attrs(el, style);
    if (el.name == "text") {
      const Vec at{attr_number(el, "x", 0), attr_number(el, "y", 0)};
      if (el.self_closing) continue;
      pending_text = std::make_pair(at, std::string{});
    } else {
      draw_element(painter, el, style);
    }
    if (!el.self_closing) stack.push_back({el.name, std::move(style)});
  }
  if (!stack.empty()) fail("unclosed <" + stack.back().name + ">");

  const Bytes pixels = canvas.pixels();
  return encode_gray_png(width_px, height_px, pixels);
}

}  // namespace geoforge::geoscript
