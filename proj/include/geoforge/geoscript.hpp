#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "geoforge/digest.hpp"
#include "geoforge/error.hpp"

namespace geoforge::geoscript {

enum class ErrorKind {
  SyntaxError,
  UndeclaredName,
  DuplicateName,
  InvalidStatement,
  DegenerateScene,
  RasterFailure,
  Timeout,
  NonZeroExit,
  MissingOutput,
  InvalidConfig,
};

class GeoScriptError : public KindedError<ErrorKind> {
 public:
  GeoScriptError(ErrorKind kind, const std::string& message, int line = 0, int column = 0, std::string name = {})
      : KindedError(kind, message), line_(line), column_(column), name_(std::move(name)) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& name() const noexcept { return name_; }

 private:
  int line_;
  int column_;
  std::string name_;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

enum class Stroke { Solid, Dashed };

struct PointDecl {
  std::string name;
  Point at;
  bool operator==(const PointDecl&) const = default;
};

struct Segment {
  std::string a;
  std::string b;
  Stroke style = Stroke::Solid;
  bool operator==(const Segment&) const = default;
};

struct Circle {
  std::string center;
  double radius = 1.0;
  Stroke style = Stroke::Solid;
  bool operator==(const Circle&) const = default;
};

struct Polygon {
  std::vector<std::string> vertices;
  Stroke style = Stroke::Solid;
  bool operator==(const Polygon&) const = default;
};

struct AngleMark {
  std::string a;
  std::string vertex;
  std::string b;
  std::string label;
  bool operator==(const AngleMark&) const = default;
};

struct Label {
  std::variant<std::string, Point> anchor;
  std::string text;
  std::optional<Point> offset;
  bool operator==(const Label&) const = default;
};

struct Comment {
  std::string text;  // everything after '#'
  bool operator==(const Comment&) const = default;
};

using Statement = std::variant<PointDecl, Segment, Circle, Polygon, AngleMark, Label, Comment>;

// Points and comments are not both drawn: every statement except a comment
// produces exactly one top-level SVG element.
bool is_drawable(const Statement& statement);

struct SceneProgram {
  std::vector<Statement> statements;
  std::map<std::string, Point> points;
  bool operator==(const SceneProgram&) const = default;
};

// Line-oriented recursive-descent parse. Throws SyntaxError, UndeclaredName,
// DuplicateName or InvalidStatement with 1-based line/column.
SceneProgram parse_scene(std::string_view text);

// Canonical text form; parse_scene(print_scene(p)) == p, and print_scene is
// the identity on its own output.
std::string print_scene(const SceneProgram& program);

struct ViewBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double width = 1.0;
  double height = 1.0;
};

struct RenderOptions {
  double margin = 1.0;
  double stroke_width = 0.04;
  double font_size = 0.5;
  // Replace a zero-extent axis with a unit extent instead of failing.
  bool force_unit_viewbox = false;
};

// Bounding box of points, circle extents and label anchors, grown by margin.
ViewBox compute_viewbox(const SceneProgram& program, const RenderOptions& options);

// Arc radius used for an angle mark whose adjacent sides have these lengths.
double angle_mark_radius(double side_a, double side_b);

// Deterministic SVG. Scene y points up; the flip happens once in the
// top-level group transform.
std::string render_svg(const SceneProgram& program, const RenderOptions& options = {});

// Rasterizes SVG produced by render_svg to an 8-bit grayscale PNG of
// width_px x round(width_px * height / width).
Bytes rasterize(std::string_view svg, int width_px);

struct ImageSize {
  int width = 0;
  int height = 0;
};

// Reads the IHDR of a PNG; throws RasterFailure on anything else.
ImageSize png_size(std::span<const std::uint8_t> png);

// Encodes 8-bit grayscale rows (width*height bytes) as PNG.
Bytes encode_gray_png(int width, int height, std::span<const std::uint8_t> pixels);

}  // namespace geoforge::geoscript
