#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "geoforge/geoscript.hpp"

namespace geoforge::geoscript {
namespace {

// Fixed four-decimal formatting; negative zero is folded to zero so the
// output does not depend on the sign of rounding noise.
std::string num(double v) {
  std::string s = fmt::format("{:.4f}", v);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

// viewBox is written compactly: four decimals with trailing zeros dropped.
std::string compact(double v) {
  std::string s = num(v);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

std::string escape_xml(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

Point anchor_point(const Label& l, const SceneProgram& program) {
  Point p = std::holds_alternative<Point>(l.anchor) ? std::get<Point>(l.anchor)
                                                    : program.points.at(std::get<std::string>(l.anchor));
  if (l.offset) {
    p.x += l.offset->x;
    p.y += l.offset->y;
  }
  return p;
}

double length(Point a, Point b) { return std::hypot(b.x - a.x, b.y - a.y); }

}  // namespace

double angle_mark_radius(double side_a, double side_b) {
  return std::clamp(0.12 * std::min(side_a, side_b), 0.2, 1.0);
}

ViewBox compute_viewbox(const SceneProgram& program, const RenderOptions& options) {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  auto grow = [&](double x, double y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  };
  for (const auto& [name, p] : program.points) grow(p.x, p.y);
  for (const auto& s : program.statements) {
    if (const auto* c = std::get_if<Circle>(&s)) {
      const Point& o = program.points.at(c->center);
      grow(o.x - c->radius, o.y - c->radius);
      grow(o.x + c->radius, o.y + c->radius);
    } else if (const auto* l = std::get_if<Label>(&s)) {
      const Point p = anchor_point(*l, program);
      grow(p.x, p.y);
    }
  }
  if (!std::isfinite(min_x)) {
    if (!options.force_unit_viewbox) throw GeoScriptError(ErrorKind::DegenerateScene, "scene has no geometry");
    min_x = min_y = max_x = max_y = 0.0;
  }
  const double m = std::max(0.0, options.margin);
  ViewBox box{min_x - m, min_y - m, (max_x - min_x) + 2 * m, (max_y - min_y) + 2 * m};
  if (!(box.width > 0.0) || !(box.height > 0.0)) {
    if (!options.force_unit_viewbox) {
      throw GeoScriptError(ErrorKind::DegenerateScene, "scene has zero area (all points coincident or collinear on an axis)");
    }
    if (!(box.width > 0.0)) {
      box.min_x -= 0.5;
      box.width = 1.0;
    }
    if (!(box.height > 0.0)) {
      box.min_y -= 0.5;
      box.height = 1.0;
    }
  }
  return box;
}

std::string render_svg(const SceneProgram& program, const RenderOptions& options) {
  const ViewBox box = compute_viewbox(program, options);
  const double sw = options.stroke_width;
  const double fs = options.font_size;
  const std::string dash = fmt::format(" stroke-dasharray=\"{} {}\"", num(5 * sw), num(2.5 * sw));
  auto dash_attr = [&](Stroke s) { return s == Stroke::Dashed ? dash : std::string{}; };

  // Text is drawn upright inside the flipped group by flipping it back.
  auto text_element = [&](Point p, std::string_view text, const char* cls) {
    return fmt::format(
        "<text class=\"{}\" x=\"{}\" y=\"{}\" transform=\"scale(1 -1)\" fill=\"black\" stroke=\"none\" "
        "text-anchor=\"middle\" dominant-baseline=\"middle\">{}</text>",
        cls, num(p.x), num(-p.y), escape_xml(text));
  };

  std::string out;
  out += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">\n", compact(box.min_x),
                     compact(box.min_y), compact(box.width), compact(box.height));
  out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", num(box.min_x),
                     num(box.min_y), num(box.width), num(box.height));
  out += fmt::format(
      "<g transform=\"matrix(1 0 0 -1 0 {})\" fill=\"none\" stroke=\"black\" stroke-width=\"{}\" font-size=\"{}\">\n",
      num(2 * box.min_y + box.height), num(sw), num(fs));

  for (const auto& statement : program.statements) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, PointDecl>) {
            out += fmt::format("<circle class=\"point\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"black\" stroke=\"none\"/>\n",
                               num(s.at.x), num(s.at.y), num(2 * sw));
          } else if constexpr (std::is_same_v<T, Segment>) {
            const Point a = program.points.at(s.a);
            const Point b = program.points.at(s.b);
            out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"{}/>\n", num(a.x), num(a.y), num(b.x),
                               num(b.y), dash_attr(s.style));
          } else if constexpr (std::is_same_v<T, Circle>) {
            const Point o = program.points.at(s.center);
            out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"{}\"{}/>\n", num(o.x), num(o.y), num(s.radius),
                               dash_attr(s.style));
          } else if constexpr (std::is_same_v<T, Polygon>) {
            std::string pts;
            for (const auto& v : s.vertices) {
              const Point p = program.points.at(v);
              if (!pts.empty()) pts += ' ';
              pts += num(p.x) + "," + num(p.y);
            }
            out += fmt::format("<polygon points=\"{}\"{}/>\n", pts, dash_attr(s.style));
          } else if constexpr (std::is_same_v<T, AngleMark>) {
            const Point a = program.points.at(s.a);
            const Point v = program.points.at(s.vertex);
            const Point b = program.points.at(s.b);
            const double la = length(v, a);
            const double lb = length(v, b);
            const double r = angle_mark_radius(la, lb);
            const Point ua = la > 0 ? Point{(a.x - v.x) / la, (a.y - v.y) / la} : Point{1, 0};
            const Point ub = lb > 0 ? Point{(b.x - v.x) / lb, (b.y - v.y) / lb} : Point{1, 0};
            const Point start{v.x + r * ua.x, v.y + r * ua.y};
            const Point end{v.x + r * ub.x, v.y + r * ub.y};
            const double cross = ua.x * ub.y - ua.y * ub.x;
            const int sweep = cross > 0 ? 1 : 0;
            out += "<g class=\"angle\">";
            out += fmt::format("<path d=\"M {} {} A {} {} 0 0 {} {} {}\"/>", num(start.x), num(start.y), num(r), num(r),
                               sweep, num(end.x), num(end.y));
            if (!s.label.empty()) {
              Point bis{ua.x + ub.x, ua.y + ub.y};
              double bl = std::hypot(bis.x, bis.y);
              if (bl < 1e-9) {
                bis = {-ua.y, ua.x};
                bl = 1.0;
              }
              const Point at{v.x + 1.6 * r * bis.x / bl, v.y + 1.6 * r * bis.y / bl};
              out += text_element(at, s.label, "angle-label");
            }
            out += "</g>\n";
          } else if constexpr (std::is_same_v<T, Label>) {
            out += text_element(anchor_point(s, program), s.text, "label");
            out += '\n';
          }
        },
        statement);
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace geoforge::geoscript
