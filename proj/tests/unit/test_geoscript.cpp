#include <cmath>
#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "scene_gen.hpp"
#include "geoforge/fsutil.hpp"
#include "geoforge/geoscript.hpp"
#include "support.hpp"

using namespace geoforge;
using namespace geoforge::geoscript;
using testing::SceneGen;
using testing::shoelace;

namespace {

const char* const k_triangle = "point A=(0,0)\npoint B=(4,0)\npoint C=(0,3)\npolygon A B C";

}  // namespace

TEST_SUITE("geoscript") {
  TEST_CASE("the triangle program parses into four statements and three points") {
    const auto p = parse_scene(k_triangle);
    CHECK(p.statements.size() == 4);
    CHECK(p.points.size() == 3);
    CHECK(p.points.at("B") == Point{4, 0});
    CHECK(std::get<Polygon>(p.statements[3]).vertices == std::vector<std::string>{"A", "B", "C"});
  }

  TEST_CASE("use before declaration names the point and line") {
    try {
      parse_scene("segment A B");
      FAIL("expected UndeclaredName");
    } catch (const GeoScriptError& e) {
      CHECK(e.kind() == ErrorKind::UndeclaredName);
      CHECK(e.name() == "A");
      CHECK(e.line() == 1);
    }
  }

  TEST_CASE("syntax errors carry line and column") {
    try {
      parse_scene("point A = (0, 0)\npoint B = (0 0)");
      FAIL("expected SyntaxError");
    } catch (const GeoScriptError& e) {
      CHECK(e.kind() == ErrorKind::SyntaxError);
      CHECK(e.line() == 2);
      CHECK(e.column() == 14);
      CHECK(std::string(e.what()).find("expected ','") != std::string::npos);
    }
    auto kind = [](const char* text) {
      try {
        parse_scene(text);
      } catch (const GeoScriptError& e) {
        return e.kind();
      }
      FAIL("no error for: " << text);
      return ErrorKind::InvalidConfig;
    };
    CHECK(kind("point A=(0,0)\npoint A=(1,1)") == ErrorKind::DuplicateName);
    CHECK(kind("point A=(0,0)\ncircle A 0") == ErrorKind::InvalidStatement);
    CHECK(kind("point A=(0,0)\npoint B=(1,1)\npolygon A B") == ErrorKind::InvalidStatement);
    CHECK(kind("point A=(0,0)\npoint B=(1,1)\npolygon A B A") == ErrorKind::InvalidStatement);
    CHECK(kind("point A=(0,0)\npoint B=(1,1)\nangle A B A \"x\"") == ErrorKind::InvalidStatement);
    CHECK(kind("triangle A B C") == ErrorKind::SyntaxError);
    CHECK(kind("point segment=(0,0)") == ErrorKind::SyntaxError);
    CHECK(kind("label (0,0) \"unterminated") == ErrorKind::SyntaxError);
  }

  TEST_CASE("comments, blank lines and trailing comments") {
    const auto p = parse_scene("# header\n\npoint A=(1,2) # trailing\n  \n");
    REQUIRE(p.statements.size() == 2);
    CHECK(std::get<Comment>(p.statements[0]).text == " header");
    CHECK(print_scene(p) == "# header\npoint A = (1, 2)\n");
  }

  TEST_CASE("print and parse are inverse on 10000 random programs") {
    SceneGen gen(2024);
    for (int i = 0; i < 10000; ++i) {
      const SceneProgram p = gen.program(12);
      const std::string text = print_scene(p);
      const SceneProgram back = parse_scene(text);
      if (!(back == p)) FAIL("round trip changed program:\n" << text);
      if (print_scene(back) != text) FAIL("printing is not stable:\n" << text);
    }
  }

  TEST_CASE("no input up to 64 KiB aborts the parser") {
    std::mt19937_64 rng(5);
    SceneGen gen(6);
    int structured = 0;
    for (int i = 0; i < 10000; ++i) {
      std::string input;
      const int mode = i % 4;
      if (mode == 0) {
        const int n = i % 97 == 0 ? 64 * 1024 : testing::rand_int(rng, 0, 256);
        for (int j = 0; j < n; ++j) input.push_back(static_cast<char>(rng() & 0xff));
      } else if (mode == 1) {
        input = testing::rand_text(rng, 0, i % 101 == 1 ? 60000 : 300);
        if (input.size() > 64 * 1024) input.resize(64 * 1024);
      } else {
        // Mutated valid programs reach deeper into the grammar.
        input = print_scene(gen.program(10));
        const int edits = testing::rand_int(rng, 1, 4);
        for (int e = 0; e < edits && !input.empty(); ++e) {
          const auto at = uniform_index(rng, input.size());
          switch (rng() % 3) {
            case 0: input.erase(at, 1); break;
            case 1: input.insert(at, 1, "()=,\"#-.e9 \nAB"[uniform_index(rng, 14)]); break;
            default: input[at] = static_cast<char>(rng() & 0xff);
          }
        }
      }
      REQUIRE(input.size() <= 64 * 1024);
      try {
        parse_scene(input);
      } catch (const GeoScriptError& e) {
        ++structured;
        CHECK(e.line() >= 1);
      }
    }
    CHECK(structured > 0);
  }

  TEST_CASE("the triangle renders to the golden SVG") {
    const auto p = parse_scene(k_triangle);
    const std::string svg = render_svg(p);
    // Hand-computed: x in [0,4], y in [0,3], grown by 1 on every side.
    CHECK(svg.find("viewBox=\"-1 -1 6 5\"") != std::string::npos);
    const auto elements = testing::svg_drawn_elements(svg);
    REQUIRE(elements.size() == 4);
    CHECK(elements[3] == "<polygon points=\"0.0000,0.0000 4.0000,0.0000 0.0000,3.0000\"/>");
    CHECK(svg == read_file_text(testing::fixtures_dir() / "geoscript" / "triangle.svg"));
  }

  TEST_CASE("rendering is byte deterministic") {
    SceneGen gen(17);
    for (int i = 0; i < 50; ++i) {
      const auto p = gen.program(15);
      RenderOptions o;
      o.force_unit_viewbox = true;
      CHECK(render_svg(p, o) == render_svg(parse_scene(print_scene(p)), o));
    }
  }

  TEST_CASE("a single point with no margin is degenerate unless forced") {
    const auto p = parse_scene("point A=(2,3)");
    RenderOptions o;
    o.margin = 0;
    try {
      render_svg(p, o);
      FAIL("expected DegenerateScene");
    } catch (const GeoScriptError& e) {
      CHECK(e.kind() == ErrorKind::DegenerateScene);
    }
    CHECK_THROWS_AS(render_svg(parse_scene("# nothing"), {}), GeoScriptError);
    o.force_unit_viewbox = true;
    CHECK(render_svg(p, o).find("viewBox=\"1.5 2.5 1 1\"") != std::string::npos);
  }

  TEST_CASE("one drawing element per drawable statement") {
    SceneGen gen(31);
    for (int i = 0; i < 500; ++i) {
      const auto p = gen.program(20);
      RenderOptions o;
      o.force_unit_viewbox = true;
      const auto drawable = std::count_if(p.statements.begin(), p.statements.end(), is_drawable);
      CHECK(static_cast<long>(testing::svg_drawn_elements(render_svg(p, o)).size()) == drawable);
    }
  }

  TEST_CASE("every declared point lies inside the viewBox on 1000 random scenes") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 1000; ++i) {
      SceneProgram p;
      const int n = testing::rand_int(rng, 2, 12);
      std::string text;
      for (int k = 0; k < n; ++k) {
        text += "point P" + std::to_string(k) + "=(" + std::to_string(testing::rand_int(rng, -2000, 2000) / 100.0) +
                "," + std::to_string(testing::rand_int(rng, -2000, 2000) / 100.0) + ")\n";
      }
      text += "circle P0 " + std::to_string(testing::rand_int(rng, 1, 300) / 100.0) + "\n";
      p = parse_scene(text);
      RenderOptions o;
      o.margin = testing::rand_int(rng, 0, 200) / 100.0;
      o.force_unit_viewbox = true;
      const ViewBox box = testing::svg_viewbox(render_svg(p, o));
      const double flip = 2 * box.min_y + box.height;  // group transform: y -> flip - y
      for (const auto& [name, pt] : p.points) {
        const double sx = pt.x;
        const double sy = flip - pt.y;
        CHECK(sx >= box.min_x - 1e-6);
        CHECK(sx <= box.min_x + box.width + 1e-6);
        CHECK(sy >= box.min_y - 1e-6);
        CHECK(sy <= box.min_y + box.height + 1e-6);
        CHECK(sx - box.min_x >= o.margin - 1e-6);
        CHECK(box.min_x + box.width - sx >= o.margin - 1e-6);
      }
    }
  }

  TEST_CASE("polygon orientation survives rendering on 1000 random polygons") {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 1000; ++i) {
      const int n = testing::rand_int(rng, 3, 8);
      std::vector<Point> declared;
      std::string text;
      do {
        declared.clear();
        text.clear();
        for (int k = 0; k < n; ++k) {
          const Point pt{testing::rand_int(rng, -1000, 1000) / 100.0, testing::rand_int(rng, -1000, 1000) / 100.0};
          declared.push_back(pt);
          text += fmt::format("point V{} = ({}, {})\n", k, pt.x, pt.y);
        }
      } while (shoelace(declared) == 0.0);
      text += "polygon";
      for (int k = 0; k < n; ++k) text += " V" + std::to_string(k);
      const auto emitted = testing::svg_polygon_points(render_svg(parse_scene(text)));
      REQUIRE(emitted.size() == declared.size());
      CHECK((shoelace(emitted) > 0) == (shoelace(declared) > 0));
    }
  }

  TEST_CASE("angle mark radius is 12% of the shorter side, clamped") {
    CHECK(angle_mark_radius(5, 3) == doctest::Approx(0.36));
    CHECK(angle_mark_radius(1, 1) == doctest::Approx(0.2));
    CHECK(angle_mark_radius(100, 50) == doctest::Approx(1.0));
  }

  TEST_CASE("raster dimensions follow the viewBox aspect ratio") {
    const auto p = parse_scene(k_triangle);
    RenderOptions wide;
    wide.margin = 1.5;  // 7 x 6 box
    auto size = png_size(rasterize(render_svg(p, wide), 600));
    CHECK(size.width == 600);
    CHECK(size.height == 514);

    const Bytes png = rasterize(render_svg(p), 600);  // 6 x 5 box
    size = png_size(png);
    CHECK(size.width == 600);
    CHECK(size.height == 500);

    const Bytes tiny = rasterize(render_svg(p), 1);
    CHECK(!tiny.empty());
    CHECK(png_size(tiny).width == 1);
    CHECK(png_size(tiny).height == 1);
  }

  TEST_CASE("raster output is deterministic and not blank") {
    const std::string svg = render_svg(parse_scene(k_triangle));
    CHECK(rasterize(svg, 120) == rasterize(svg, 120));
    CHECK(rasterize(svg, 120) != rasterize(render_svg(parse_scene("point A=(0,0)\npoint B=(4,3)\nsegment A B")), 120));
  }

  TEST_CASE("invalid SVG fails to rasterize") {
    try {
      rasterize("this is not svg", 100);
      FAIL("expected RasterFailure");
    } catch (const GeoScriptError& e) {
      CHECK(e.kind() == ErrorKind::RasterFailure);
    }
    CHECK_THROWS_AS(rasterize("<svg xmlns=\"http://www.w3.org/2000/svg\">", 100), GeoScriptError);
    CHECK_THROWS_AS(rasterize(render_svg(parse_scene(k_triangle)), 0), GeoScriptError);
    CHECK_THROWS_AS(png_size(Bytes{1, 2, 3}), GeoScriptError);
  }

  TEST_CASE("gray PNG encoding round trips its header") {
    std::vector<std::uint8_t> pixels(7 * 3, 128);
    const Bytes png = encode_gray_png(7, 3, pixels);
    CHECK(png_size(png).width == 7);
    CHECK(png_size(png).height == 3);
  }
}
