#include <charconv>

#include <fmt/format.h>

#include "geoforge/geoscript.hpp"

namespace geoforge::geoscript {

bool is_drawable(const Statement& statement) { return !std::holds_alternative<Comment>(statement); }

namespace {

enum class Tok { Ident, Number, String, LParen, RParen, Comma, Equals, Comment, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;  // identifier, raw number, unescaped string, comment body
  double number = 0.0;
  int column = 1;
};

const char* describe(Tok t) {
  switch (t) {
    case Tok::Ident: return "a name";
    case Tok::Number: return "a number";
    case Tok::String: return "a quoted string";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::Comma: return "','";
    case Tok::Equals: return "'='";
    case Tok::Comment: return "a comment";
    case Tok::End: return "end of line";
  }
  return "token";
}

bool is_ident_start(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; }
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_keyword(std::string_view s) {
  return s == "point" || s == "segment" || s == "circle" || s == "polygon" || s == "angle" || s == "label" ||
         s == "dashed";
}

class LineLexer {
 public:
  LineLexer(std::string_view line, int line_no) : line_(line), line_no_(line_no) {}

  std::vector<Token> tokenize() {
    std::vector<Token> out;
    while (true) {
      while (pos_ < line_.size() && (line_[pos_] == ' ' || line_[pos_] == '\t' || line_[pos_] == '\r')) ++pos_;
      Token t;
      t.column = static_cast<int>(pos_) + 1;
      if (pos_ >= line_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      const char c = line_[pos_];
      if (c == '#') {
        t.kind = Tok::Comment;
        t.text = std::string(line_.substr(pos_ + 1));
        pos_ = line_.size();
      } else if (is_ident_start(c)) {
        const std::size_t start = pos_;
        while (pos_ < line_.size() && is_ident_char(line_[pos_])) ++pos_;
        t.kind = Tok::Ident;
        t.text = std::string(line_.substr(start, pos_ - start));
      } else if (is_digit(c) || c == '.' || c == '-' || c == '+') {
        t = number();
      } else if (c == '"') {
        t = string();
      } else if (c == '(' || c == ')' || c == ',' || c == '=') {
        t.kind = c == '(' ? Tok::LParen : c == ')' ? Tok::RParen : c == ',' ? Tok::Comma : Tok::Equals;
        ++pos_;
      } else {
        fail(t.column, fmt::format("unexpected character '{}'", printable(c)));
      }
      out.push_back(std::move(t));
    }
  }

  [[noreturn]] void fail(int column, const std::string& what) const {
    throw GeoScriptError(ErrorKind::SyntaxError, fmt::format("line {}, column {}: {}", line_no_, column, what),
                         line_no_, column);
  }

 private:
  static std::string printable(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) return std::string(1, c);
    return fmt::format("\\x{:02x}", u);
  }

  Token number() {
    Token t;
    t.column = static_cast<int>(pos_) + 1;
    const std::size_t start = pos_;
    if (line_[pos_] == '-' || line_[pos_] == '+') ++pos_;
    std::size_t digits = 0;
    while (pos_ < line_.size() && is_digit(line_[pos_])) ++pos_, ++digits;
    if (pos_ < line_.size() && line_[pos_] == '.') {
      ++pos_;
      while (pos_ < line_.size() && is_digit(line_[pos_])) ++pos_, ++digits;
    }
    if (digits == 0) fail(t.column, "expected digits in number");
    if (pos_ < line_.size() && (line_[pos_] == 'e' || line_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < line_.size() && (line_[pos_] == '-' || line_[pos_] == '+')) ++pos_;
      std::size_t exp_digits = 0;
      while (pos_ < line_.size() && is_digit(line_[pos_])) ++pos_, ++exp_digits;
      if (exp_digits == 0) fail(t.column, "expected digits in exponent");
    }
    if (pos_ < line_.size() && is_ident_char(line_[pos_])) fail(static_cast<int>(pos_) + 1, "malformed number");
    std::string_view raw = line_.substr(start, pos_ - start);
    std::string_view parse_from = raw.front() == '+' ? raw.substr(1) : raw;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(parse_from.data(), parse_from.data() + parse_from.size(), value);
    if (ec != std::errc() || ptr != parse_from.data() + parse_from.size()) {
      fail(t.column, fmt::format("number '{}' out of range", raw));
    }
    t.kind = Tok::Number;
    t.text = std::string(raw);
    t.number = value;
    return t;
  }

  Token string() {
    Token t;
    t.column = static_cast<int>(pos_) + 1;
    t.kind = Tok::String;
    ++pos_;
    while (true) {
      if (pos_ >= line_.size()) fail(t.column, "unterminated string");
      const char c = line_[pos_];
      if (c == '"') {
        ++pos_;
        return t;
      }
      if (c == '\\') {
        if (pos_ + 1 >= line_.size()) fail(static_cast<int>(pos_) + 1, "unterminated escape");
        const char e = line_[pos_ + 1];
        if (e != '"' && e != '\\') fail(static_cast<int>(pos_) + 1, "unknown escape (only \\\" and \\\\)");
        t.text.push_back(e);
        pos_ += 2;
        continue;
      }
      t.text.push_back(c);
      ++pos_;
    }
  }

  std::string_view line_;
  int line_no_;
  std::size_t pos_ = 0;
};

class StatementParser {
 public:
  StatementParser(std::vector<Token> tokens, int line_no, LineLexer& lexer, std::map<std::string, Point>& points)
      : tokens_(std::move(tokens)), line_no_(line_no), lexer_(lexer), points_(points) {}

  std::optional<Statement> parse() {
    const Token& head = peek();
    if (head.kind == Tok::End) return std::nullopt;
    if (head.kind == Tok::Comment) {
      Comment c{head.text};
      return c;
    }
    if (head.kind != Tok::Ident) expected("a statement keyword");
    const std::string kw = take().text;
    Statement s;
    if (kw == "point") s = point();
    else if (kw == "segment") s = segment();
    else if (kw == "circle") s = circle();
    else if (kw == "polygon") s = polygon();
    else if (kw == "angle") s = angle();
    else if (kw == "label") s = label();
    else {
      throw GeoScriptError(ErrorKind::SyntaxError,
                           fmt::format("line {}, column 1: unknown statement '{}' (expected point, segment, circle, "
                                       "polygon, angle or label)",
                                       line_no_, kw),
                           line_no_, 1);
    }
    // A trailing comment is allowed and dropped.
    if (peek().kind == Tok::Comment) take();
    if (peek().kind != Tok::End) expected("end of line");
    return s;
  }

 private:
  const Token& peek() const { return tokens_[index_]; }
  Token take() {
    Token t = tokens_[index_];
    if (index_ + 1 < tokens_.size()) ++index_;
    return t;
  }

  [[noreturn]] void expected(const std::string& what) const {
    const Token& t = peek();
    lexer_.fail(t.column, fmt::format("expected {}, found {}", what, t.kind == Tok::Ident || t.kind == Tok::Number
                                                                         ? "'" + t.text + "'"
                                                                         : describe(t.kind)));
  }

  Token expect(Tok kind) {
    if (peek().kind != kind) expected(describe(kind));
    return take();
  }

  double number() { return expect(Tok::Number).number; }

  std::string new_name() {
    const Token t = expect(Tok::Ident);
    if (is_keyword(t.text)) lexer_.fail(t.column, fmt::format("'{}' is a keyword and cannot name a point", t.text));
    if (points_.count(t.text) != 0) {
      throw GeoScriptError(ErrorKind::DuplicateName, fmt::format("line {}: point '{}' declared twice", line_no_, t.text),
                           line_no_, t.column, t.text);
    }
    return t.text;
  }

  std::string used_name() {
    if (peek().kind != Tok::Ident || is_keyword(peek().text)) expected("a point name");
    const Token t = take();
    if (points_.count(t.text) == 0) {
      throw GeoScriptError(ErrorKind::UndeclaredName,
                           fmt::format("line {}: point '{}' used before declaration", line_no_, t.text), line_no_,
                           t.column, t.text);
    }
    return t.text;
  }

  Stroke style() {
    if (peek().kind == Tok::Ident && peek().text == "dashed") {
      take();
      return Stroke::Dashed;
    }
    return Stroke::Solid;
  }

  Point coordinate() {
    expect(Tok::LParen);
    Point p;
    p.x = number();
    expect(Tok::Comma);
    p.y = number();
    expect(Tok::RParen);
    return p;
  }

  [[noreturn]] void invalid(const std::string& what) const {
    throw GeoScriptError(ErrorKind::InvalidStatement, fmt::format("line {}: {}", line_no_, what), line_no_, 1);
  }

  PointDecl point() {
    PointDecl d;
    d.name = new_name();
    expect(Tok::Equals);
    d.at = coordinate();
    points_[d.name] = d.at;
    return d;
  }

  Segment segment() {
    Segment s;
    s.a = used_name();
    s.b = used_name();
    s.style = style();
    if (s.a == s.b) invalid("segment endpoints must differ");
    return s;
  }

  Circle circle() {
    Circle c;
    c.center = used_name();
    const Token r = expect(Tok::Number);
    c.radius = r.number;
    if (!(c.radius > 0.0)) invalid("circle radius must be > 0");
    c.style = style();
    return c;
  }

  Polygon polygon() {
    Polygon p;
    while (peek().kind == Tok::Ident && peek().text != "dashed") p.vertices.push_back(used_name());
    p.style = style();
    if (p.vertices.size() < 3) invalid("polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < p.vertices.size(); ++i) {
      for (std::size_t j = i + 1; j < p.vertices.size(); ++j) {
        if (p.vertices[i] == p.vertices[j]) invalid("polygon vertices must be distinct");
      }
    }
    return p;
  }

  AngleMark angle() {
    AngleMark a;
    a.a = used_name();
    a.vertex = used_name();
    a.b = used_name();
    a.label = expect(Tok::String).text;
    if (a.a == a.vertex || a.a == a.b || a.vertex == a.b) invalid("angle points must be pairwise distinct");
    return a;
  }

  Label label() {
    Label l;
    if (peek().kind == Tok::LParen) l.anchor = coordinate();
    else l.anchor = used_name();
    l.text = expect(Tok::String).text;
    if (peek().kind == Tok::Number) {
      Point off;
      off.x = number();
      off.y = number();
      l.offset = off;
    }
    return l;
  }

  std::vector<Token> tokens_;
  std::size_t index_ = 0;
  int line_no_;
  LineLexer& lexer_;
  std::map<std::string, Point>& points_;
};

}  // namespace

SceneProgram parse_scene(std::string_view text) {
  SceneProgram program;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    const std::string_view line = text.substr(pos, nl - pos);
    LineLexer lexer(line, line_no);
    StatementParser parser(lexer.tokenize(), line_no, lexer, program.points);
    if (auto s = parser.parse()) program.statements.push_back(std::move(*s));
    pos = nl + 1;
  }
  return program;
}

namespace {

std::string real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string dashed(Stroke s) { return s == Stroke::Dashed ? " dashed" : ""; }

}  // namespace

std::string print_scene(const SceneProgram& program) {
  std::string out;
  for (const auto& statement : program.statements) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, PointDecl>) {
            out += fmt::format("point {} = ({}, {})", s.name, real(s.at.x), real(s.at.y));
          } else if constexpr (std::is_same_v<T, Segment>) {
            out += fmt::format("segment {} {}{}", s.a, s.b, dashed(s.style));
          } else if constexpr (std::is_same_v<T, Circle>) {
            out += fmt::format("circle {} {}{}", s.center, real(s.radius), dashed(s.style));
          } else if constexpr (std::is_same_v<T, Polygon>) {
            out += "polygon";
            for (const auto& v : s.vertices) out += " " + v;
            out += dashed(s.style);
          } else if constexpr (std::is_same_v<T, AngleMark>) {
            out += fmt::format("angle {} {} {} {}", s.a, s.vertex, s.b, quoted(s.label));
          } else if constexpr (std::is_same_v<T, Label>) {
            out += "label ";
            if (const auto* name = std::get_if<std::string>(&s.anchor)) out += *name;
            else {
              const Point& p = std::get<Point>(s.anchor);
              out += fmt::format("({}, {})", real(p.x), real(p.y));
            }
            out += " " + quoted(s.text);
            if (s.offset) out += fmt::format(" {} {}", real(s.offset->x), real(s.offset->y));
          } else {
            out += "#" + s.text;
          }
        },
        statement);
    out += '\n';
  }
  return out;
}

}  // namespace geoforge::geoscript
