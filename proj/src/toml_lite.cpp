#include "mswq/toml_lite.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mswq/errors.hpp"

namespace mswq::toml {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw ValidationError("line " + std::to_string(line) + ": " + what);
}

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
}

class LineParser {
 public:
  LineParser(const std::string& text, int line) : s_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }

  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }

  void expect(char c) {
    if (peek() != c) fail(line_, std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string key() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '"') return quoted();
    std::size_t start = pos_;
    while (pos_ < s_.size() && is_bare_key_char(s_[pos_])) ++pos_;
    if (start == pos_) fail(line_, "expected a key");
    return s_.substr(start, pos_ - start);
  }

  std::string quoted() {
    expect('"');
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) break;
        char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(line_, std::string("unknown escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    if (pos_ >= s_.size()) fail(line_, "unterminated string");
    ++pos_;
    return out;
  }

  Value value() {
    Value v;
    v.line = line_;
    char c = peek();
    if (c == '"') {
      v.data = quoted();
    } else if (c == '[') {
      ++pos_;
      Array arr;
      if (peek() == ']') {
        ++pos_;
      } else {
        for (;;) {
          arr.push_back(value());
          char d = peek();
          if (d == ',') {
            ++pos_;
            if (peek() == ']') {
              ++pos_;
              break;
            }
            continue;
          }
          if (d == ']') {
            ++pos_;
            break;
          }
          fail(line_, "expected ',' or ']' in array");
        }
      }
      v.data = std::move(arr);
    } else if (c == '{') {
      ++pos_;
      Table t;
      if (peek() == '}') {
        ++pos_;
      } else {
        for (;;) {
          std::string k = key();
          expect('=');
          Value inner = value();
          if (t.contains(k)) fail(line_, "duplicate key '" + k + "' in inline table");
          t.entries.emplace_back(std::move(k), std::move(inner));
          char d = peek();
          if (d == ',') {
            ++pos_;
            continue;
          }
          if (d == '}') {
            ++pos_;
            break;
          }
          fail(line_, "expected ',' or '}' in inline table");
        }
      }
      v.data = std::move(t);
    } else if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      v.data = true;
    } else if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      v.data = false;
    } else {
      std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                  s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_'))
        ++pos_;
      std::string tok = s_.substr(start, pos_ - start);
      tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
      if (tok.empty()) fail(line_, "expected a value");
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) fail(line_, "invalid value '" + tok + "'");
      v.data = x;
    }
    return v;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
  int line_;
};

std::string format_number(double x) {
  if (std::isfinite(x) && x == std::floor(x) && std::fabs(x) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(x) << ".0";
    return os.str();
  }
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::string format_key(const std::string& k) {
  bool bare = !k.empty();
  for (char c : k) bare = bare && is_bare_key_char(c);
  return bare ? k : format_value(string(k));
}

}  // namespace

const Value* Table::find(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return &v;
  return nullptr;
}

void Table::set(std::string key, Value v) {
  for (auto& [k, old] : entries) {
    if (k == key) {
      old = std::move(v);
      return;
    }
  }
  entries.emplace_back(std::move(key), std::move(v));
}

double Value::as_number() const {
  if (!is_number()) fail(line, "expected a number");
  return std::get<double>(data);
}
bool Value::as_bool() const {
  if (!is_bool()) fail(line, "expected true/false");
  return std::get<bool>(data);
}
const std::string& Value::as_string() const {
  if (!is_string()) fail(line, "expected a string");
  return std::get<std::string>(data);
}
const Array& Value::as_array() const {
  if (!is_array()) fail(line, "expected an array");
  return std::get<Array>(data);
}
const Table& Value::as_table() const {
  if (!is_table()) fail(line, "expected an inline table");
  return std::get<Table>(data);
}

const Section* Document::section(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

Document parse(const std::string& text) {
  Document doc;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  Section* current = nullptr;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    LineParser p(raw, line);
    if (p.at_end_or_comment()) continue;
    if (p.peek() == '[') {
      p.expect('[');
      std::string name = p.key();
      p.expect(']');
      if (!p.at_end_or_comment()) fail(line, "trailing characters after section header");
      if (doc.section(name)) fail(line, "duplicate section [" + name + "]");
      doc.sections.push_back(Section{name, line, {}});
      current = &doc.sections.back();
      continue;
    }
    if (!current) fail(line, "key/value pair outside of any section");
    std::string k = p.key();
    p.expect('=');
    Value v = p.value();
    if (!p.at_end_or_comment()) fail(line, "trailing characters after value");
    if (current->table.contains(k)) fail(line, "duplicate key '" + k + "' in [" + current->name + "]");
    current->table.entries.emplace_back(std::move(k), std::move(v));
  }
  return doc;
}

std::string format_value(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_number(x);
        } else if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char c : x) {
            if (c == '"' || c == '\\') out += '\\';
            if (c == '\n') {
              out += "\\n";
              continue;
            }
            out += c;
          }
          return out + "\"";
        } else if constexpr (std::is_same_v<T, Array>) {
          std::string out = "[";
          for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + format_value(x[i]);
          return out + "]";
        } else {
          std::string out = "{ ";
          for (std::size_t i = 0; i < x.entries.size(); ++i)
            out += (i ? ", " : "") + format_key(x.entries[i].first) + " = " + format_value(x.entries[i].second);
          return out + " }";
        }
      },
      v.data);
}

std::string format(const Document& doc) {
  std::string out;
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    const auto& s = doc.sections[i];
    if (i) out += '\n';
    out += "[" + s.name + "]\n";
    for (const auto& [k, v] : s.table.entries) out += format_key(k) + " = " + format_value(v) + "\n";
  }
  return out;
}

Value number(double x) { return Value{x, 0}; }
Value string(std::string s) { return Value{std::move(s), 0}; }
Value boolean(bool b) { return Value{b, 0}; }
Value array(Array a) { return Value{std::move(a), 0}; }
Value table(Table t) { return Value{std::move(t), 0}; }

}  // namespace mswq::toml
