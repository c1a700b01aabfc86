#pragma once

// Minimal reader/writer for the TOML subset used by network and scenario files:
//   [section]
//   key = "string" | 1.5 | true | ["a", "b"] | { k = v, ... }
// Comments start with '#'. Key order is preserved.

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace mswq::toml {

struct Value;
using Array = std::vector<Value>;

struct Table {
  std::vector<std::pair<std::string, Value>> entries;

  const Value* find(const std::string& key) const;
  bool contains(const std::string& key) const { return find(key) != nullptr; }
  void set(std::string key, Value v);
};

struct Value {
  std::variant<double, bool, std::string, Array, Table> data;
  int line = 0;

  bool is_number() const { return std::holds_alternative<double>(data); }
  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }
  bool is_table() const { return std::holds_alternative<Table>(data); }

  // Typed accessors throw ValidationError naming the line on type mismatch.
  double as_number() const;
  bool as_bool() const;
  const std::string& as_string() const;
  const Array& as_array() const;
  const Table& as_table() const;
};

struct Section {
  std::string name;
  int line = 0;
  Table table;
};

struct Document {
  std::vector<Section> sections;

  const Section* section(const std::string& name) const;
};

/// Parses text; syntax errors are reported as ValidationError("line N: ...").
Document parse(const std::string& text);

std::string format_value(const Value& v);
std::string format(const Document& doc);

// Convenience builders for writers.
Value number(double x);
Value string(std::string s);
Value boolean(bool b);
Value array(Array a);
Value table(Table t);

}  // namespace mswq::toml
