#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace fieldlock {

enum class ValueType : std::uint8_t { Integer, Boolean, Text };

using Value = std::variant<std::int64_t, bool, std::string>;

[[nodiscard]] inline ValueType type_of(const Value& v) noexcept {
  return static_cast<ValueType>(v.index());
}

[[nodiscard]] inline std::string_view type_name(ValueType t) noexcept {
  switch (t) {
    case ValueType::Integer: return "integer";
    case ValueType::Boolean: return "boolean";
    case ValueType::Text: return "text";
  }
  return "?";
}

[[nodiscard]] inline Value default_value(ValueType t) {
  switch (t) {
    case ValueType::Integer: return std::int64_t{0};
    case ValueType::Boolean: return false;
    case ValueType::Text: return std::string{};
  }
  throw std::logic_error("unknown value type");
}

[[nodiscard]] inline std::string quote_text(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

// Literal syntax shared by the operation language, workload files and logs.
[[nodiscard]] inline std::string format_value(const Value& v) {
  switch (type_of(v)) {
    case ValueType::Integer: return std::to_string(std::get<std::int64_t>(v));
    case ValueType::Boolean: return std::get<bool>(v) ? "true" : "false";
    case ValueType::Text: return quote_text(std::get<std::string>(v));
  }
  return {};
}

}  // namespace fieldlock
