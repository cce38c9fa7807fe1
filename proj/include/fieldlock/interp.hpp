#pragma once

// Instrumented execution of operation bodies.
//
// While an operation runs, its dynamic access vector starts all-Null and is
// raised monotonically: a field read in an expression becomes Read unless it
// is already Write, and an assigned field becomes Write. The prior value of a
// field is captured the first time it is written; restoring those values is
// the inverse of the execution.

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fieldlock/core.hpp"
#include "fieldlock/dsl.hpp"
#include "fieldlock/value.hpp"

namespace fieldlock {

class ExecutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InstanceValue {
  std::shared_ptr<const AdtSchema> schema;
  std::vector<Value> values;

  InstanceValue() = default;
  InstanceValue(std::shared_ptr<const AdtSchema> s, std::vector<Value> v)
      : schema(std::move(s)), values(std::move(v)) {
    if (!conforms()) throw ExecutionError("instance values do not conform to adt '" + schema->name + "'");
  }

  // All fields at their type's default value.
  static InstanceValue defaults(std::shared_ptr<const AdtSchema> s) {
    std::vector<Value> v;
    for (const auto& f : s->fields) v.push_back(default_value(f.type));
    return InstanceValue(std::move(s), std::move(v));
  }

  [[nodiscard]] bool conforms() const {
    if (!schema || values.size() != schema->dimension()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (type_of(values[i]) != schema->fields[i].type) return false;
    }
    return true;
  }

  friend bool operator==(const InstanceValue& a, const InstanceValue& b) { return a.values == b.values; }
};

struct ExecutionRecord {
  std::string op;
  std::vector<Value> args;
  std::optional<Value> result;
  AccessVector dynamic_dav;
  std::map<std::size_t, Value> before_image;  // field index -> value before first write
};

// Write exactly where a before-image was taken.
[[nodiscard]] inline AccessVector inverse_vector(const ExecutionRecord& record) {
  AccessVector v(record.dynamic_dav.size());
  for (const auto& [field, _] : record.before_image) v[field] = AccessMode::Write;
  return v;
}

// Raised when a body faults mid-way (division by zero). Carries the partial
// record so the writes made so far can be undone.
class ExecutionFault : public ExecutionError {
 public:
  ExecutionFault(const std::string& message, ExecutionRecord partial)
      : ExecutionError(message), partial_(std::move(partial)) {}
  [[nodiscard]] const ExecutionRecord& partial() const noexcept { return partial_; }

 private:
  ExecutionRecord partial_;
};

namespace detail {

inline std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}

class Execution {
 public:
  Execution(const OperationDef& op, std::span<const Value> args, InstanceValue& instance)
      : op_(op), args_(args), instance_(instance) {
    record_.op = op.name;
    record_.args.assign(args.begin(), args.end());
    record_.dynamic_dav = AccessVector(instance.values.size());
  }

  ExecutionRecord run() {
    run_block(op_.body);
    return std::move(record_);
  }

 private:
  // Returns true once a `return` has executed.
  bool run_block(const Block& block) {
    for (const auto& stmt : block) {
      if (run_statement(stmt)) return true;
    }
    return false;
  }

  bool run_statement(const Stmt& stmt) {
    if (const auto* fa = std::get_if<FieldAssign>(&stmt.node)) {
      Value v = eval(fa->value);
      if (!record_.before_image.contains(fa->field)) {
        record_.before_image.emplace(fa->field, instance_.values[fa->field]);
      }
      record_.dynamic_dav[fa->field] = AccessMode::Write;
      instance_.values[fa->field] = std::move(v);
      return false;
    }
    if (const auto* la = std::get_if<LocalAssign>(&stmt.node)) {
      locals_[la->name] = eval(la->value);
      return false;
    }
    if (const auto* branch = std::get_if<If>(&stmt.node)) {
      if (std::get<bool>(eval(branch->condition))) return run_block(branch->then_branch);
      if (branch->else_branch) return run_block(*branch->else_branch);
      return false;
    }
    const auto& ret = std::get<Return>(stmt.node);
    record_.result = eval(ret.value);
    return true;
  }

  Value eval(const Expr& e) {
    return std::visit(
        [&](const auto& node) -> Value {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Literal>) {
            return node.value;
          } else if constexpr (std::is_same_v<T, FieldRef>) {
            record_.dynamic_dav.upgrade(node.index, AccessMode::Read);
            return instance_.values[node.index];
          } else if constexpr (std::is_same_v<T, ParamRef>) {
            return args_[node.index];
          } else if constexpr (std::is_same_v<T, LocalRef>) {
            return locals_.at(node.name);
          } else if constexpr (std::is_same_v<T, Unary>) {
            Value v = eval(*node.operand);
            if (node.op == UnaryOp::Not) return !std::get<bool>(v);
            return wrap_sub(0, std::get<std::int64_t>(v));
          } else {
            return eval_binary(node);
          }
        },
        e.node);
  }

  Value eval_binary(const Binary& b) {
    // Both sides are always evaluated, so every occurrence counts as a read.
    Value lhs = eval(*b.lhs);
    Value rhs = eval(*b.rhs);
    switch (b.op) {
      case BinaryOp::Add:
        if (type_of(lhs) == ValueType::Text) return std::get<std::string>(lhs) + std::get<std::string>(rhs);
        return wrap_add(std::get<std::int64_t>(lhs), std::get<std::int64_t>(rhs));
      case BinaryOp::Sub: return wrap_sub(std::get<std::int64_t>(lhs), std::get<std::int64_t>(rhs));
      case BinaryOp::Mul: return wrap_mul(std::get<std::int64_t>(lhs), std::get<std::int64_t>(rhs));
      case BinaryOp::Div: {
        auto d = std::get<std::int64_t>(rhs);
        auto n = std::get<std::int64_t>(lhs);
        if (d == 0) throw ExecutionFault("division by zero in '" + op_.name + "'", std::move(record_));
        if (d == -1) return wrap_sub(0, n);
        return n / d;
      }
      case BinaryOp::Eq: return lhs == rhs;
      case BinaryOp::Ne: return lhs != rhs;
      case BinaryOp::Lt: return std::get<std::int64_t>(lhs) < std::get<std::int64_t>(rhs);
      case BinaryOp::Le: return std::get<std::int64_t>(lhs) <= std::get<std::int64_t>(rhs);
      case BinaryOp::Gt: return std::get<std::int64_t>(lhs) > std::get<std::int64_t>(rhs);
      case BinaryOp::Ge: return std::get<std::int64_t>(lhs) >= std::get<std::int64_t>(rhs);
      case BinaryOp::And: return std::get<bool>(lhs) && std::get<bool>(rhs);
      case BinaryOp::Or: return std::get<bool>(lhs) || std::get<bool>(rhs);
    }
    throw std::logic_error("unhandled binary operator");
  }

  const OperationDef& op_;
  std::span<const Value> args_;
  InstanceValue& instance_;
  ExecutionRecord record_;
  std::unordered_map<std::string, Value> locals_;
};

}  // namespace detail

// Runs `op` against `instance`, mutating it. Throws ExecutionFault on a
// runtime fault; the instance then holds the partial writes listed in the
// fault's record.
inline ExecutionRecord execute(const OperationDef& op, std::span<const Value> args,
                               InstanceValue& instance) {
  if (args.size() != op.params.size()) {
    throw ExecutionError("'" + op.name + "' takes " + std::to_string(op.params.size()) +
                         " arguments, got " + std::to_string(args.size()));
  }
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (type_of(args[i]) != op.params[i].type) {
      throw ExecutionError("argument '" + op.params[i].name + "' of '" + op.name + "' must be " +
                           std::string(type_name(op.params[i].type)));
    }
  }
  if (op.static_dav.size() != instance.values.size()) {
    throw DimensionError("operation '" + op.name + "' does not belong to this instance's adt");
  }
  return detail::Execution(op, args, instance).run();
}

// Universal inverse: put back every logged before-image. Touches no other
// field and never reads any field.
inline AccessVector apply_inverse(const ExecutionRecord& record, InstanceValue& instance) {
  if (record.dynamic_dav.size() != instance.values.size()) {
    throw DimensionError("execution record does not match the instance's adt");
  }
  for (const auto& [field, value] : record.before_image) {
    if (field >= instance.values.size() || type_of(value) != type_of(instance.values[field])) {
      throw ExecutionError("before-image does not match the instance's adt");
    }
  }
  for (const auto& [field, value] : record.before_image) instance.values[field] = value;
  return inverse_vector(record);
}

}  // namespace fieldlock
