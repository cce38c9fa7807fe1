#pragma once

// Workload files (.wl):
//
//   use account.adt
//   instance acct: Account(balance=100, owner="ann")
//   txn t1 { acct.deposit(5); acct.getOwner() }
//
// `use` lines are taken verbatim to the end of the line (the path may be
// quoted) and resolved relative to the workload file. Fields missing from an
// instance declaration start at their type's default.

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fieldlock/dsl.hpp"
#include "fieldlock/interp.hpp"

namespace fieldlock {

struct WorkloadInstance {
  std::string name;
  InstanceValue initial;
};

struct ScriptStep {
  std::size_t instance = 0;
  const OperationDef* op = nullptr;  // owned by the instance's schema
  std::vector<Value> args;
};

struct TxnScript {
  std::string name;
  std::vector<ScriptStep> steps;
};

struct Workload {
  std::vector<std::shared_ptr<const AdtSchema>> schemas;
  std::vector<WorkloadInstance> instances;
  std::vector<TxnScript> txns;

  [[nodiscard]] std::optional<std::size_t> instance_index(std::string_view name) const {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].name == name) return i;
    }
    return std::nullopt;
  }
};

class WorkloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Maps a `use` path to the ADTs declared there.
using UseResolver = std::function<std::vector<AdtSchema>(const std::string& path)>;

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Pull out `use` lines, blanking them so positions in the rest stay valid.
inline std::string strip_use_lines(std::string_view text, std::vector<std::pair<std::string, int>>& uses) {
  std::string rest;
  int line_no = 1;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(start, end - start));
    bool is_use = line.rfind("use", 0) == 0 && (line.size() == 3 || line[3] == ' ' || line[3] == '\t');
    if (is_use) {
      std::string path = trim(std::string_view(line).substr(3));
      if (path.size() >= 2 && path.front() == '"' && path.back() == '"') path = path.substr(1, path.size() - 2);
      if (path.empty()) throw ParseError(ErrorKind::Syntax, SourcePos{line_no, 1}, "'use' needs a path");
      uses.emplace_back(path, line_no);
    } else {
      rest.append(text.substr(start, end - start));
    }
    if (end == text.size()) break;
    rest += '\n';
    start = end + 1;
    ++line_no;
  }
  return rest;
}

}  // namespace detail

[[nodiscard]] inline Workload parse_workload(std::string_view text, std::vector<AdtSchema> preloaded = {},
                                             const UseResolver& resolve = {}) {
  Workload w;
  std::vector<std::pair<std::string, int>> uses;
  std::string body = detail::strip_use_lines(text, uses);

  auto add_schema = [&](AdtSchema s, SourcePos pos) {
    for (const auto& existing : w.schemas) {
      if (existing->name == s.name) {
        if (*existing == s) return;
        throw ParseError(ErrorKind::DuplicateName, pos, "adt '" + s.name + "' declared twice");
      }
    }
    w.schemas.push_back(std::make_shared<const AdtSchema>(std::move(s)));
  };
  for (auto& s : preloaded) add_schema(std::move(s), SourcePos{});
  for (const auto& [path, line] : uses) {
    if (!resolve) throw ParseError(ErrorKind::Syntax, SourcePos{line, 1}, "'use' is not available here");
    for (auto& s : resolve(path)) add_schema(std::move(s), SourcePos{line, 1});
  }

  auto find_schema = [&](std::string_view name) -> std::shared_ptr<const AdtSchema> {
    for (const auto& s : w.schemas) {
      if (s->name == name) return s;
    }
    return nullptr;
  };

  detail::TokenCursor cur(tokenize(body));
  auto literal = [&](const char* what) {
    SourcePos pos = cur.peek().pos;
    auto v = detail::parse_literal(cur);
    if (!v) cur.fail(std::string("expected a literal ") + what + " but found " + detail::TokenCursor::describe(cur.peek()));
    return std::pair{*v, pos};
  };

  while (!cur.at_end()) {
    if (cur.accept_word("instance")) {
      const Token& name = cur.expect_ident();
      if (w.instance_index(name.text)) {
        throw ParseError(ErrorKind::DuplicateName, name.pos, "duplicate instance '" + name.text + "'");
      }
      cur.expect_symbol(":");
      const Token& adt = cur.expect_ident();
      auto schema = find_schema(adt.text);
      if (!schema) throw ParseError(ErrorKind::UnknownIdentifier, adt.pos, "unknown adt '" + adt.text + "'");
      InstanceValue value = InstanceValue::defaults(schema);
      std::vector<bool> seen(schema->dimension(), false);
      cur.expect_symbol("(");
      if (!cur.is_symbol(")")) {
        do {
          const Token& f = cur.expect_ident();
          auto idx = schema->field_index(f.text);
          if (!idx) {
            throw ParseError(ErrorKind::UnknownIdentifier, f.pos,
                             "adt '" + schema->name + "' has no field '" + f.text + "'");
          }
          if (seen[*idx]) throw ParseError(ErrorKind::DuplicateName, f.pos, "field '" + f.text + "' set twice");
          seen[*idx] = true;
          cur.expect_symbol("=");
          auto [v, pos] = literal("value");
          if (type_of(v) != schema->fields[*idx].type) {
            throw ParseError(ErrorKind::TypeMismatch, pos,
                             "field '" + f.text + "' is " + std::string(type_name(schema->fields[*idx].type)));
          }
          value.values[*idx] = std::move(v);
        } while (cur.accept_symbol(","));
      }
      cur.expect_symbol(")");
      w.instances.push_back(WorkloadInstance{name.text, std::move(value)});
    } else if (cur.accept_word("txn")) {
      const Token& name = cur.expect_ident();
      for (const auto& t : w.txns) {
        if (t.name == name.text) {
          throw ParseError(ErrorKind::DuplicateName, name.pos, "duplicate transaction '" + name.text + "'");
        }
      }
      TxnScript script{name.text, {}};
      cur.expect_symbol("{");
      while (!cur.is_symbol("}")) {
        const Token& inst = cur.expect_ident();
        auto idx = w.instance_index(inst.text);
        if (!idx) throw ParseError(ErrorKind::UnknownIdentifier, inst.pos, "unknown instance '" + inst.text + "'");
        cur.expect_symbol(".");
        const Token& op_name = cur.expect_ident();
        const AdtSchema& schema = *w.instances[*idx].initial.schema;
        const OperationDef* def = schema.find_operation(op_name.text);
        if (def == nullptr) {
          throw ParseError(ErrorKind::UnknownIdentifier, op_name.pos,
                           "adt '" + schema.name + "' has no operation '" + op_name.text + "'");
        }
        ScriptStep step{*idx, def, {}};
        cur.expect_symbol("(");
        if (!cur.is_symbol(")")) {
          do {
            auto [v, pos] = literal("argument");
            const std::size_t k = step.args.size();
            if (k >= def->params.size()) {
              throw ParseError(ErrorKind::TypeMismatch, pos, "too many arguments for '" + def->name + "'");
            }
            if (type_of(v) != def->params[k].type) {
              throw ParseError(ErrorKind::TypeMismatch, pos,
                               "argument '" + def->params[k].name + "' of '" + def->name + "' is " +
                                   std::string(type_name(def->params[k].type)));
            }
            step.args.push_back(std::move(v));
          } while (cur.accept_symbol(","));
        }
        const Token& close = cur.expect_symbol(")");
        if (step.args.size() != def->params.size()) {
          throw ParseError(ErrorKind::TypeMismatch, close.pos,
                           "'" + def->name + "' takes " + std::to_string(def->params.size()) + " arguments");
        }
        script.steps.push_back(std::move(step));
        if (!cur.accept_symbol(";")) break;
      }
      cur.expect_symbol("}");
      w.txns.push_back(std::move(script));
    } else {
      cur.fail("expected 'use', 'instance' or 'txn' but found " + detail::TokenCursor::describe(cur.peek()));
    }
  }
  return w;
}

[[nodiscard]] inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WorkloadError("cannot read '" + path.string() + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Wraps parse errors with the file name.
[[nodiscard]] inline std::vector<AdtSchema> load_adt_file(const std::filesystem::path& path) {
  std::string src = read_text_file(path);
  try {
    return parse_module(src);
  } catch (const ParseError& e) {
    throw e.in_file(path.string());
  }
}

[[nodiscard]] inline Workload load_workload(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  const auto base = path.parent_path();
  UseResolver resolve = [&](const std::string& use) {
    std::filesystem::path p(use);
    return load_adt_file(p.is_absolute() ? p : base / p);
  };
  try {
    return parse_workload(text, {}, resolve);
  } catch (const ParseError& e) {
    // Errors from a used .adt file already carry their own file name.
    if (!e.file().empty()) throw;
    throw e.in_file(path.string());
  }
}

}  // namespace fieldlock
