#pragma once

// Operation-definition language for tuple-based ADTs.
//
//   adt Account(balance: integer, owner: text)
//   op deposit(a: integer) { balance := balance + a }
//   op getOwner() -> text { return owner }
//
// Parsing type-checks every operation and fills in its static access vector:
// a field is Write if any assignment to it occurs anywhere in the body
// (reachable or not), Read if it only occurs inside expressions, and Null
// otherwise.

#include <cctype>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fieldlock/core.hpp"
#include "fieldlock/value.hpp"

namespace fieldlock {

struct SourcePos {
  int line = 1;
  int column = 1;
};

enum class ErrorKind { Syntax, UnknownIdentifier, TypeMismatch, DuplicateName };

class ParseError : public std::runtime_error {
 public:
  ParseError(ErrorKind kind, SourcePos pos, const std::string& message, const std::string& file = {})
      : std::runtime_error((file.empty() ? std::string() : file + ":") + std::to_string(pos.line) + ":" +
                           std::to_string(pos.column) + ": " + message),
        kind_(kind),
        pos_(pos),
        message_(message),
        file_(file) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] SourcePos pos() const noexcept { return pos_; }
  [[nodiscard]] const std::string& message() const noexcept { return message_; }
  [[nodiscard]] const std::string& file() const noexcept { return file_; }

  [[nodiscard]] ParseError in_file(const std::string& file) const { return {kind_, pos_, message_, file}; }

 private:
  ErrorKind kind_;
  SourcePos pos_;
  std::string message_;
  std::string file_;
};

// Owning pointer with value semantics, for recursive AST nodes.
template <class T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}  // NOLINT: implicit by design of AST builders
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  const T& operator*() const { return *ptr_; }
  const T* operator->() const { return ptr_.get(); }

  friend bool operator==(const Box& a, const Box& b) { return *a == *b; }

 private:
  std::unique_ptr<T> ptr_;
};

enum class UnaryOp { Negate, Not };
enum class BinaryOp { Add, Sub, Mul, Div, Eq, Ne, Lt, Le, Gt, Ge, And, Or };

struct Expr;

struct Literal {
  Value value;
  friend bool operator==(const Literal&, const Literal&) = default;
};
struct FieldRef {
  std::size_t index = 0;
  std::string name;
  friend bool operator==(const FieldRef&, const FieldRef&) = default;
};
struct ParamRef {
  std::size_t index = 0;
  std::string name;
  friend bool operator==(const ParamRef&, const ParamRef&) = default;
};
struct LocalRef {
  std::string name;
  friend bool operator==(const LocalRef&, const LocalRef&) = default;
};
struct Unary {
  UnaryOp op;
  Box<Expr> operand;
  friend bool operator==(const Unary&, const Unary&);
};
struct Binary {
  BinaryOp op;
  Box<Expr> lhs;
  Box<Expr> rhs;
  friend bool operator==(const Binary&, const Binary&);
};

struct Expr {
  std::variant<Literal, FieldRef, ParamRef, LocalRef, Unary, Binary> node;
  ValueType type = ValueType::Integer;
  SourcePos pos;

  // Source positions are not part of structural identity.
  friend bool operator==(const Expr& a, const Expr& b) { return a.type == b.type && a.node == b.node; }
};

inline bool operator==(const Unary& a, const Unary& b) { return a.op == b.op && a.operand == b.operand; }
inline bool operator==(const Binary& a, const Binary& b) {
  return a.op == b.op && a.lhs == b.lhs && a.rhs == b.rhs;
}

struct Stmt;
using Block = std::vector<Stmt>;

struct FieldAssign {
  std::size_t field = 0;
  std::string name;
  Expr value;
  friend bool operator==(const FieldAssign&, const FieldAssign&) = default;
};
struct LocalAssign {
  std::string name;
  Expr value;
  friend bool operator==(const LocalAssign&, const LocalAssign&) = default;
};
struct If {
  Expr condition;
  Block then_branch;
  std::optional<Block> else_branch;
  friend bool operator==(const If&, const If&);
};
struct Return {
  Expr value;
  friend bool operator==(const Return&, const Return&) = default;
};

struct Stmt {
  std::variant<FieldAssign, LocalAssign, If, Return> node;
  SourcePos pos;
  friend bool operator==(const Stmt& a, const Stmt& b) { return a.node == b.node; }
};

inline bool operator==(const If& a, const If& b) {
  return a.condition == b.condition && a.then_branch == b.then_branch &&
         a.else_branch == b.else_branch;
}

struct Param {
  std::string name;
  ValueType type;
  friend bool operator==(const Param&, const Param&) = default;
};

struct OperationDef {
  std::string name;
  std::vector<Param> params;
  std::optional<ValueType> result_type;
  Block body;
  AccessVector static_dav;

  friend bool operator==(const OperationDef&, const OperationDef&) = default;
};

struct FieldDecl {
  std::string name;
  ValueType type;
  friend bool operator==(const FieldDecl&, const FieldDecl&) = default;
};

struct AdtSchema {
  std::string name;
  std::vector<FieldDecl> fields;
  std::vector<OperationDef> operations;

  [[nodiscard]] std::size_t dimension() const noexcept { return fields.size(); }

  [[nodiscard]] std::optional<std::size_t> field_index(std::string_view field) const {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].name == field) return i;
    }
    return std::nullopt;
  }

  [[nodiscard]] const OperationDef* find_operation(std::string_view op) const {
    for (const auto& def : operations) {
      if (def.name == op) return &def;
    }
    return nullptr;
  }

  friend bool operator==(const AdtSchema&, const AdtSchema&) = default;
};

// ---------------------------------------------------------------------------
// Lexing
// ---------------------------------------------------------------------------

struct Token {
  enum class Kind { Ident, Integer, Text, Symbol, End };
  Kind kind = Kind::End;
  std::string text;
  std::uint64_t magnitude = 0;  // Integer tokens; may be 2^63 to allow INT64_MIN
  SourcePos pos;
};

[[nodiscard]] inline std::vector<Token> tokenize(std::string_view src) {
  static constexpr std::string_view kTwoChar[] = {":=", "->", "==", "!=", "<=", ">="};
  static constexpr std::string_view kOneChar = "(){},:;+-*/<>=.";

  std::vector<Token> tokens;
  std::size_t i = 0;
  SourcePos pos;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
      if (src[i] == '\n') {
        ++pos.line;
        pos.column = 1;
      } else {
        ++pos.column;
      }
    }
  };

  while (i < src.size()) {
    char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token tok;
    tok.pos = pos;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      tok.kind = Token::Kind::Ident;
      tok.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      std::uint64_t value = 0;
      constexpr std::uint64_t kLimit = std::uint64_t{1} << 63;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
        std::uint64_t digit = static_cast<std::uint64_t>(src[j] - '0');
        if (value > (kLimit - digit) / 10) {
          throw ParseError(ErrorKind::Syntax, pos, "integer literal out of range");
        }
        value = value * 10 + digit;
        ++j;
      }
      tok.kind = Token::Kind::Integer;
      tok.text = std::string(src.substr(i, j - i));
      tok.magnitude = value;
      advance(j - i);
    } else if (c == '"') {
      std::string text;
      advance(1);
      bool closed = false;
      while (i < src.size()) {
        char d = src[i];
        if (d == '"') {
          advance(1);
          closed = true;
          break;
        }
        if (d == '\n') break;
        if (d == '\\' && i + 1 < src.size()) {
          char e = src[i + 1];
          switch (e) {
            case 'n': text += '\n'; break;
            case 't': text += '\t'; break;
            case '"': text += '"'; break;
            case '\\': text += '\\'; break;
            default: throw ParseError(ErrorKind::Syntax, pos, std::string("unknown escape \\") + e);
          }
          advance(2);
          continue;
        }
        text += d;
        advance(1);
      }
      if (!closed) throw ParseError(ErrorKind::Syntax, tok.pos, "unterminated text literal");
      tok.kind = Token::Kind::Text;
      tok.text = std::move(text);
    } else {
      bool matched = false;
      for (auto sym : kTwoChar) {
        if (src.substr(i, 2) == sym) {
          tok.kind = Token::Kind::Symbol;
          tok.text = std::string(sym);
          advance(2);
          matched = true;
          break;
        }
      }
      if (!matched) {
        if (kOneChar.find(c) == std::string_view::npos) {
          throw ParseError(ErrorKind::Syntax, pos, std::string("unexpected character '") + c + "'");
        }
        tok.kind = Token::Kind::Symbol;
        tok.text = std::string(1, c);
        advance(1);
      }
    }
    tokens.push_back(std::move(tok));
  }
  Token end;
  end.kind = Token::Kind::End;
  end.pos = pos;
  tokens.push_back(end);
  return tokens;
}

namespace detail {

inline bool is_keyword(std::string_view word) {
  static const std::set<std::string_view> kKeywords = {
      "adt",  "op",    "if",  "then", "else",    "return",  "true", "false",
      "and",  "or",    "not", "integer", "boolean", "text", "use", "instance", "txn"};
  return kKeywords.count(word) != 0;
}

// Cursor over a token vector; shared by the ADT and workload readers.
class TokenCursor {
 public:
  explicit TokenCursor(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  [[nodiscard]] const Token& peek(std::size_t ahead = 0) const {
    std::size_t k = std::min(pos_ + ahead, tokens_.size() - 1);
    return tokens_[k];
  }
  const Token& next() {
    const Token& t = tokens_[pos_];
    if (pos_ + 1 < tokens_.size()) ++pos_;
    return t;
  }
  [[nodiscard]] bool at_end() const { return peek().kind == Token::Kind::End; }

  [[nodiscard]] bool is_symbol(std::string_view s) const {
    return peek().kind == Token::Kind::Symbol && peek().text == s;
  }
  [[nodiscard]] bool is_word(std::string_view w) const {
    return peek().kind == Token::Kind::Ident && peek().text == w;
  }
  bool accept_symbol(std::string_view s) {
    if (!is_symbol(s)) return false;
    next();
    return true;
  }
  bool accept_word(std::string_view w) {
    if (!is_word(w)) return false;
    next();
    return true;
  }
  const Token& expect_symbol(std::string_view s) {
    if (!is_symbol(s)) fail("expected '" + std::string(s) + "' but found " + describe(peek()));
    return next();
  }
  const Token& expect_word(std::string_view w) {
    if (!is_word(w)) fail("expected '" + std::string(w) + "' but found " + describe(peek()));
    return next();
  }
  const Token& expect_ident() {
    if (peek().kind != Token::Kind::Ident || is_keyword(peek().text)) {
      fail("expected identifier but found " + describe(peek()));
    }
    return next();
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError(ErrorKind::Syntax, peek().pos, message);
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Token::Kind::End: return "end of input";
      case Token::Kind::Text: return "text literal";
      case Token::Kind::Integer: return "'" + t.text + "'";
      default: return "'" + t.text + "'";
    }
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

inline ValueType parse_type(TokenCursor& cur) {
  const Token& t = cur.peek();
  if (t.kind == Token::Kind::Ident) {
    if (t.text == "integer") { cur.next(); return ValueType::Integer; }
    if (t.text == "boolean") { cur.next(); return ValueType::Boolean; }
    if (t.text == "text") { cur.next(); return ValueType::Text; }
  }
  cur.fail("expected a type (integer, boolean, text) but found " + TokenCursor::describe(t));
}

// Literal constant, with an optional leading minus on integers.
inline std::optional<Value> parse_literal(TokenCursor& cur) {
  const Token& t = cur.peek();
  if (t.kind == Token::Kind::Symbol && t.text == "-" && cur.peek(1).kind == Token::Kind::Integer) {
    cur.next();
    const Token& num = cur.next();
    if (num.magnitude == (std::uint64_t{1} << 63)) return std::numeric_limits<std::int64_t>::min();
    return -static_cast<std::int64_t>(num.magnitude);
  }
  if (t.kind == Token::Kind::Integer) {
    if (t.magnitude > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw ParseError(ErrorKind::Syntax, t.pos, "integer literal out of range");
    }
    cur.next();
    return static_cast<std::int64_t>(t.magnitude);
  }
  if (t.kind == Token::Kind::Text) {
    Value v = t.text;
    cur.next();
    return v;
  }
  if (t.kind == Token::Kind::Ident && (t.text == "true" || t.text == "false")) {
    bool b = t.text == "true";
    cur.next();
    return b;
  }
  return std::nullopt;
}

inline std::string_view binary_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::Eq: return "==";
    case BinaryOp::Ne: return "!=";
    case BinaryOp::Lt: return "<";
    case BinaryOp::Le: return "<=";
    case BinaryOp::Gt: return ">";
    case BinaryOp::Ge: return ">=";
    case BinaryOp::And: return "and";
    case BinaryOp::Or: return "or";
  }
  return "?";
}

class OperationParser {
 public:
  OperationParser(TokenCursor& cur, const AdtSchema& schema) : cur_(cur), schema_(schema) {}

  OperationDef parse() {
    OperationDef def;
    cur_.expect_word("op");
    const Token& name = cur_.expect_ident();
    def.name = name.text;
    if (schema_.find_operation(def.name) != nullptr) {
      throw ParseError(ErrorKind::DuplicateName, name.pos, "duplicate operation '" + def.name + "'");
    }
    cur_.expect_symbol("(");
    if (!cur_.is_symbol(")")) {
      do {
        const Token& p = cur_.expect_ident();
        if (schema_.field_index(p.text)) {
          throw ParseError(ErrorKind::DuplicateName, p.pos,
                           "parameter '" + p.text + "' shadows a field");
        }
        for (const auto& existing : def.params) {
          if (existing.name == p.text) {
            throw ParseError(ErrorKind::DuplicateName, p.pos, "duplicate parameter '" + p.text + "'");
          }
        }
        cur_.expect_symbol(":");
        def.params.push_back(Param{p.text, parse_type(cur_)});
      } while (cur_.accept_symbol(","));
    }
    cur_.expect_symbol(")");
    if (cur_.accept_symbol("->")) def.result_type = parse_type(cur_);
    params_ = &def.params;
    result_type_ = def.result_type;
    Scope scope;
    def.body = parse_block(scope);
    def.static_dav = AccessVector(schema_.dimension());
    return def;
  }

 private:
  using Scope = std::map<std::string, ValueType>;

  Block parse_block(Scope& scope) {
    cur_.expect_symbol("{");
    Block block;
    while (!cur_.is_symbol("}")) {
      block.push_back(parse_statement(scope));
      if (!cur_.accept_symbol(";")) break;
    }
    cur_.expect_symbol("}");
    return block;
  }

  // `then`/`else` branches take either a braced block or a single statement.
  Block parse_branch(Scope& scope) {
    if (cur_.is_symbol("{")) return parse_block(scope);
    Block block;
    block.push_back(parse_statement(scope));
    return block;
  }

  Stmt parse_statement(Scope& scope) {
    SourcePos pos = cur_.peek().pos;
    if (cur_.accept_word("if")) {
      Expr cond = parse_expr(scope);
      require_type(cond, ValueType::Boolean, "if condition");
      cur_.expect_word("then");
      Scope then_scope = scope;
      Block then_branch = parse_branch(then_scope);
      std::optional<Block> else_branch;
      if (cur_.accept_word("else")) {
        Scope else_scope = scope;
        else_branch = parse_branch(else_scope);
        // Locals assigned on both paths stay visible afterwards.
        for (const auto& [name, type] : then_scope) {
          auto it = else_scope.find(name);
          if (it != else_scope.end() && it->second == type) scope.emplace(name, type);
        }
      }
      return Stmt{If{std::move(cond), std::move(then_branch), std::move(else_branch)}, pos};
    }
    if (cur_.accept_word("return")) {
      Expr value = parse_expr(scope);
      if (!result_type_) {
        throw ParseError(ErrorKind::TypeMismatch, pos, "operation has no result type but returns a value");
      }
      require_type(value, *result_type_, "return value");
      return Stmt{Return{std::move(value)}, pos};
    }
    const Token& target = cur_.expect_ident();
    cur_.expect_symbol(":=");
    Expr value = parse_expr(scope);
    if (auto field = schema_.field_index(target.text)) {
      require_type(value, schema_.fields[*field].type, "assignment to field '" + target.text + "'");
      return Stmt{FieldAssign{*field, target.text, std::move(value)}, pos};
    }
    for (const auto& p : *params_) {
      if (p.name == target.text) {
        throw ParseError(ErrorKind::TypeMismatch, target.pos,
                         "cannot assign to parameter '" + target.text + "'");
      }
    }
    auto it = scope.find(target.text);
    if (it != scope.end() && it->second != value.type) {
      throw ParseError(ErrorKind::TypeMismatch, target.pos,
                       "local '" + target.text + "' is " + std::string(type_name(it->second)) +
                           " but assigned " + std::string(type_name(value.type)));
    }
    scope[target.text] = value.type;
    return Stmt{LocalAssign{target.text, std::move(value)}, pos};
  }

  static void require_type(const Expr& e, ValueType expected, const std::string& what) {
    if (e.type != expected) {
      throw ParseError(ErrorKind::TypeMismatch, e.pos,
                       what + " must be " + std::string(type_name(expected)) + ", got " +
                           std::string(type_name(e.type)));
    }
  }

  Expr parse_expr(const Scope& scope) { return parse_or(scope); }

  Expr make_binary(BinaryOp op, Expr lhs, Expr rhs, SourcePos pos) {
    ValueType result = ValueType::Boolean;
    auto mismatch = [&]() -> ParseError {
      return ParseError(ErrorKind::TypeMismatch, pos,
                        "operator '" + std::string(binary_symbol(op)) + "' cannot combine " +
                            std::string(type_name(lhs.type)) + " and " +
                            std::string(type_name(rhs.type)));
    };
    switch (op) {
      case BinaryOp::Add:
        if (lhs.type != rhs.type || lhs.type == ValueType::Boolean) throw mismatch();
        result = lhs.type;
        break;
      case BinaryOp::Sub:
      case BinaryOp::Mul:
      case BinaryOp::Div:
        if (lhs.type != ValueType::Integer || rhs.type != ValueType::Integer) throw mismatch();
        result = ValueType::Integer;
        break;
      case BinaryOp::Eq:
      case BinaryOp::Ne:
        if (lhs.type != rhs.type) throw mismatch();
        break;
      case BinaryOp::Lt:
      case BinaryOp::Le:
      case BinaryOp::Gt:
      case BinaryOp::Ge:
        if (lhs.type != ValueType::Integer || rhs.type != ValueType::Integer) throw mismatch();
        break;
      case BinaryOp::And:
      case BinaryOp::Or:
        if (lhs.type != ValueType::Boolean || rhs.type != ValueType::Boolean) throw mismatch();
        break;
    }
    return Expr{Binary{op, std::move(lhs), std::move(rhs)}, result, pos};
  }

  Expr parse_or(const Scope& scope) {
    Expr lhs = parse_and(scope);
    while (cur_.is_word("or")) {
      SourcePos pos = cur_.next().pos;
      lhs = make_binary(BinaryOp::Or, std::move(lhs), parse_and(scope), pos);
    }
    return lhs;
  }

  Expr parse_and(const Scope& scope) {
    Expr lhs = parse_not(scope);
    while (cur_.is_word("and")) {
      SourcePos pos = cur_.next().pos;
      lhs = make_binary(BinaryOp::And, std::move(lhs), parse_not(scope), pos);
    }
    return lhs;
  }

  Expr parse_not(const Scope& scope) {
    if (cur_.is_word("not")) {
      SourcePos pos = cur_.next().pos;
      Expr operand = parse_not(scope);
      require_type(operand, ValueType::Boolean, "operand of 'not'");
      return Expr{Unary{UnaryOp::Not, std::move(operand)}, ValueType::Boolean, pos};
    }
    return parse_comparison(scope);
  }

  Expr parse_comparison(const Scope& scope) {
    Expr lhs = parse_additive(scope);
    static const std::pair<std::string_view, BinaryOp> kOps[] = {
        {"==", BinaryOp::Eq}, {"!=", BinaryOp::Ne}, {"<", BinaryOp::Lt},
        {"<=", BinaryOp::Le}, {">", BinaryOp::Gt},  {">=", BinaryOp::Ge}};
    for (const auto& [sym, op] : kOps) {
      if (cur_.is_symbol(sym)) {
        SourcePos pos = cur_.next().pos;
        return make_binary(op, std::move(lhs), parse_additive(scope), pos);
      }
    }
    return lhs;
  }

  Expr parse_additive(const Scope& scope) {
    Expr lhs = parse_multiplicative(scope);
    while (cur_.is_symbol("+") || cur_.is_symbol("-")) {
      BinaryOp op = cur_.peek().text == "+" ? BinaryOp::Add : BinaryOp::Sub;
      SourcePos pos = cur_.next().pos;
      lhs = make_binary(op, std::move(lhs), parse_multiplicative(scope), pos);
    }
    return lhs;
  }

  Expr parse_multiplicative(const Scope& scope) {
    Expr lhs = parse_unary(scope);
    while (cur_.is_symbol("*") || cur_.is_symbol("/")) {
      BinaryOp op = cur_.peek().text == "*" ? BinaryOp::Mul : BinaryOp::Div;
      SourcePos pos = cur_.next().pos;
      lhs = make_binary(op, std::move(lhs), parse_unary(scope), pos);
    }
    return lhs;
  }

  Expr parse_unary(const Scope& scope) {
    SourcePos pos = cur_.peek().pos;
    if (cur_.is_symbol("-") && cur_.peek(1).kind != Token::Kind::Integer) {
      cur_.next();
      Expr operand = parse_unary(scope);
      require_type(operand, ValueType::Integer, "operand of unary '-'");
      return Expr{Unary{UnaryOp::Negate, std::move(operand)}, ValueType::Integer, pos};
    }
    return parse_primary(scope);
  }

  Expr parse_primary(const Scope& scope) {
    SourcePos pos = cur_.peek().pos;
    if (auto lit = parse_literal(cur_)) {
      ValueType t = type_of(*lit);
      return Expr{Literal{std::move(*lit)}, t, pos};
    }
    if (cur_.accept_symbol("(")) {
      Expr inner = parse_expr(scope);
      cur_.expect_symbol(")");
      return inner;
    }
    const Token& name = cur_.expect_ident();
    if (auto field = schema_.field_index(name.text)) {
      return Expr{FieldRef{*field, name.text}, schema_.fields[*field].type, pos};
    }
    for (std::size_t k = 0; k < params_->size(); ++k) {
      if ((*params_)[k].name == name.text) {
        return Expr{ParamRef{k, name.text}, (*params_)[k].type, pos};
      }
    }
    if (auto it = scope.find(name.text); it != scope.end()) {
      return Expr{LocalRef{name.text}, it->second, pos};
    }
    throw ParseError(ErrorKind::UnknownIdentifier, name.pos, "unknown identifier '" + name.text + "'");
  }

  TokenCursor& cur_;
  const AdtSchema& schema_;
  const std::vector<Param>* params_ = nullptr;
  std::optional<ValueType> result_type_;
};

inline void collect_expr(const Expr& e, std::vector<bool>& read) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, FieldRef>) {
          read[node.index] = true;
        } else if constexpr (std::is_same_v<T, Unary>) {
          collect_expr(*node.operand, read);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_expr(*node.lhs, read);
          collect_expr(*node.rhs, read);
        }
      },
      e.node);
}

inline void collect_block(const Block& block, std::vector<bool>& read, std::vector<bool>& written) {
  for (const auto& stmt : block) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, FieldAssign>) {
            written[node.field] = true;
            collect_expr(node.value, read);
          } else if constexpr (std::is_same_v<T, LocalAssign>) {
            collect_expr(node.value, read);
          } else if constexpr (std::is_same_v<T, If>) {
            collect_expr(node.condition, read);
            collect_block(node.then_branch, read, written);
            if (node.else_branch) collect_block(*node.else_branch, read, written);
          } else {
            collect_expr(node.value, read);
          }
        },
        stmt.node);
  }
}

}  // namespace detail

// Occurrence-based static access vector of an operation body.
[[nodiscard]] inline AccessVector infer_dav(const Block& body, std::size_t dimension) {
  std::vector<bool> read(dimension, false);
  std::vector<bool> written(dimension, false);
  detail::collect_block(body, read, written);
  AccessVector dav(dimension);
  for (std::size_t i = 0; i < dimension; ++i) {
    if (written[i]) dav[i] = AccessMode::Write;
    else if (read[i]) dav[i] = AccessMode::Read;
  }
  return dav;
}

[[nodiscard]] inline AccessVector infer_dav(const OperationDef& op, const AdtSchema& schema) {
  return infer_dav(op.body, schema.dimension());
}

// Parse every `adt` declaration in a source file together with its operations.
[[nodiscard]] inline std::vector<AdtSchema> parse_module(std::string_view source) {
  detail::TokenCursor cur(tokenize(source));
  std::vector<AdtSchema> module;
  while (!cur.at_end()) {
    if (!cur.is_word("adt")) {
      if (cur.is_word("op") && module.empty()) cur.fail("operation declared before any 'adt'");
      cur.fail("expected 'adt' or 'op' but found " + detail::TokenCursor::describe(cur.peek()));
    }
    cur.next();
    AdtSchema schema;
    const Token& name = cur.expect_ident();
    schema.name = name.text;
    for (const auto& other : module) {
      if (other.name == schema.name) {
        throw ParseError(ErrorKind::DuplicateName, name.pos, "duplicate adt '" + schema.name + "'");
      }
    }
    cur.expect_symbol("(");
    do {
      const Token& f = cur.expect_ident();
      if (schema.field_index(f.text)) {
        throw ParseError(ErrorKind::DuplicateName, f.pos, "duplicate field '" + f.text + "'");
      }
      cur.expect_symbol(":");
      schema.fields.push_back(FieldDecl{f.text, detail::parse_type(cur)});
    } while (cur.accept_symbol(","));
    cur.expect_symbol(")");
    while (cur.is_word("op")) {
      OperationDef def = detail::OperationParser(cur, schema).parse();
      def.static_dav = infer_dav(def, schema);
      schema.operations.push_back(std::move(def));
    }
    module.push_back(std::move(schema));
  }
  return module;
}

// Parse a source file holding exactly one ADT.
[[nodiscard]] inline AdtSchema parse_adt(std::string_view source) {
  auto module = parse_module(source);
  if (module.size() != 1) {
    throw ParseError(ErrorKind::Syntax, SourcePos{},
                     "expected exactly one adt declaration, found " + std::to_string(module.size()));
  }
  return std::move(module.front());
}

// Entry [i][j] tells whether operations i and j commute by their static vectors.
[[nodiscard]] inline std::vector<std::vector<bool>> commutativity_matrix(const AdtSchema& schema) {
  const auto& ops = schema.operations;
  std::vector<std::vector<bool>> matrix(ops.size(), std::vector<bool>(ops.size(), false));
  for (std::size_t i = 0; i < ops.size(); ++i) {
    for (std::size_t j = i; j < ops.size(); ++j) {
      bool c = vectors_commute(ops[i].static_dav, ops[j].static_dav);
      matrix[i][j] = c;
      matrix[j][i] = c;
    }
  }
  return matrix;
}

// ---------------------------------------------------------------------------
// Pretty printing (canonical source; re-parses to the same AST)
// ---------------------------------------------------------------------------

namespace detail {

inline int precedence(const Expr& e) {
  if (const auto* b = std::get_if<Binary>(&e.node)) {
    switch (b->op) {
      case BinaryOp::Or: return 1;
      case BinaryOp::And: return 2;
      case BinaryOp::Add:
      case BinaryOp::Sub: return 5;
      case BinaryOp::Mul:
      case BinaryOp::Div: return 6;
      default: return 4;
    }
  }
  if (const auto* u = std::get_if<Unary>(&e.node)) return u->op == UnaryOp::Not ? 3 : 7;
  if (const auto* lit = std::get_if<Literal>(&e.node)) {
    if (const auto* n = std::get_if<std::int64_t>(&lit->value); n && *n < 0) return 7;
  }
  return 8;
}

inline void print_expr(std::ostream& out, const Expr& e);

inline void print_child(std::ostream& out, const Expr& child, bool parens) {
  if (parens) out << '(';
  print_expr(out, child);
  if (parens) out << ')';
}

inline void print_expr(std::ostream& out, const Expr& e) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          out << format_value(node.value);
        } else if constexpr (std::is_same_v<T, FieldRef> || std::is_same_v<T, ParamRef> ||
                             std::is_same_v<T, LocalRef>) {
          out << node.name;
        } else if constexpr (std::is_same_v<T, Unary>) {
          int p = precedence(e);
          out << (node.op == UnaryOp::Not ? "not " : "-");
          // "--1" would lex as a negative literal operand; keep a space.
          if (node.op == UnaryOp::Negate && precedence(*node.operand) == 7) out << ' ';
          print_child(out, *node.operand, precedence(*node.operand) < p);
        } else {
          int p = precedence(e);
          bool comparison = p == 4;
          int lp = precedence(*node.lhs);
          int rp = precedence(*node.rhs);
          print_child(out, *node.lhs, comparison ? lp <= p : lp < p);
          out << ' ' << binary_symbol(node.op) << ' ';
          print_child(out, *node.rhs, rp <= p);
        }
      },
      e.node);
}

inline void print_block(std::ostream& out, const Block& block, int indent);

inline void print_statement(std::ostream& out, const Stmt& stmt, int indent) {
  std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  out << pad;
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, FieldAssign> || std::is_same_v<T, LocalAssign>) {
          out << node.name << " := ";
          print_expr(out, node.value);
        } else if constexpr (std::is_same_v<T, If>) {
          out << "if ";
          print_expr(out, node.condition);
          out << " then ";
          print_block(out, node.then_branch, indent);
          if (node.else_branch) {
            out << " else ";
            print_block(out, *node.else_branch, indent);
          }
        } else {
          out << "return ";
          print_expr(out, node.value);
        }
      },
      stmt.node);
}

inline void print_block(std::ostream& out, const Block& block, int indent) {
  if (block.empty()) {
    out << "{ }";
    return;
  }
  out << "{\n";
  for (std::size_t i = 0; i < block.size(); ++i) {
    print_statement(out, block[i], indent + 1);
    if (i + 1 < block.size()) out << ';';
    out << '\n';
  }
  out << std::string(static_cast<std::size_t>(indent) * 2, ' ') << '}';
}

}  // namespace detail

[[nodiscard]] inline std::string print_expr(const Expr& e) {
  std::ostringstream out;
  detail::print_expr(out, e);
  return out.str();
}

[[nodiscard]] inline std::string print_adt(const AdtSchema& schema) {
  std::ostringstream out;
  out << "adt " << schema.name << '(';
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    if (i != 0) out << ", ";
    out << schema.fields[i].name << ": " << type_name(schema.fields[i].type);
  }
  out << ")\n";
  for (const auto& op : schema.operations) {
    out << "\nop " << op.name << '(';
    for (std::size_t i = 0; i < op.params.size(); ++i) {
      if (i != 0) out << ", ";
      out << op.params[i].name << ": " << type_name(op.params[i].type);
    }
    out << ')';
    if (op.result_type) out << " -> " << type_name(*op.result_type);
    out << ' ';
    detail::print_block(out, op.body, 0);
    out << '\n';
  }
  return out.str();
}

}  // namespace fieldlock
