#pragma once

// Access modes, access vectors and control vectors.
//
// A tuple-based ADT of dimension N is locked field by field. Every operation
// carries one access mode per field; two operations commute when their modes
// are compatible on every field.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fieldlock {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Totally ordered: Null < Read < Write.
enum class AccessMode : std::uint8_t { Null = 0, Read = 1, Write = 2 };

inline constexpr std::array<AccessMode, 3> kAllModes{AccessMode::Null, AccessMode::Read,
                                                     AccessMode::Write};

// Classical compatibility relation: only Null/x and Read/Read pairs coexist.
[[nodiscard]] constexpr bool compatible(AccessMode a, AccessMode b) noexcept {
  if (a == AccessMode::Null || b == AccessMode::Null) return true;
  return a == AccessMode::Read && b == AccessMode::Read;
}

[[nodiscard]] constexpr bool mode_leq(AccessMode a, AccessMode b) noexcept {
  return static_cast<std::uint8_t>(a) <= static_cast<std::uint8_t>(b);
}

[[nodiscard]] constexpr AccessMode max_mode(AccessMode a, AccessMode b) noexcept {
  return mode_leq(a, b) ? b : a;
}

[[nodiscard]] constexpr char mode_char(AccessMode m) noexcept {
  switch (m) {
    case AccessMode::Null: return 'N';
    case AccessMode::Read: return 'R';
    case AccessMode::Write: return 'W';
  }
  return '?';
}

[[nodiscard]] inline AccessMode mode_from_char(char c) {
  switch (c) {
    case 'N': return AccessMode::Null;
    case 'R': return AccessMode::Read;
    case 'W': return AccessMode::Write;
    default: throw std::invalid_argument(std::string("bad access mode '") + c + "'");
  }
}

class AccessVector {
 public:
  AccessVector() = default;
  explicit AccessVector(std::size_t dimension, AccessMode fill = AccessMode::Null)
      : modes_(dimension, fill) {}
  AccessVector(std::initializer_list<AccessMode> modes) : modes_(modes) {}
  explicit AccessVector(std::vector<AccessMode> modes) : modes_(std::move(modes)) {}

  [[nodiscard]] std::size_t size() const noexcept { return modes_.size(); }
  [[nodiscard]] AccessMode operator[](std::size_t i) const { return modes_[i]; }
  [[nodiscard]] AccessMode& operator[](std::size_t i) { return modes_[i]; }
  [[nodiscard]] std::span<const AccessMode> modes() const noexcept { return modes_; }

  [[nodiscard]] auto begin() const noexcept { return modes_.begin(); }
  [[nodiscard]] auto end() const noexcept { return modes_.end(); }

  // Raise field i to at least m.
  void upgrade(std::size_t i, AccessMode m) { modes_[i] = max_mode(modes_[i], m); }

  [[nodiscard]] bool all_null() const noexcept {
    return std::all_of(modes_.begin(), modes_.end(),
                       [](AccessMode m) { return m == AccessMode::Null; });
  }
  [[nodiscard]] bool has_write() const noexcept {
    return std::find(modes_.begin(), modes_.end(), AccessMode::Write) != modes_.end();
  }

  // "(R,N,W)"
  [[nodiscard]] std::string to_string() const {
    std::string out = "(";
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      if (i != 0) out += ',';
      out += mode_char(modes_[i]);
    }
    out += ')';
    return out;
  }

  static AccessVector parse(std::string_view text) {
    if (text.size() < 2 || text.front() != '(' || text.back() != ')') {
      throw std::invalid_argument("access vector must be parenthesized: " + std::string(text));
    }
    std::vector<AccessMode> modes;
    std::string_view body = text.substr(1, text.size() - 2);
    if (body.empty()) return AccessVector(std::move(modes));
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (i % 2 == 1) {
        if (body[i] != ',') throw std::invalid_argument("malformed access vector: " + std::string(text));
        continue;
      }
      modes.push_back(mode_from_char(body[i]));
    }
    if (body.size() % 2 == 0) throw std::invalid_argument("malformed access vector: " + std::string(text));
    return AccessVector(std::move(modes));
  }

  friend bool operator==(const AccessVector&, const AccessVector&) = default;

 private:
  std::vector<AccessMode> modes_;
};

namespace detail {
inline void require_same_dimension(const AccessVector& a, const AccessVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("access vectors of dimension " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
}
}  // namespace detail

// Strong commutativity: componentwise compatibility.
[[nodiscard]] inline bool vectors_commute(const AccessVector& a, const AccessVector& b) {
  detail::require_same_dimension(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!compatible(a[i], b[i])) return false;
  }
  return true;
}

[[nodiscard]] inline bool vector_leq(const AccessVector& a, const AccessVector& b) {
  detail::require_same_dimension(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mode_leq(a[i], b[i])) return false;
  }
  return true;
}

// A multiset of access vectors. Repeated vectors are distinct members.
using OperationBag = std::vector<AccessVector>;

struct ControlVectors {
  std::vector<std::uint64_t> rcv;  // readers per field
  std::vector<std::uint64_t> wcv;  // writers per field

  friend bool operator==(const ControlVectors&, const ControlVectors&) = default;
};

namespace detail {
inline std::size_t bag_dimension(std::span<const AccessVector> bag) {
  if (bag.empty()) return 0;
  for (const auto& v : bag) require_same_dimension(bag.front(), v);
  return bag.front().size();
}
}  // namespace detail

[[nodiscard]] inline bool bag_pairwise_commutative(std::span<const AccessVector> bag) {
  detail::bag_dimension(bag);
  for (std::size_t i = 0; i < bag.size(); ++i) {
    for (std::size_t j = i + 1; j < bag.size(); ++j) {
      if (!vectors_commute(bag[i], bag[j])) return false;
    }
  }
  return true;
}

// An empty bag has no intrinsic dimension; pass it explicitly to get zero
// vectors of the right length.
[[nodiscard]] inline ControlVectors control_vectors(std::span<const AccessVector> bag,
                                                    std::size_t dimension = 0) {
  std::size_t n = detail::bag_dimension(bag);
  if (bag.empty()) n = dimension;
  else if (dimension != 0 && dimension != n) {
    throw DimensionError("bag dimension " + std::to_string(n) + " but expected " +
                         std::to_string(dimension));
  }
  ControlVectors cv{std::vector<std::uint64_t>(n, 0), std::vector<std::uint64_t>(n, 0)};
  for (const auto& v : bag) {
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i] == AccessMode::Read) ++cv.rcv[i];
      else if (v[i] == AccessMode::Write) ++cv.wcv[i];
    }
  }
  return cv;
}

// Per field: readers exclude writers, and at most one writer.
[[nodiscard]] inline bool control_invariant_holds(const ControlVectors& cv) {
  if (cv.rcv.size() != cv.wcv.size()) throw DimensionError("rcv and wcv differ in length");
  for (std::size_t i = 0; i < cv.rcv.size(); ++i) {
    if (cv.rcv[i] != 0 && cv.wcv[i] != 0) return false;
    if (cv.wcv[i] > 1) return false;
  }
  return true;
}

// Whole-object collapse used by the classical readers/writers baseline.
[[nodiscard]] inline AccessVector collapse_to_object(const AccessVector& v) {
  return AccessVector{v.has_write() ? AccessMode::Write : AccessMode::Read};
}

}  // namespace fieldlock
