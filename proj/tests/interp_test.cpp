#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include "fieldlock/interp.hpp"
#include "support/random_workload.hpp"

using namespace fieldlock;

namespace {

constexpr auto N = AccessMode::Null;
constexpr auto R = AccessMode::Read;
constexpr auto W = AccessMode::Write;

std::shared_ptr<const AdtSchema> schema(const std::string& src) {
  return std::make_shared<const AdtSchema>(parse_adt(src));
}

const char* kCapped = R"(
adt Capped(balance: integer, limit: integer)
op cap() { if balance > limit then balance := limit }
op noop() { }
op twice() { balance := balance + 1; balance := balance * 2 }
op readAfterWrite() -> integer { balance := 1; return balance + limit }
op ratio(d: integer) -> integer { balance := 0; return limit / d }
op both(a: boolean) -> boolean { return a and balance > 0 or limit > 0 }
)";

ExecutionRecord run(const std::shared_ptr<const AdtSchema>& s, InstanceValue& inst, const std::string& op,
                    std::vector<Value> args = {}) {
  return execute(*s->find_operation(op), args, inst);
}

}  // namespace

TEST(Execute, CapConditionFalse) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{5}, std::int64_t{10}});
  auto rec = run(s, inst, "cap");
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{R, R}));
  EXPECT_TRUE(rec.before_image.empty());
  EXPECT_EQ(inst.values[0], Value(std::int64_t{5}));
}

TEST(Execute, CapConditionTrue) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{15}, std::int64_t{10}});
  auto rec = run(s, inst, "cap");
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{W, R}));
  ASSERT_EQ(rec.before_image.size(), 1u);
  EXPECT_EQ(rec.before_image.at(0), Value(std::int64_t{15}));
  EXPECT_EQ(inst.values[0], Value(std::int64_t{10}));
}

TEST(Execute, NoopTouchesNothing) {
  auto s = schema(kCapped);
  InstanceValue inst = InstanceValue::defaults(s);
  auto rec = run(s, inst, "noop");
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{N, N}));
  EXPECT_TRUE(rec.before_image.empty());
  EXPECT_FALSE(rec.result.has_value());
}

TEST(Execute, BeforeImageTakenAtFirstWriteOnly) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{3}, std::int64_t{0}});
  auto rec = run(s, inst, "twice");
  EXPECT_EQ(rec.before_image.at(0), Value(std::int64_t{3}));
  EXPECT_EQ(inst.values[0], Value(std::int64_t{8}));
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{W, N}));
}

TEST(Execute, ReadAfterWriteStaysWrite) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{3}, std::int64_t{4}});
  auto rec = run(s, inst, "readAfterWrite");
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{W, R}));
  EXPECT_EQ(rec.result, Value(std::int64_t{5}));
}

TEST(Execute, NoShortCircuit) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{0}, std::int64_t{0}});
  auto rec = run(s, inst, "both", {false});
  EXPECT_EQ(rec.dynamic_dav, (AccessVector{R, R}));
  EXPECT_EQ(rec.result, Value(false));
}

TEST(Execute, DivisionByZeroCarriesPartialRecord) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{7}, std::int64_t{1}});
  try {
    (void)run(s, inst, "ratio", {std::int64_t{0}});
    FAIL();
  } catch (const ExecutionFault& f) {
    EXPECT_EQ(f.partial().before_image.at(0), Value(std::int64_t{7}));
    EXPECT_EQ(f.partial().dynamic_dav, (AccessVector{W, R}));
    EXPECT_EQ(inst.values[0], Value(std::int64_t{0}));
    apply_inverse(f.partial(), inst);
    EXPECT_EQ(inst.values[0], Value(std::int64_t{7}));
  }
}

TEST(Execute, ArithmeticWraps) {
  auto s = schema("adt C(x: integer) op f() -> integer { x := x + 1; return x / -1 }");
  InstanceValue inst(s, {std::numeric_limits<std::int64_t>::max()});
  auto rec = execute(s->operations[0], {}, inst);
  EXPECT_EQ(inst.values[0], Value(std::numeric_limits<std::int64_t>::min()));
  EXPECT_EQ(rec.result, Value(std::numeric_limits<std::int64_t>::min()));
}

TEST(Execute, TextConcatenation) {
  auto s = schema("adt C(s: text) op f(t: text) -> text { s := s + t; return s }");
  InstanceValue inst(s, {std::string("ab")});
  auto rec = execute(s->operations[0], std::vector<Value>{std::string("cd")}, inst);
  EXPECT_EQ(rec.result, Value(std::string("abcd")));
}

TEST(Execute, RejectsBadArguments) {
  auto s = schema(kCapped);
  InstanceValue inst = InstanceValue::defaults(s);
  EXPECT_THROW((void)run(s, inst, "ratio"), ExecutionError);
  EXPECT_THROW((void)run(s, inst, "ratio", {true}), ExecutionError);
  auto other = schema("adt O(x: integer) op f() { }");
  InstanceValue small = InstanceValue::defaults(other);
  EXPECT_THROW((void)execute(*s->find_operation("noop"), {}, small), DimensionError);
}

TEST(Instance, Conformance) {
  auto s = schema(kCapped);
  EXPECT_THROW(InstanceValue(s, {std::int64_t{1}}), ExecutionError);
  EXPECT_THROW(InstanceValue(s, {std::int64_t{1}, true}), ExecutionError);
}

TEST(Inverse, RestoresCap) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{15}, std::int64_t{10}});
  auto rec = run(s, inst, "cap");
  auto inv = apply_inverse(rec, inst);
  EXPECT_EQ(inst.values[0], Value(std::int64_t{15}));
  EXPECT_EQ(inv, (AccessVector{W, N}));
}

TEST(Inverse, EmptyBeforeImageIsNoop) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{5}, std::int64_t{10}});
  auto rec = run(s, inst, "cap");
  InstanceValue before = inst;
  EXPECT_EQ(apply_inverse(rec, inst), (AccessVector{N, N}));
  EXPECT_EQ(inst, before);
}

TEST(Inverse, SchemaMismatch) {
  auto s = schema(kCapped);
  InstanceValue inst(s, {std::int64_t{15}, std::int64_t{10}});
  auto rec = run(s, inst, "cap");
  auto other = schema("adt O(x: integer)");
  InstanceValue small = InstanceValue::defaults(other);
  EXPECT_THROW((void)apply_inverse(rec, small), DimensionError);
  auto texty = schema("adt T(x: text, y: integer)");
  InstanceValue t = InstanceValue::defaults(texty);
  EXPECT_THROW((void)apply_inverse(rec, t), ExecutionError);
}

// Every corpus operation over a small argument domain: execute then inverse
// is the identity; inverse <= dynamic <= static; determinism.
TEST(Property, CorpusInverseIdentityAndOrdering) {
  std::ifstream in(FIELDLOCK_TEST_DATA "/corpus/corpus.adt");
  std::ostringstream src;
  src << in.rdbuf();
  std::mt19937_64 rng(3);
  const std::vector<Value> ints = {std::int64_t{-2}, std::int64_t{0}, std::int64_t{1}, std::int64_t{150}};
  const std::vector<Value> texts = {std::string(""), std::string("x")};
  auto sample = [&](ValueType t) -> Value {
    switch (t) {
      case ValueType::Integer: return ints[rng() % ints.size()];
      case ValueType::Boolean: return rng() % 2 == 0;
      case ValueType::Text: return texts[rng() % texts.size()];
    }
    return Value{};
  };
  for (auto& parsed : parse_module(src.str())) {
    auto s = std::make_shared<const AdtSchema>(std::move(parsed));
    for (const auto& op : s->operations) {
      for (int round = 0; round < 50; ++round) {
        std::vector<Value> fields;
        for (const auto& f : s->fields) fields.push_back(sample(f.type));
        std::vector<Value> args;
        for (const auto& p : op.params) args.push_back(sample(p.type));
        InstanceValue inst(s, fields);
        const InstanceValue initial = inst;
        ExecutionRecord rec;
        try {
          rec = execute(op, args, inst);
        } catch (const ExecutionFault& f) {
          rec = f.partial();
        }
        InstanceValue replay = initial;
        try {
          auto again = execute(op, args, replay);
          EXPECT_EQ(again.dynamic_dav, rec.dynamic_dav);
        } catch (const ExecutionFault&) {
        }
        EXPECT_TRUE(vector_leq(rec.dynamic_dav, op.static_dav)) << op.name;
        AccessVector inv = apply_inverse(rec, inst);
        EXPECT_TRUE(vector_leq(inv, rec.dynamic_dav)) << op.name;
        for (const auto& [field, _] : rec.before_image) EXPECT_EQ(rec.dynamic_dav[field], W);
        for (std::size_t i = 0; i < rec.dynamic_dav.size(); ++i) {
          if (rec.dynamic_dav[i] == W) {
            EXPECT_TRUE(rec.before_image.contains(i));
          }
        }
        EXPECT_EQ(inst, initial) << op.name;
      }
    }
  }
}

TEST(Property, RandomOperationsDynamicBelowStatic) {
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    fieldlock::testing::SourceGen gen(seed);
    auto s = std::make_shared<const AdtSchema>(parse_adt(gen.adt_source("R", gen.pick(1, 4))));
    for (const auto& op : s->operations) {
      for (int round = 0; round < 5; ++round) {
        std::vector<Value> fields;
        for (std::size_t i = 0; i < s->dimension(); ++i) fields.push_back(gen.small_int());
        std::vector<Value> args;
        for (std::size_t i = 0; i < op.params.size(); ++i) args.push_back(gen.small_int());
        InstanceValue inst(s, fields);
        const InstanceValue initial = inst;
        ExecutionRecord rec;
        try {
          rec = execute(op, args, inst);
        } catch (const ExecutionFault& f) {
          rec = f.partial();
        }
        ASSERT_TRUE(vector_leq(rec.dynamic_dav, op.static_dav));
        apply_inverse(rec, inst);
        ASSERT_EQ(inst, initial);
      }
    }
  }
}
