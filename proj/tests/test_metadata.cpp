#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "condseg/error.hpp"
#include "condseg/metadata.hpp"
#include "condseg/rng.hpp"

using namespace condseg;

namespace {

CategoricalField cell_lines() {
  CategoricalField f{"cell_line", {}};
  for (int i = 0; i < 7; ++i) f.class_names.push_back("line" + std::to_string(i));
  return f;
}

MetadataSchema task_schema() { return MetadataSchema({CategoricalField{"task", {"nuclei", "anomaly"}}}); }

std::vector<std::string> captured;
void capture(const std::string& msg) { captured.push_back(msg); }

}  // namespace

TEST(Metadata, OneHotForSevenClasses) {
  const MetadataSchema schema({cell_lines()});
  EXPECT_EQ(schema.total_dim(), 7u);
  EXPECT_EQ(encode(schema, {{std::string("line2")}}), (MetadataVector{0, 0, 1, 0, 0, 0, 0}));
}

TEST(Metadata, ContinuousIsMinMaxNormalized) {
  const MetadataSchema schema({ContinuousField{"size", 0.0, 100.0}});
  EXPECT_EQ(encode(schema, {{25.0}}), (MetadataVector{0.25f}));
}

TEST(Metadata, FieldsConcatenateInSchemaOrder) {
  const MetadataSchema schema({CategoricalField{"c", {"a", "b", "c"}}, ContinuousField{"v", 0.0, 100.0}});
  EXPECT_EQ(schema.total_dim(), 4u);
  EXPECT_EQ(encode(schema, {{std::string("b"), 50.0}}), (MetadataVector{0, 1, 0, 0.5f}));
}

TEST(Metadata, EncodeErrors) {
  const MetadataSchema schema({CategoricalField{"c", {"a", "b"}}, ContinuousField{"v", 0.0, 1.0}});
  EXPECT_THROW(encode(schema, {{std::string("z"), 0.5}}), ValidationError);
  EXPECT_THROW(encode(schema, {{std::string("a"), std::nan("")}}), ValidationError);
  EXPECT_THROW(encode(schema, {{std::string("a")}}), ValidationError);
  EXPECT_THROW(encode(schema, {{0.5, std::string("a")}}), ValidationError);
}

TEST(Metadata, SchemaInvariants) {
  EXPECT_THROW(MetadataSchema({CategoricalField{"c", {"a", "a"}}}), ValidationError);
  EXPECT_THROW(MetadataSchema({ContinuousField{"v", 1.0, 1.0}}), ValidationError);
  EXPECT_THROW(MetadataSchema({CategoricalField{"c", {}}}), ValidationError);
  EXPECT_THROW(MetadataSchema({ContinuousField{"v", 0, 1}, ContinuousField{"v", 0, 1}}), ValidationError);
  EXPECT_THROW(MetadataSchema(std::vector<MetadataField>{}), ValidationError);
}

TEST(Metadata, OutOfRangeValuesClampWithWarning) {
  captured.clear();
  set_warning_sink(&capture);
  const MetadataSchema schema({ContinuousField{"size", 2.0, 6.0}});
  EXPECT_EQ(encode(schema, {{10.0}}), (MetadataVector{1.0f}));
  EXPECT_EQ(encode(schema, {{-1.0}}), (MetadataVector{0.0f}));
  EXPECT_EQ(encode(schema, {{4.0}}), (MetadataVector{0.5f}));
  set_warning_sink(nullptr);
  ASSERT_EQ(captured.size(), 2u);
  EXPECT_NE(captured[0].find("size"), std::string::npos);
}

TEST(Metadata, DummyIsZeroAndDiffersFromEveryOneHot) {
  const MetadataSchema schema({cell_lines()});
  EXPECT_EQ(dummy(schema), MetadataVector(7, 0.0f));
  for (const auto& name : cell_lines().class_names) EXPECT_NE(encode(schema, {{name}}), dummy(schema));
}

TEST(Metadata, OneHotPartsHaveExactlyOneOnePerField) {
  const MetadataSchema schema(
      {CategoricalField{"a", {"x", "y", "z"}}, ContinuousField{"v", -1.0, 3.0}, CategoricalField{"b", {"p", "q"}}});
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::string a = std::vector<std::string>{"x", "y", "z"}[rng.uniform_int(0, 2)];
    const std::string b = rng.uniform() < 0.5 ? "p" : "q";
    const double v = rng.uniform(-1.0, 3.0);
    const auto e = encode(schema, {{a, v, b}});
    EXPECT_FLOAT_EQ(e[0] + e[1] + e[2], 1.0f);
    EXPECT_FLOAT_EQ(e[4] + e[5], 1.0f);
    EXPECT_GE(e[3], 0.0f);
    EXPECT_LE(e[3], 1.0f);
  }
}

TEST(Metadata, ContinuousEncodingIsMonotone) {
  const MetadataSchema schema({ContinuousField{"r", 1.5, 6.0}});
  float prev = -1.0f;
  for (double v = 1.5; v <= 6.0; v += 0.25) {
    const float e = encode(schema, {{v}})[0];
    EXPECT_GT(e, prev);
    prev = e;
  }
}

TEST(Metadata, SwapTranspositionAndIdentity) {
  const auto schema = task_schema();
  const MetadataRecord nuc{{std::string("nuclei")}};
  EXPECT_EQ(swap(schema, nuc, 0, {0, 1}), nuc);
  const auto swapped = swap(schema, nuc, 0, {1, 0});
  EXPECT_EQ(swapped, (MetadataRecord{{std::string("anomaly")}}));
  EXPECT_EQ(swap(schema, swapped, 0, {1, 0}), nuc);
}

TEST(Metadata, SwapRejectsBadPermutations) {
  const auto schema = task_schema();
  const MetadataRecord nuc{{std::string("nuclei")}};
  EXPECT_THROW(swap(schema, nuc, 0, {0}), ValidationError);
  EXPECT_THROW(swap(schema, nuc, 0, {1, 1}), ValidationError);
  EXPECT_THROW(swap(schema, nuc, 0, {0, 2}), ValidationError);
  const MetadataSchema cont({ContinuousField{"v", 0, 1}});
  EXPECT_THROW(swap(cont, {{0.5}}, 0, {0}), ValidationError);
}

TEST(Metadata, ParsePermutation) {
  const MetadataSchema schema({CategoricalField{"style", {"accurate", "fine", "coarse"}}});
  EXPECT_EQ(parse_permutation(schema, 0, "accurate:coarse"), (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(parse_permutation(schema, 0, "accurate:fine,fine:coarse,coarse:accurate"),
            (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(parse_permutation(schema, 0, ""), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(parse_permutation(schema, 0, "accurate:fine,fine:fine"), ValidationError);
  EXPECT_THROW(parse_permutation(schema, 0, "accurate-fine"), ValidationError);
  EXPECT_THROW(parse_permutation(schema, 0, "accurate:bogus"), ValidationError);
  EXPECT_EQ(parse_permutation(task_schema(), 0, "nuclei:anomaly"), (std::vector<std::size_t>{1, 0}));
}

TEST(Metadata, FirstCategoricalField) {
  EXPECT_EQ(first_categorical_field(MetadataSchema({ContinuousField{"v", 0, 1}, CategoricalField{"c", {"a"}}})), 1u);
  EXPECT_THROW(first_categorical_field(MetadataSchema({ContinuousField{"v", 0, 1}})), ValidationError);
}

TEST(Metadata, JsonRoundTrip) {
  const MetadataSchema schema({CategoricalField{"c", {"a", "b"}}, ContinuousField{"v", -2.5, 7.0}});
  EXPECT_EQ(MetadataSchema::from_json(schema.to_json()), schema);
  const MetadataRecord r{{std::string("b"), 3.25}};
  EXPECT_EQ(record_from_json(record_to_json(r)), r);
  EXPECT_THROW(MetadataSchema::from_json(nlohmann::json::parse(R"([{"type":"weird","name":"x"}])")), ValidationError);
  EXPECT_THROW(MetadataSchema::from_json(nlohmann::json::parse(R"([{"type":"continuous"}])")), FormatError);
}
