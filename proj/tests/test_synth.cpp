#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "condseg/error.hpp"
#include "condseg/eval.hpp"
#include "condseg/synth.hpp"
#include "condseg/tensor_io.hpp"
#include "oracles.hpp"

using namespace condseg;

namespace {

bool binary_and_nontrivial(const Tensor& mask) {
  std::size_t on = 0;
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) return false;
    on += v == 1.0f;
  }
  return on > 0 && on < mask.numel();
}

std::pair<double, double> mean_std(const Tensor& image) {
  double m = 0.0;
  for (float v : image.data()) m += v;
  m /= static_cast<double>(image.numel());
  double var = 0.0;
  for (float v : image.data()) var += (v - m) * (v - m);
  return {m, std::sqrt(var / static_cast<double>(image.numel()))};
}

void expect_same(const Dataset& a, const Dataset& b) {
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, b.samples[i].id);
    EXPECT_EQ(oracle::as_double(a.samples[i].image), oracle::as_double(b.samples[i].image));
    EXPECT_EQ(oracle::as_double(a.samples[i].mask), oracle::as_double(b.samples[i].mask));
    EXPECT_EQ(a.samples[i].record, b.samples[i].record);
  }
}

}  // namespace

TEST(Synth, RenderBlobsIsDeterministicAndValid) {
  SceneSpec spec;
  spec.size = 32;
  spec.seed = 12;
  const auto a = render_blobs(spec), b = render_blobs(spec);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  for (float v : a.image) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_TRUE(binary_and_nontrivial(Tensor({32, 32}, a.mask)));
  spec.seed = 13;
  EXPECT_NE(render_blobs(spec).image, a.image);
  spec.min_objects = 5;
  spec.max_objects = 2;
  EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Synth, DomainsCountsSchemaAndDeterminism) {
  DomainsOptions o;
  o.per_style = {6, 2, 3};
  o.image_size = 32;
  o.seed = 5;
  const auto ds = gen_domains(o);
  EXPECT_EQ(ds.samples.size(), 7u * 11u);
  EXPECT_EQ(ds.manifest.schema.total_dim(), 7u);
  EXPECT_EQ(ds.manifest.counts.at("train").at("domain3"), 6u);
  EXPECT_EQ(ds.select(Split::Test, std::string("domain6")).size(), 3u);
  for (const auto& s : ds.samples) {
    EXPECT_TRUE(binary_and_nontrivial(s.mask)) << s.id;
    EXPECT_EQ(s.image.shape(), (Shape{1, 32, 32}));
    const auto e = encode(ds.manifest.schema, s.record);
    EXPECT_EQ(std::count(e.begin(), e.end(), 1.0f), 1);
  }
  expect_same(ds, gen_domains(o));
}

TEST(Synth, DomainsAreDistinguishableFromImageStatistics) {
  DomainsOptions o;
  o.per_style = {12, 0, 10};
  o.image_size = 32;
  o.seed = 9;
  const auto ds = gen_domains(o);
  const auto train = ds.select(Split::Train), test = ds.select(Split::Test);
  std::size_t correct = 0;
  for (const auto* q : test) {
    const auto [qm, qs] = mean_std(q->image);
    std::vector<std::pair<double, std::string>> dist;
    for (const auto* t : train) {
      const auto [tm, ts] = mean_std(t->image);
      dist.emplace_back(std::hypot(qm - tm, qs - ts), t->subset_tag);
    }
    std::partial_sort(dist.begin(), dist.begin() + 3, dist.end());
    std::map<std::string, int> votes;
    for (int k = 0; k < 3; ++k) ++votes[dist[k].second];
    const auto best = std::max_element(votes.begin(), votes.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    correct += best->first == q->subset_tag;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(test.size()), 0.8);
}

TEST(Synth, AnnotationStylesPartitionTrainIntoThirds) {
  BlobsOptions b;
  b.counts = {20, 4, 4};
  b.image_size = 32;
  const auto base = gen_blobs(b);
  const auto ds = gen_annotation_styles(base, 77);
  ASSERT_EQ(ds.samples.size(), base.samples.size());
  std::map<std::string, std::size_t> train_styles;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto& orig = base.samples[i];
    EXPECT_EQ(oracle::as_double(s.image), oracle::as_double(orig.image));
    if (s.split != Split::Train) {
      EXPECT_EQ(s.subset_tag, "accurate");
      EXPECT_EQ(oracle::as_double(s.mask), oracle::as_double(orig.mask));
      continue;
    }
    ++train_styles[s.subset_tag];
    if (s.subset_tag == "accurate") EXPECT_EQ(oracle::as_double(s.mask), oracle::as_double(orig.mask));
    EXPECT_EQ(s.record, (MetadataRecord{{s.subset_tag}}));
  }
  EXPECT_EQ(train_styles["accurate"], 8u);
  EXPECT_EQ(train_styles["fine"], 6u);
  EXPECT_EQ(train_styles["coarse"], 6u);
}

TEST(Synth, CoarseAnnotationsDegradeMoreThanFine) {
  BlobsOptions b;
  b.counts = {60, 1, 1};
  b.image_size = 64;
  const auto base = gen_blobs(b);
  const auto ds = gen_annotation_styles(base, 3);
  std::map<std::string, std::pair<double, int>> f1;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split != Split::Train) continue;
    auto& acc = f1[ds.samples[i].subset_tag];
    acc.first += f1_score(ds.samples[i].mask, base.samples[i].mask);
    ++acc.second;
  }
  const double fine = f1["fine"].first / f1["fine"].second, coarse = f1["coarse"].first / f1["coarse"].second;
  EXPECT_LT(fine, 1.0);
  EXPECT_GT(fine, coarse);
}

TEST(Synth, MultitaskSamplesPairThroughImageKey) {
  MultitaskOptions o;
  o.nuclei = {20, 4, 4};
  o.anomaly = {6, 2, 2};
  o.multilabel = {4, 1, 1};
  o.image_size = 32;
  o.seed = 4;
  const auto ds = gen_multitask(o);
  EXPECT_EQ(ds.manifest.counts.at("train").at("nuclei"), 20u);
  EXPECT_EQ(ds.manifest.counts.at("train").at("anomaly"), 6u);
  EXPECT_EQ(ds.manifest.counts.at("test").at("anomaly"), 2u);
  std::map<std::string, std::vector<const Sample*>> by_key;
  for (const auto& s : ds.samples) {
    EXPECT_TRUE(binary_and_nontrivial(s.mask)) << s.id;
    EXPECT_EQ(s.record, (MetadataRecord{{s.subset_tag}}));
    by_key[s.image_key].push_back(&s);
  }
  std::size_t pairs = 0;
  for (const auto& [key, group] : by_key) {
    if (group.size() != 2) continue;
    ++pairs;
    EXPECT_EQ(oracle::as_double(group[0]->image), oracle::as_double(group[1]->image));
    EXPECT_NE(group[0]->subset_tag, group[1]->subset_tag);
    double overlap = 0.0;
    for (std::size_t i = 0; i < group[0]->mask.numel(); ++i) overlap += group[0]->mask[i] * group[1]->mask[i];
    EXPECT_EQ(overlap, 0.0);
  }
  EXPECT_EQ(pairs, 6u);

  const auto paired = pair_multilabel(ds);
  ASSERT_EQ(paired.samples.size(), 6u);
  EXPECT_EQ(paired.samples[0].mask.shape(), (Shape{2, 32, 32}));
  EXPECT_EQ(paired.samples[0].subset_tag, "multilabel");

  o.multilabel = {7, 1, 1};
  EXPECT_THROW(gen_multitask(o), ValidationError);
}

TEST(Synth, ContinuousRadiiSpanTheRangeAndDriveMaskSize) {
  ContinuousOptions o;
  o.counts = {30, 5, 5};
  o.image_size = 32;
  const auto ds = gen_continuous(o);
  const auto& schema = ds.manifest.schema;
  double lo = 1.0, hi = 0.0;
  std::vector<std::pair<double, double>> radius_area;
  for (const auto& s : ds.samples) {
    const double e = encode(schema, s.record)[0];
    lo = std::min(lo, e);
    hi = std::max(hi, e);
    double area = 0.0;
    for (float v : s.mask.data()) area += v;
    radius_area.emplace_back(std::get<double>(s.record.values[0]), area);
    EXPECT_TRUE(binary_and_nontrivial(s.mask)) << s.id;
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  std::sort(radius_area.begin(), radius_area.end());
  for (std::size_t i = 1; i < radius_area.size(); ++i) {
    EXPECT_GE(radius_area[i].second + 4.0, radius_area[i - 1].second);
  }
  EXPECT_GT(radius_area.back().second, 4.0 * radius_area.front().second);
}

TEST(Synth, PresetsAndUnknownNames) {
  EXPECT_THROW(generate_preset("nope", 1, 32), ValidationError);
  EXPECT_EQ(parse_split("val"), Split::Val);
  EXPECT_THROW(parse_split("holdout"), ValidationError);
}

TEST(Synth, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "condseg_synth_roundtrip";
  std::filesystem::remove_all(dir);
  MultitaskOptions o;
  o.nuclei = {4, 1, 1};
  o.anomaly = {2, 1, 1};
  o.multilabel = {1, 0, 0};
  o.image_size = 16;
  const auto ds = gen_multitask(o);
  save_dataset(ds, dir, true);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto back = load_dataset(dir);
  expect_same(ds, back);
  EXPECT_EQ(back.manifest.schema, ds.manifest.schema);
  EXPECT_EQ(back.manifest.counts, ds.manifest.counts);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].image_key, ds.samples[i].image_key);
    EXPECT_EQ(back.samples[i].split, ds.samples[i].split);
  }
  std::filesystem::remove(dir / "samples" / (ds.samples[0].id + ".mask.cseg"));
  EXPECT_THROW(load_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
}
