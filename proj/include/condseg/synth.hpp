#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseg/metadata.hpp"
#include "condseg/rng.hpp"
#include "condseg/tensor.hpp"

namespace condseg {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + val + test; }
  std::size_t of(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
};

struct Sample {
  std::string id;
  std::string image_key;  // samples rendered from the same image share this key
  Tensor image;           // [1,H,W], values in [0,1]
  Tensor mask;            // [K,H,W], values in {0,1}
  MetadataRecord record;
  std::string subset_tag;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::string generator;
  int version = 1;
  std::uint64_t seed = 0;
  nlohmann::json options;  // generator parameters echo
  MetadataSchema schema;
  std::vector<std::string> subsets;  // declared subset tags, in table order

  /// counts[split][subset]
  std::map<std::string, std::map<std::string, std::size_t>> counts;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  std::vector<const Sample*> select(Split split, const std::optional<std::string>& subset = std::nullopt) const;
  void recount();
};

/// Appearance and layout of one blob scene. Intensities are in [0,1]; radii in pixels.
struct SceneSpec {
  std::size_t size = 64;
  std::size_t min_objects = 3;
  std::size_t max_objects = 7;
  double min_radius = 4.0;
  double max_radius = 8.0;
  double background = 0.25;
  double foreground = 0.65;
  double noise = 0.05;
  double eccentricity = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RenderedScene {
  std::vector<float> image;  // size*size
  std::vector<float> mask;
};

/// Non-overlapping ellipses with anti-aliased edges plus Gaussian noise.
/// Always contains at least one object.
RenderedScene render_blobs(const SceneSpec& spec);

/// Texture parameters of domain `index` (a fixed table, cycled when index >= 7),
/// geometry scaled to `size`.
SceneSpec domain_style(std::size_t index, std::size_t size);

// ---- generators -------------------------------------------------------------

inline constexpr int kGeneratorVersion = 1;

struct DomainsOptions {
  std::size_t styles = 7;
  SplitCounts per_style{64, 16, 16};
  std::size_t image_size = 64;
  std::uint64_t seed = 1;
};
Dataset gen_domains(const DomainsOptions& opts);

/// Blob dataset with one appearance, used as the base of the annotation-style preset.
struct BlobsOptions {
  SplitCounts counts{192, 48, 48};
  std::size_t image_size = 64;
  std::uint64_t seed = 1;
};
Dataset gen_blobs(const BlobsOptions& opts);

struct AnnotationStyleOptions {
  double fine_tolerance = 2.0;
  double coarse_tolerance = 3.5;
};
/// Splits the train part into thirds {accurate, fine, coarse}; remainder goes to
/// "accurate". Val/test masks stay untouched and are labeled "accurate".
Dataset gen_annotation_styles(const Dataset& base, std::uint64_t seed, const AnnotationStyleOptions& opts = {});

struct MultitaskOptions {
  SplitCounts nuclei{400, 40, 60};   // nuclei-task samples
  SplitCounts anomaly{48, 16, 24};   // anomaly-task samples
  SplitCounts multilabel{48, 16, 24};  // images carrying both masks (<= anomaly)
  std::size_t image_size = 64;
  std::uint64_t seed = 1;
};
/// Each sample carries exactly one mask; metadata field "task" selects it.
/// Multilabel images appear twice (once per task) with the same image_key.
Dataset gen_multitask(const MultitaskOptions& opts);

struct ContinuousOptions {
  SplitCounts counts{160, 40, 40};
  std::size_t image_size = 64;
  double min_radius = 3.0;  // at 64 px; scaled with image_size
  double max_radius = 12.0;
  std::uint64_t seed = 1;
};
/// Organ-like region with a faint lesion; the target is the lesion, the metadata
/// its radius normalized to [0,1].
Dataset gen_continuous(const ContinuousOptions& opts);

/// Named presets: "domains", "styles", "multitask", "continuous".
Dataset generate_preset(std::string_view preset, std::uint64_t seed, std::size_t image_size);

/// Pairs the two task samples of each multilabel image into one sample with a
/// [2,H,W] mask (nuclei, anomaly). Only images with both tasks are kept.
Dataset pair_multilabel(const Dataset& multitask);

// ---- persistence ------------------------------------------------------------

/// manifest.json plus per-sample CSEG tensors; optional PGM previews.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool export_pgm = false);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

}  // namespace condseg
