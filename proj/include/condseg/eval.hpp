#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseg/synth.hpp"
#include "condseg/training.hpp"
#include "condseg/unet.hpp"

namespace condseg {

/// 2TP / (2TP + FP + FN) on binary masks; two empty masks score 1.
double f1_score(std::span<const float> pred, std::span<const float> target);
double f1_score(const Tensor& pred, const Tensor& target);

/// Mean of per-channel F1 over `channels` equally sized planes.
double mean_channel_f1(std::span<const float> pred, std::span<const float> target, std::size_t channels);

struct EvalOptions {
  MetaTransform meta;
  double threshold = 0.5;
  std::size_t batch_size = 16;
  /// For multi-output models scored against single-mask samples: output channel
  /// to compare for each subset tag.
  std::map<std::string, std::size_t> head_for_subset;
};

struct SampleScore {
  std::string id;
  std::string subset;
  double f1 = 0.0;
  std::size_t predicted_pixels = 0;
  std::size_t target_pixels = 0;
};

struct EvalReport {
  std::string preset;
  std::string mode;
  std::map<std::string, double> subset_f1;
  std::map<std::string, std::size_t> subset_counts;
  double average_f1 = 0.0;  // unweighted mean over samples
  std::size_t count = 0;
  std::vector<SampleScore> samples;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;

  /// Summary without the per-sample rows.
  nlohmann::json to_json() const;
};

/// Recomputes counts, per-subset and average F1 from the per-sample rows.
void summarize(EvalReport& report);

EvalReport evaluate(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                    const std::vector<const Sample*>& samples, const EvalOptions& opts);

/// id,subset,f1,predicted_pixels,target_pixels
void write_scores_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace condseg
