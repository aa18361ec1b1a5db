#include "condseg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "condseg/error.hpp"

namespace condseg {

double f1_score(std::span<const float> pred, std::span<const float> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("f1_score: prediction has " + std::to_string(pred.size()) + " pixels, target has " +
                     std::to_string(target.size()));
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5f, t = target[i] > 0.5f;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double f1_score(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("f1_score: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()) + " differ");
  }
  return f1_score(pred.data(), target.data());
}

double mean_channel_f1(std::span<const float> pred, std::span<const float> target, std::size_t channels) {
  if (channels == 0 || pred.size() % channels != 0) throw ShapeError("mean_channel_f1: bad channel count");
  const std::size_t plane = pred.size() / channels;
  double total = 0.0;
  for (std::size_t k = 0; k < channels; ++k) {
    total += f1_score(pred.subspan(k * plane, plane), target.subspan(k * plane, plane));
  }
  return total / static_cast<double>(channels);
}

nlohmann::json EvalReport::to_json() const {
  return {{"preset", preset},         {"mode", mode},   {"subset_f1", subset_f1}, {"subset_counts", subset_counts},
          {"average_f1", average_f1}, {"count", count}, {"config", config},       {"seeds", seeds}};
}

void summarize(EvalReport& report) {
  if (report.samples.empty()) throw ValidationError("summarize: report has no samples");
  report.subset_f1.clear();
  report.subset_counts.clear();
  double total = 0.0;
  std::map<std::string, double> sums;
  for (const auto& s : report.samples) {
    total += s.f1;
    sums[s.subset] += s.f1;
    ++report.subset_counts[s.subset];
  }
  for (const auto& [subset, sum] : sums) report.subset_f1[subset] = sum / static_cast<double>(report.subset_counts[subset]);
  report.count = report.samples.size();
  report.average_f1 = total / static_cast<double>(report.count);
}

EvalReport evaluate(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                    const std::vector<const Sample*>& samples, const EvalOptions& opts) {
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) throw ValidationError("evaluate: threshold must lie in (0,1)");
  const auto& mc = model.config();
  const bool with_meta = uses_metadata(mc.conditioning);
  if (with_meta && schema.total_dim() != mc.meta_dim) {
    throw ValidationError("evaluate: model meta_dim " + std::to_string(mc.meta_dim) + " does not match schema total_dim " +
                          std::to_string(schema.total_dim()));
  }
  if (opts.meta.mode == MetaMode::Swap) {
    // Reject a bad permutation up front even when the model ignores metadata.
    swap(schema, samples.front()->record, opts.meta.field, opts.meta.permutation);
  }

  EvalReport report;
  report.mode = std::string(to_string(opts.meta.mode));
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t begin = 0; begin < samples.size(); begin += bs) {
    const std::vector<const Sample*> chunk(
        samples.begin() + static_cast<std::ptrdiff_t>(begin),
        samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), begin + bs)));
    const Batch batch = make_batch(chunk, schema, opts.meta, with_meta);
    const Tensor pred = predict_mask(model, batch.image, batch.meta, opts.threshold);
    const std::size_t out_c = pred.dim(1), plane = pred.dim(2) * pred.dim(3);
    const std::size_t mask_c = batch.mask.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Sample& s = *chunk[i];
      auto p = pred.data().subspan(i * out_c * plane, out_c * plane);
      auto t = batch.mask.data().subspan(i * mask_c * plane, mask_c * plane);
      SampleScore score{s.id, s.subset_tag, 0.0, 0, 0};
      if (auto it = opts.head_for_subset.find(s.subset_tag); it != opts.head_for_subset.end()) {
        if (mask_c != 1 || it->second >= out_c) {
          throw ShapeError("evaluate: head " + std::to_string(it->second) + " for subset '" + s.subset_tag +
                           "' needs a single-channel mask and a model with more outputs");
        }
        p = p.subspan(it->second * plane, plane);
      } else if (mask_c != out_c) {
        throw ShapeError("evaluate: sample '" + s.id + "' has " + std::to_string(mask_c) + " mask channels, model outputs " +
                         std::to_string(out_c));
      }
      score.f1 = mean_channel_f1(p, t, mask_c);
      score.predicted_pixels = static_cast<std::size_t>(std::count(p.begin(), p.end(), 1.0f));
      score.target_pixels = static_cast<std::size_t>(std::count(t.begin(), t.end(), 1.0f));
      report.samples.push_back(std::move(score));
    }
  }

  summarize(report);
  return report;
}

void write_scores_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "id,subset,f1,predicted_pixels,target_pixels\n";
  char num[40];
  for (const auto& s : report.samples) {
    std::snprintf(num, sizeof num, "%.17g", s.f1);
    os << s.id << ',' << s.subset << ',' << num << ',' << s.predicted_pixels << ',' << s.target_pixels << '\n';
  }
}

}  // namespace condseg
