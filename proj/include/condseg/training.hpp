#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condseg/metadata.hpp"
#include "condseg/synth.hpp"
#include "condseg/tensor.hpp"
#include "condseg/unet.hpp"

namespace condseg {

struct CyclicLRConfig {
  double lr_min = 0.0002;
  double lr_max = 0.0008;
  std::size_t cycles = 8;
  std::size_t total_batches = 0;

  void validate() const;
};

/// Triangular schedule: rises linearly from lr_min to lr_max over the first half
/// of each cycle and falls back over the second half.
double cyclic_lr(const CyclicLRConfig& cfg, std::size_t batch_index);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m, v;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>>& params);

/// One bias-corrected Adam update using the gradients stored on the parameters,
/// which are zeroed afterwards.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Parameter<T>>& params, double lr);

// ---- batches ----------------------------------------------------------------

enum class MetaMode { Correct, Dummy, Swap };

std::string_view to_string(MetaMode mode);
MetaMode parse_meta_mode(std::string_view name);

/// How a sample's record becomes the metadata fed to the model.
struct MetaTransform {
  MetaMode mode = MetaMode::Correct;
  std::size_t field = 0;                 // categorical field permuted in Swap mode
  std::vector<std::size_t> permutation;  // class i -> permutation[i]
};

MetadataVector transform_metadata(const MetadataSchema& schema, const MetadataRecord& record, const MetaTransform& t);

struct Batch {
  Tensor image;  // [B,1,H,W]
  Tensor mask;   // [B,K,H,W]
  Tensor meta;   // [B,M]; undefined when the model takes no metadata
};

Batch make_batch(const std::vector<const Sample*>& samples, const MetadataSchema& schema, const MetaTransform& meta,
                 bool with_meta);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::string loss = "bce";  // "bce" or "bce-balanced"
  MetaMode meta_mode = MetaMode::Correct;
  double lr_min = 0.0002;
  double lr_max = 0.0008;
  std::size_t cycles = 8;
  std::string checkpoint_policy = "best";  // "best" (lowest val loss) or "last"
  double threshold = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  /// `seed` is required; other keys default. Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  double lr_last = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string rng_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place and leaves the model holding the selected epoch's parameters.
/// Throws NumericalError when a batch loss is not finite.
TrainResult train(ConditionedUNet<float>& model, const MetadataSchema& schema, const std::vector<const Sample*>& train_set,
                  const std::vector<const Sample*>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean loss and mean per-image F1 over `samples` without recording.
std::pair<double, double> validate_model(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                                         const std::vector<const Sample*>& samples, const MetaTransform& meta,
                                         const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

nlohmann::json unet_config_to_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  UNetConfig model;
  nlohmann::json config;  // training config and anything else worth echoing
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::string rng_state;
};

Checkpoint make_checkpoint(const ConditionedUNet<float>& model, const nlohmann::json& config, const TrainResult& result);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `model`; ShapeError names the first parameter
/// whose name or shape disagrees.
void load_parameters(ConditionedUNet<float>& model, const Checkpoint& ckpt);
ConditionedUNet<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace condseg
