#include "condseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "condseg/error.hpp"
#include "condseg/eval.hpp"
#include "condseg/ops.hpp"
#include "condseg/tensor_io.hpp"

namespace condseg {

void CyclicLRConfig::validate() const {
  if (!(lr_min > 0.0) || !(lr_min < lr_max)) throw ValidationError("lr: need 0 < lr_min < lr_max");
  if (cycles < 1) throw ValidationError("lr: cycles must be >= 1");
  if (total_batches < 1) throw ValidationError("lr: total_batches must be >= 1");
}

double cyclic_lr(const CyclicLRConfig& cfg, std::size_t batch_index) {
  cfg.validate();
  if (batch_index >= cfg.total_batches) {
    throw ValidationError("lr: batch index " + std::to_string(batch_index) + " outside [0, " +
                          std::to_string(cfg.total_batches) + ")");
  }
  const double cycle_len = static_cast<double>(cfg.total_batches) / static_cast<double>(cfg.cycles);
  const double p = std::fmod(static_cast<double>(batch_index), cycle_len) / cycle_len;
  return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 - std::abs(2.0 * p - 1.0));
}

template <typename T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>>& params) {
  AdamState<T> s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), T(0));
    s.v.emplace_back(p.tensor.numel(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Parameter<T>>& params, double lr) {
  if (state.m.size() != params.size()) throw ValidationError("adam: state does not match the parameter list");
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || p.tensor.grad().size() != p.tensor.numel()) {
      throw ValidationError("adam: missing gradient for parameter '" + p.name + "'");
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    BasicTensor<T> t = params[k].tensor;
    auto data = t.data();
    auto grad = t.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      data[i] = static_cast<T>(data[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps));
    }
    t.zero_grad();
  }
}

template AdamState<float> make_adam_state(const std::vector<Parameter<float>>&);
template AdamState<double> make_adam_state(const std::vector<Parameter<double>>&);
template void adam_step(AdamState<float>&, const std::vector<Parameter<float>>&, double);
template void adam_step(AdamState<double>&, const std::vector<Parameter<double>>&, double);

std::string_view to_string(MetaMode mode) {
  switch (mode) {
    case MetaMode::Correct: return "correct";
    case MetaMode::Dummy: return "dummy";
    case MetaMode::Swap: return "swap";
  }
  return "?";
}

MetaMode parse_meta_mode(std::string_view name) {
  if (name == "correct") return MetaMode::Correct;
  if (name == "dummy") return MetaMode::Dummy;
  if (name == "swap") return MetaMode::Swap;
  throw ValidationError("unknown metadata mode '" + std::string(name) + "' (expected correct|dummy|swap)");
}

MetadataVector transform_metadata(const MetadataSchema& schema, const MetadataRecord& record, const MetaTransform& t) {
  switch (t.mode) {
    case MetaMode::Correct: return encode(schema, record);
    case MetaMode::Dummy: return dummy(schema);
    case MetaMode::Swap: return encode(schema, swap(schema, record, t.field, t.permutation));
  }
  return {};
}

Batch make_batch(const std::vector<const Sample*>& samples, const MetadataSchema& schema, const MetaTransform& meta,
                 bool with_meta) {
  if (samples.empty()) throw ValidationError("batch: no samples");
  const Shape& ishape = samples.front()->image.shape();
  const Shape& mshape = samples.front()->mask.shape();
  const std::size_t b = samples.size();
  Batch out{Tensor({b, ishape[0], ishape[1], ishape[2]}), Tensor({b, mshape[0], mshape[1], mshape[2]}), {}};
  if (with_meta) out.meta = Tensor({b, schema.total_dim()});
  const std::size_t in = shape_numel(ishape), mn = shape_numel(mshape);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = *samples[i];
    if (s.image.shape() != ishape || s.mask.shape() != mshape) {
      throw ShapeError("batch: sample '" + s.id + "' has shape " + shape_str(s.image.shape()) + "/" +
                       shape_str(s.mask.shape()) + ", expected " + shape_str(ishape) + "/" + shape_str(mshape));
    }
    std::copy(s.image.data().begin(), s.image.data().end(), out.image.data().begin() + static_cast<std::ptrdiff_t>(i * in));
    std::copy(s.mask.data().begin(), s.mask.data().end(), out.mask.data().begin() + static_cast<std::ptrdiff_t>(i * mn));
    if (with_meta) {
      const auto v = transform_metadata(schema, s.record, meta);
      std::copy(v.begin(), v.end(), out.meta.data().begin() + static_cast<std::ptrdiff_t>(i * v.size()));
    }
  }
  return out;
}

// ---- config -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (loss != "bce" && loss != "bce-balanced") throw ValidationError("train: loss must be bce or bce-balanced");
  if (meta_mode == MetaMode::Swap) throw ValidationError("train: meta_mode must be correct or dummy");
  if (checkpoint_policy != "best" && checkpoint_policy != "last") {
    throw ValidationError("train: checkpoint_policy must be best or last");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("train: threshold must lie in (0,1)");
  CyclicLRConfig{lr_min, lr_max, cycles, 1}.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size}, {"seed", seed},
          {"loss", loss},             {"meta_mode", to_string(meta_mode)},
          {"lr_min", lr_min},         {"lr_max", lr_max},         {"cycles", cycles},
          {"checkpoint_policy", checkpoint_policy},               {"threshold", threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  static const std::set<std::string> known{"epochs", "batch_size", "seed",   "loss",
                                           "meta_mode", "lr_min", "lr_max", "cycles",
                                           "checkpoint_policy", "threshold"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("train config: unknown key '" + key + "'");
  }
  if (!j.contains("seed")) throw ValidationError("train config: 'seed' is required");
  TrainConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("loss")) c.loss = j["loss"].get<std::string>();
    if (j.contains("meta_mode")) c.meta_mode = parse_meta_mode(j["meta_mode"].get<std::string>());
    if (j.contains("lr_min")) c.lr_min = j["lr_min"].get<double>();
    if (j.contains("lr_max")) c.lr_max = j["lr_max"].get<double>();
    if (j.contains("cycles")) c.cycles = j["cycles"].get<std::size_t>();
    if (j.contains("checkpoint_policy")) c.checkpoint_policy = j["checkpoint_policy"].get<std::string>();
    if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- training loop ----------------------------------------------------------------

namespace {

std::optional<ClassWeights> loss_weights(const TrainConfig& cfg, const std::vector<const Sample*>& train_set) {
  if (cfg.loss != "bce-balanced") return std::nullopt;
  double pos = 0.0, total = 0.0;
  for (const auto* s : train_set) {
    for (float v : s->mask.data()) pos += v;
    total += static_cast<double>(s->mask.numel());
  }
  const double w = pos > 0.0 ? std::clamp((total - pos) / pos, 1.0, 10.0) : 1.0;
  return ClassWeights{1.0, w};
}

void check_compatible(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                      const std::vector<const Sample*>& samples) {
  const auto& mc = model.config();
  if (uses_metadata(mc.conditioning) && schema.total_dim() != mc.meta_dim) {
    throw ValidationError("model meta_dim " + std::to_string(mc.meta_dim) + " does not match schema total_dim " +
                          std::to_string(schema.total_dim()));
  }
  for (const auto* s : samples) {
    if (s->mask.dim(0) != mc.out_channels) {
      throw ValidationError("sample '" + s->id + "' has " + std::to_string(s->mask.dim(0)) +
                            " mask channels, model outputs " + std::to_string(mc.out_channels));
    }
  }
}

std::vector<std::vector<float>> snapshot(const ConditionedUNet<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(const ConditionedUNet<float>& model, const std::vector<std::vector<float>>& values) {
  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::copy(values[k].begin(), values[k].end(), t.data().begin());
  }
}

}  // namespace

std::pair<double, double> validate_model(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                                         const std::vector<const Sample*>& samples, const MetaTransform& meta,
                                         const TrainConfig& cfg) {
  if (samples.empty()) throw ValidationError("validation set is empty");
  NoGradGuard guard;
  const bool with_meta = uses_metadata(model.config().conditioning);
  double loss_sum = 0.0, f1_sum = 0.0;
  for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
    const std::vector<const Sample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                           samples.begin() + static_cast<std::ptrdiff_t>(
                                                                 std::min(samples.size(), begin + cfg.batch_size)));
    const Batch batch = make_batch(chunk, schema, meta, with_meta);
    const Tensor logits = model.forward(batch.image, batch.meta);
    loss_sum += static_cast<double>(bce_with_logits(logits, batch.mask).item()) * static_cast<double>(chunk.size());
    const Tensor pred = threshold_logits(logits, cfg.threshold);
    const std::size_t per = pred.numel() / chunk.size();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      f1_sum += mean_channel_f1(pred.data().subspan(i * per, per), batch.mask.data().subspan(i * per, per),
                                batch.mask.dim(1));
    }
  }
  const auto n = static_cast<double>(samples.size());
  return {loss_sum / n, f1_sum / n};
}

TrainResult train(ConditionedUNet<float>& model, const MetadataSchema& schema, const std::vector<const Sample*>& train_set,
                  const std::vector<const Sample*>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: training set is empty");
  if (val_set.empty()) throw ValidationError("train: validation set is empty");
  check_compatible(model, schema, train_set);
  check_compatible(model, schema, val_set);

  const bool with_meta = uses_metadata(model.config().conditioning);
  const MetaTransform meta{cfg.meta_mode, 0, {}};
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const CyclicLRConfig schedule{cfg.lr_min, cfg.lr_max, cfg.cycles, cfg.epochs * batches};
  const auto weights = loss_weights(cfg, train_set);
  const auto& params = model.parameters();
  auto adam = make_adam_state(params);

  Rng rng(derive_seed(cfg.seed, 0x7472616e));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::vector<std::vector<float>> best;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const Sample*> chunk;
      for (std::size_t i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i) {
        chunk.push_back(train_set[order[i]]);
      }
      const Batch batch = make_batch(chunk, schema, meta, with_meta);
      const Tensor loss = bce_with_logits(model.forward(batch.image, batch.meta), batch.mask, weights);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("train: loss is " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b));
      }
      loss.backward();
      lr = cyclic_lr(schedule, step++);
      adam_step(adam, params, lr);
      loss_sum += value * static_cast<double>(chunk.size());
    }
    const auto [val_loss, val_f1] = validate_model(model, schema, val_set, meta, cfg);
    const EpochRecord rec{epoch, loss_sum / static_cast<double>(n), val_loss, val_f1, lr};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (epoch == 1 || val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      if (cfg.checkpoint_policy == "best") best = snapshot(model);
    }
  }
  if (cfg.checkpoint_policy == "best") {
    restore(model, best);
  } else {
    result.best_epoch = cfg.epochs;
    result.best_val_loss = result.history.back().val_loss;
  }
  result.rng_state = rng.state();
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "epoch,train_loss,val_loss,val_f1,lr_last\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.val_f1,
                  r.lr_last);
    os << line;
  }
}

// ---- checkpoints ------------------------------------------------------------

nlohmann::json unet_config_to_json(const UNetConfig& cfg) {
  return {{"depth", cfg.depth},
          {"base_channels", cfg.base_channels},
          {"in_channels", cfg.in_channels},
          {"out_channels", cfg.out_channels},
          {"conditioning", to_string(cfg.conditioning)},
          {"meta_dim", cfg.meta_dim}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig cfg;
  try {
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.base_channels = j.at("base_channels").get<std::size_t>();
    cfg.in_channels = j.at("in_channels").get<std::size_t>();
    cfg.out_channels = j.at("out_channels").get<std::size_t>();
    cfg.conditioning = parse_conditioning_kind(j.at("conditioning").get<std::string>());
    cfg.meta_dim = j.at("meta_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Checkpoint make_checkpoint(const ConditionedUNet<float>& model, const nlohmann::json& config, const TrainResult& result) {
  Checkpoint c;
  c.model = model.config();
  c.config = config;
  for (const auto& p : model.parameters()) {
    c.names.push_back(p.name);
    c.tensors.push_back(p.tensor.clone());
  }
  c.best_metric = result.best_val_loss;
  c.best_epoch = result.best_epoch;
  c.rng_state = result.rng_state;
  return c;
}

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'S', 'C', 'K'};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto params = nlohmann::json::array();
  for (std::size_t k = 0; k < ckpt.names.size(); ++k) {
    params.push_back({{"name", ckpt.names[k]}, {"shape", ckpt.tensors[k].shape()}});
  }
  const nlohmann::json header{{"model", unet_config_to_json(ckpt.model)},
                              {"config", ckpt.config},
                              {"params", params},
                              {"best_metric", ckpt.best_metric},
                              {"best_epoch", ckpt.best_epoch},
                              {"rng_state", ckpt.rng_state}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kCheckpointMagic, 4);
  io::write_u16(os, kCheckpointVersion);
  io::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors) {
    for (float v : t.data()) io::write_f32(os, v);
  }
  if (!os) throw Error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  char magic[4];
  io::read_exact(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint file: " + path.string());
  Checkpoint c;
  c.version = io::read_u16(is);
  if (c.version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(c.version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = io::read_u64(is);
  if (len > (std::uint64_t{1} << 32)) throw FormatError("checkpoint header length is implausible");
  std::string text(len, '\0');
  io::read_exact(is, text.data(), text.size(), "checkpoint header");
  try {
    const auto header = nlohmann::json::parse(text);
    c.model = unet_config_from_json(header.at("model"));
    c.config = header.at("config");
    c.best_metric = header.at("best_metric").get<double>();
    c.best_epoch = header.at("best_epoch").get<std::size_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& p : header.at("params")) {
      c.names.push_back(p.at("name").get<std::string>());
      c.tensors.emplace_back(p.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  for (auto& t : c.tensors) {
    for (auto& v : t.data()) v = io::read_f32(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void load_parameters(ConditionedUNet<float>& model, const Checkpoint& ckpt) {
  const auto& params = model.parameters();
  const std::size_t n = std::min(params.size(), ckpt.names.size());
  for (std::size_t k = 0; k < n; ++k) {
    if (params[k].name != ckpt.names[k] || params[k].tensor.shape() != ckpt.tensors[k].shape()) {
      throw ShapeError("checkpoint parameter '" + ckpt.names[k] + "' " + shape_str(ckpt.tensors[k].shape()) +
                       " does not match model parameter '" + params[k].name + "' " +
                       shape_str(params[k].tensor.shape()));
    }
  }
  if (params.size() != ckpt.names.size()) {
    const std::string& first = params.size() > n ? params[n].name : ckpt.names[n];
    throw ShapeError("checkpoint has " + std::to_string(ckpt.names.size()) + " parameters, model has " +
                     std::to_string(params.size()) + "; first unmatched is '" + first + "'");
  }
  for (std::size_t k = 0; k < n; ++k) {
    Tensor t = params[k].tensor;
    std::copy(ckpt.tensors[k].data().begin(), ckpt.tensors[k].data().end(), t.data().begin());
  }
}

ConditionedUNet<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Rng rng(0);
  ConditionedUNet<float> model(ckpt.model, rng);
  load_parameters(model, ckpt);
  return model;
}

}  // namespace condseg
