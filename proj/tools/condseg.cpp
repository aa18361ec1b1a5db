#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "condseg/error.hpp"
#include "condseg/eval.hpp"
#include "condseg/experiment.hpp"
#include "condseg/synth.hpp"
#include "condseg/training.hpp"

using namespace condseg;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("at least one seed is required");
  return out;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  os << j.dump(1) << '\n';
  if (!os) throw Error("cannot write " + path.string());
}

int cmd_train(const std::string& config_path) {
  nlohmann::json cfg = read_json(config_path);
  if (!cfg.is_object()) throw ValidationError("config must be a JSON object");
  const nlohmann::json echo = cfg;
  auto take = [&cfg](const char* key, auto fallback) {
    using V = decltype(fallback);
    if (!cfg.contains(key)) return fallback;
    V v;
    try {
      v = cfg[key].template get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config key '") + key + "': " + e.what());
    }
    cfg.erase(key);
    return v;
  };
  const auto data_dir = take("data", std::string());
  const auto out_dir = take("out", std::string());
  if (data_dir.empty() || out_dir.empty()) throw ValidationError("config needs 'data' and 'out'");
  const auto subset = take("subset", std::string());
  UNetConfig mc;
  mc.conditioning = parse_conditioning_kind(take("conditioning", std::string("SME")));
  mc.depth = take("depth", mc.depth);
  mc.base_channels = take("base_channels", mc.base_channels);
  const TrainConfig tc = TrainConfig::from_json(cfg);

  const Dataset ds = load_dataset(data_dir);
  const auto& schema = ds.manifest.schema;
  mc.meta_dim = uses_metadata(mc.conditioning) ? schema.total_dim() : 0;
  mc.out_channels = ds.samples.empty() ? 1 : ds.samples.front().mask.dim(0);
  mc.validate();
  const auto pick = subset.empty() ? std::optional<std::string>{} : std::optional<std::string>{subset};

  Rng init(derive_seed(tc.seed, 0x696e6974));
  ConditionedUNet<float> model(mc, init);
  const auto result = train(model, schema, ds.select(Split::Train, pick), ds.select(Split::Val, pick), tc,
                            [](const EpochRecord& r) {
                              std::cout << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss "
                                        << r.val_loss << " val_f1 " << r.val_f1 << '\n';
                            });
  std::filesystem::create_directories(out_dir);
  const nlohmann::json full_echo{{"config", echo}, {"train", tc.to_json()}, {"schema", schema.to_json()}};
  save_checkpoint(std::filesystem::path(out_dir) / "checkpoint.ckpt", make_checkpoint(model, full_echo, result));
  write_history_csv(std::filesystem::path(out_dir) / "history.csv", result.history);
  write_json(std::filesystem::path(out_dir) / "config.json", full_echo);
  std::cout << "best epoch " << result.best_epoch << " val_loss " << result.best_val_loss << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& mode,
             const std::string& perm, const std::string& split, const std::string& scores, double threshold) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto model = model_from_checkpoint(ckpt);
  const Dataset ds = load_dataset(data_dir);
  const auto& schema = ds.manifest.schema;
  EvalOptions eo;
  eo.threshold = threshold;
  eo.meta.mode = parse_meta_mode(mode);
  if (eo.meta.mode == MetaMode::Swap) {
    if (perm.empty()) throw ValidationError("--mode swap needs --perm");
    eo.meta.field = first_categorical_field(schema);
    eo.meta.permutation = parse_permutation(schema, eo.meta.field, perm);
  } else if (!perm.empty()) {
    throw ValidationError("--perm is only valid with --mode swap");
  }
  if (ckpt.model.out_channels == 2 && ds.manifest.generator == "multitask") {
    eo.head_for_subset = {{"nuclei", 0}, {"anomaly", 1}};
  }
  auto rep = evaluate(model, schema, ds.select(parse_split(split)), eo);
  rep.preset = ds.manifest.generator;
  rep.config = ckpt.config;
  rep.seeds = {ds.manifest.seed};
  if (!scores.empty()) write_scores_csv(scores, rep);
  std::cout << rep.to_json().dump(1) << '\n';
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Metadata-conditioned U-Net segmentation on synthetic data"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a preset dataset");
  std::string gen_preset, gen_out;
  std::uint64_t gen_seed = 1;
  std::size_t gen_size = 64;
  bool gen_pgm = false;
  gen->add_option("preset", gen_preset, "domains|styles|multitask|continuous")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--size", gen_size, "Image side in pixels");
  gen->add_flag("--pgm", gen_pgm, "Also write PGM previews");

  auto* tr = app.add_subcommand("train", "Train one model from a JSON config");
  std::string train_config;
  tr->add_option("--config", train_config, "Flat JSON config")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_mode = "correct", ev_perm, ev_split = "test", ev_scores;
  double ev_threshold = 0.5;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--mode", ev_mode, "correct|dummy|swap");
  ev->add_option("--perm", ev_perm, "Class mapping for swap mode, e.g. a:b,b:a");
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--scores", ev_scores, "Write per-sample scores CSV");
  ev->add_option("--threshold", ev_threshold);

  auto* ex = app.add_subcommand("experiment", "Run a preset's variant grid over seeds");
  std::string ex_preset, ex_variants, ex_seeds = "1,2,3";
  ExperimentOptions eo;
  bool ex_quiet = false;
  ex->add_option("preset", ex_preset)->required();
  ex->add_option("--variants", ex_variants, "Comma-separated; default is the full grid");
  ex->add_option("--seeds", ex_seeds);
  ex->add_option("--out", eo.out_dir)->required();
  ex->add_option("--size", eo.image_size);
  ex->add_option("--epochs", eo.epochs);
  ex->add_option("--depth", eo.depth);
  ex->add_option("--base-channels", eo.base_channels);
  ex->add_option("--batch-size", eo.batch_size);
  ex->add_flag("--quiet", ex_quiet);

  auto* rp = app.add_subcommand("report", "Aggregate finished runs into a table");
  std::string rp_dir;
  rp->add_option("dir", rp_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    const Dataset ds = generate_preset(gen_preset, gen_seed, gen_size);
    save_dataset(ds, gen_out, gen_pgm);
    std::cout << "wrote " << ds.samples.size() << " samples to " << gen_out << '\n';
    return 0;
  }
  if (tr->parsed()) return cmd_train(train_config);
  if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_mode, ev_perm, ev_split, ev_scores, ev_threshold);
  if (ex->parsed()) {
    eo.seeds = parse_seeds(ex_seeds);
    eo.threads = threads_from_env();
    if (!ex_quiet) eo.log = &std::cerr;
    run_experiment(ex_preset, split_list(ex_variants), eo);
    for (const auto& t : report(eo.out_dir)) {
      if (t.preset == ex_preset) std::cout << render_table(t);
    }
    return 0;
  }
  for (const auto& t : report(rp_dir)) std::cout << render_table(t) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
