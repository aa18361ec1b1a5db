#include "condseg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "condseg/error.hpp"
#include "condseg/eval.hpp"
#include "condseg/synth.hpp"
#include "condseg/training.hpp"

namespace condseg {

nlohmann::json ExperimentOptions::to_json() const {
  return {{"image_size", image_size}, {"depth", depth},           {"base_channels", base_channels},
          {"epochs", epochs},         {"batch_size", batch_size}, {"seeds", seeds}};
}

std::size_t threads_from_env() {
  const char* v = std::getenv("CONDSEG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ValidationError("CONDSEG_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"domains", "styles", "multitask", "continuous"};
  return names;
}

const std::vector<std::string>& preset_variants(const std::string& preset) {
  static const std::map<std::string, std::vector<std::string>> table{
      {"domains", {"baseline-stratified", "baseline", "FiLM-dummy", "FiLM", "ME", "SME-dummy", "SME"}},
      {"styles", {"baseline-stratified", "baseline", "ME", "SME", "FiLM", "SME-dummy"}},
      {"multitask", {"baseline-stratified", "ME", "SME-dummy", "SME", "two-heads", "SME-multilabel"}},
      {"continuous", {"baseline", "ME", "SME"}},
  };
  const auto it = table.find(preset);
  if (it == table.end()) throw ValidationError("unknown preset '" + preset + "'");
  return it->second;
}

nlohmann::json RunResult::to_json() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"row", r.row},
                         {"mode", r.mode},
                         {"subset_f1", r.subset_f1},
                         {"subset_counts", r.subset_counts},
                         {"average_f1", r.average_f1},
                         {"count", r.count}});
  }
  return {{"preset", preset}, {"variant", variant}, {"seed", seed}, {"subsets", subsets}, {"rows", rows_json}, {"extra", extra}};
}

RunResult RunResult::from_json(const nlohmann::json& j) {
  RunResult r;
  try {
    r.preset = j.at("preset").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.subsets = j.at("subsets").get<std::vector<std::string>>();
    for (const auto& row : j.at("rows")) {
      RowResult x;
      x.row = row.at("row").get<std::string>();
      x.mode = row.at("mode").get<std::string>();
      x.subset_f1 = row.at("subset_f1").get<std::map<std::string, double>>();
      x.subset_counts = row.at("subset_counts").get<std::map<std::string, std::size_t>>();
      x.average_f1 = row.at("average_f1").get<double>();
      x.count = row.at("count").get<std::size_t>();
      r.rows.push_back(std::move(x));
    }
    r.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run.json: ") + e.what());
  }
  return r;
}

namespace {

enum class DataScope { All, PerSubset, Paired, MultilabelImages };

struct VariantSpec {
  ConditioningKind kind = ConditioningKind::SE;
  MetaMode train_meta = MetaMode::Correct;
  DataScope scope = DataScope::All;
};

VariantSpec variant_spec(const std::string& preset, const std::string& variant) {
  const auto& allowed = preset_variants(preset);
  if (std::find(allowed.begin(), allowed.end(), variant) == allowed.end()) {
    throw ValidationError("unknown variant '" + variant + "' for preset '" + preset + "'");
  }
  using K = ConditioningKind;
  if (variant == "baseline-stratified") return {K::SE, MetaMode::Correct, DataScope::PerSubset};
  if (variant == "baseline") return {K::SE, MetaMode::Correct, DataScope::All};
  if (variant == "FiLM-dummy") return {K::FiLM, MetaMode::Dummy, DataScope::All};
  if (variant == "FiLM") return {K::FiLM, MetaMode::Correct, DataScope::All};
  if (variant == "ME") return {K::ME, MetaMode::Correct, DataScope::All};
  if (variant == "SME-dummy") return {K::SME, MetaMode::Dummy, DataScope::All};
  if (variant == "SME") return {K::SME, MetaMode::Correct, DataScope::All};
  if (variant == "two-heads") return {K::SE, MetaMode::Correct, DataScope::Paired};
  return {K::SME, MetaMode::Correct, DataScope::MultilabelImages};
}

struct EvalRow {
  std::string label;
  MetaTransform meta;
};

std::vector<EvalRow> eval_rows(const std::string& preset, const std::string& variant, const VariantSpec& spec,
                               const MetadataSchema& schema) {
  std::vector<EvalRow> rows{{variant, {spec.train_meta, 0, {}}}};
  if (!uses_metadata(spec.kind) || spec.train_meta != MetaMode::Correct) return rows;
  if (preset == "multitask" && variant == "SME") {
    const std::size_t f = schema.field_index("task");
    rows.push_back({variant + " swapped", {MetaMode::Swap, f, parse_permutation(schema, f, "nuclei:anomaly")}});
  }
  if (preset == "styles") {
    const std::size_t f = schema.field_index("style");
    for (const char* style : {"fine", "coarse"}) {
      rows.push_back({variant + " as " + style,
                      {MetaMode::Swap, f, parse_permutation(schema, f, std::string("accurate:") + style)}});
    }
  }
  return rows;
}

std::string slug(const std::string& label) {
  std::string out = label;
  std::replace(out.begin(), out.end(), ' ', '_');
  return out;
}

std::vector<const Sample*> multilabel_images(const Dataset& ds, Split split) {
  std::map<std::string, std::set<std::string>> tasks;
  for (const auto* s : ds.select(split)) tasks[s->image_key].insert(s->subset_tag);
  std::vector<const Sample*> out;
  for (const auto* s : ds.select(split)) {
    if (tasks[s->image_key].size() > 1) out.push_back(s);
  }
  return out;
}

/// Total predicted foreground with every metadata entry set to `low` and to `high`.
nlohmann::json metadata_sensitivity(const ConditionedUNet<float>& model, const MetadataSchema& schema,
                                    const std::vector<const Sample*>& samples, float low, float high) {
  std::size_t low_px = 0, high_px = 0, increasing = 0;
  for (const auto* s : samples) {
    Batch batch = make_batch({s}, schema, {}, true);
    std::size_t counts[2];
    for (int k = 0; k < 2; ++k) {
      std::fill(batch.meta.data().begin(), batch.meta.data().end(), k == 0 ? low : high);
      const Tensor pred = predict_mask(model, batch.image, batch.meta);
      counts[k] = static_cast<std::size_t>(std::count(pred.data().begin(), pred.data().end(), 1.0f));
    }
    low_px += counts[0];
    high_px += counts[1];
    increasing += counts[1] > counts[0];
  }
  const double denom = static_cast<double>(std::max<std::size_t>({low_px, high_px, 1}));
  return {{"meta_low", low},
          {"meta_high", high},
          {"pixels_low", low_px},
          {"pixels_high", high_px},
          {"relative_change", (static_cast<double>(high_px) - static_cast<double>(low_px)) / denom},
          {"fraction_increasing", static_cast<double>(increasing) / static_cast<double>(samples.size())}};
}

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os) {}
  void line(const std::string& s) {
    if (!os_) return;
    std::lock_guard lock(mu_);
    *os_ << s << std::endl;
  }

 private:
  std::ostream* os_;
  std::mutex mu_;
};

RunResult run_one(const std::string& preset, const std::string& variant, std::uint64_t seed, const Dataset& ds,
                  const ExperimentOptions& opts, Logger& log) {
  const VariantSpec spec = variant_spec(preset, variant);
  const auto& schema = ds.manifest.schema;
  const auto dir = opts.out_dir / preset / variant / ("seed" + std::to_string(seed));
  std::filesystem::create_directories(dir);

  UNetConfig mc;
  mc.depth = opts.depth;
  mc.base_channels = opts.base_channels;
  mc.conditioning = spec.kind;
  mc.meta_dim = uses_metadata(spec.kind) ? schema.total_dim() : 0;

  TrainConfig tc;
  tc.epochs = opts.epochs;
  tc.batch_size = opts.batch_size;
  tc.seed = seed;
  tc.meta_mode = spec.train_meta;

  const std::string tag = preset + "/" + variant + "/seed" + std::to_string(seed);
  auto fit = [&](UNetConfig cfg, const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                 const std::string& suffix) {
    Rng init(derive_seed(seed, 0x696e6974));
    ConditionedUNet<float> model(cfg, init);
    const std::string name = suffix.empty() ? tag : tag + "/" + suffix;
    const auto result = train(model, schema, train_set, val_set, tc, [&](const EpochRecord& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu train %.4f val %.4f f1 %.4f", name.c_str(), r.epoch, r.train_loss,
                    r.val_loss, r.val_f1);
      log.line(buf);
    });
    const std::string stem = suffix.empty() ? "" : "_" + suffix;
    write_history_csv(dir / ("history" + stem + ".csv"), result.history);
    if (opts.save_checkpoints) {
      const nlohmann::json echo{{"train", tc.to_json()}, {"experiment", opts.to_json()}, {"preset", preset},
                                {"variant", variant},    {"subset", suffix},          {"schema", schema.to_json()}};
      save_checkpoint(dir / ("checkpoint" + stem + ".ckpt"), make_checkpoint(model, echo, result));
    }
    return model;
  };

  RunResult run;
  run.preset = preset;
  run.variant = variant;
  run.seed = seed;
  for (const auto& s : ds.manifest.subsets) {
    if (!ds.select(Split::Test, s).empty()) run.subsets.push_back(s);
  }
  const auto test = ds.select(Split::Test);

  auto record = [&](const std::string& label, EvalReport rep) {
    write_scores_csv(dir / ("scores_" + slug(label) + ".csv"), rep);
    run.rows.push_back({label, rep.mode, rep.subset_f1, rep.subset_counts, rep.average_f1, rep.count});
  };

  if (spec.scope == DataScope::PerSubset) {
    EvalReport merged;
    merged.mode = std::string(to_string(spec.train_meta));
    for (const auto& subset : run.subsets) {
      auto val = ds.select(Split::Val, subset);
      if (val.empty()) val = ds.select(Split::Val);
      const auto model = fit(mc, ds.select(Split::Train, subset), val, subset);
      auto rep = evaluate(model, schema, ds.select(Split::Test, subset), {});
      merged.samples.insert(merged.samples.end(), rep.samples.begin(), rep.samples.end());
    }
    summarize(merged);
    record(variant, std::move(merged));
  } else if (spec.scope == DataScope::Paired) {
    const Dataset paired = pair_multilabel(ds);
    UNetConfig two = mc;
    two.out_channels = 2;
    const auto model = fit(two, paired.select(Split::Train), paired.select(Split::Val), "");
    EvalOptions eo;
    eo.head_for_subset = {{"nuclei", 0}, {"anomaly", 1}};
    record(variant, evaluate(model, schema, test, eo));
  } else {
    const bool ml = spec.scope == DataScope::MultilabelImages;
    const auto train_set = ml ? multilabel_images(ds, Split::Train) : ds.select(Split::Train);
    const auto val_set = ml ? multilabel_images(ds, Split::Val) : ds.select(Split::Val);
    const auto model = fit(mc, train_set, val_set, "");
    for (const auto& row : eval_rows(preset, variant, spec, schema)) {
      EvalOptions eo;
      eo.meta = row.meta;
      record(row.label, evaluate(model, schema, test, eo));
    }
    if (preset == "continuous" && uses_metadata(spec.kind)) {
      run.extra["sensitivity"] = metadata_sensitivity(model, schema, test, 0.2f, 0.8f);
    }
  }

  std::ofstream os(dir / "run.json");
  os << run.to_json().dump(1) << '\n';
  if (!os) throw Error("cannot write " + (dir / "run.json").string());
  log.line("[" + tag + "] done");
  return run;
}

}  // namespace

std::vector<RunResult> run_experiment(const std::string& preset, const std::vector<std::string>& variants,
                                      const ExperimentOptions& opts) {
  if (opts.seeds.empty()) throw ValidationError("experiment: at least one seed is required");
  const auto& names = variants.empty() ? preset_variants(preset) : variants;
  for (const auto& v : names) variant_spec(preset, v);

  std::map<std::uint64_t, Dataset> data;
  for (auto seed : opts.seeds) data.emplace(seed, generate_preset(preset, seed, opts.image_size));

  struct Job {
    std::string variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : names) {
    for (auto seed : opts.seeds) jobs.push_back({v, seed});
  }
  std::vector<RunResult> results(jobs.size());
  Logger log(opts.log);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_one(preset, jobs[i].variant, jobs[i].seed, data.at(jobs[i].seed), opts, log);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(opts.threads, 1, jobs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

// ---- report -------------------------------------------------------------------

namespace {

std::size_t order_of(const std::vector<std::string>& list, const std::string& x) {
  return static_cast<std::size_t>(std::find(list.begin(), list.end(), x) - list.begin());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::vector<ReportTable> report(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(out_dir)) throw ValidationError("no runs found: " + out_dir.string() + " is not a directory");
  std::vector<RunResult> runs;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (name.rfind("seed", 0) != 0) continue;
    const auto file = entry.path() / "run.json";
    if (!fs::exists(file)) throw FormatError("missing run file " + file.string());
    std::ifstream is(file);
    try {
      runs.push_back(RunResult::from_json(nlohmann::json::parse(is)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ": " + e.what());
    }
  }
  if (runs.empty()) throw ValidationError("no runs found in " + out_dir.string());

  const auto& presets = preset_names();
  auto variant_rank = [](const RunResult& r) {
    const auto& all = preset_names();
    if (std::find(all.begin(), all.end(), r.preset) == all.end()) return std::size_t{0};
    return order_of(preset_variants(r.preset), r.variant);
  };
  std::sort(runs.begin(), runs.end(), [&](const RunResult& a, const RunResult& b) {
    return std::tuple(order_of(presets, a.preset), a.preset, variant_rank(a), a.variant, a.seed) <
           std::tuple(order_of(presets, b.preset), b.preset, variant_rank(b), b.variant, b.seed);
  });

  std::vector<ReportTable> tables;
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  auto finish = [&values](ReportTable& table) {
    for (const auto& [key, v] : values) {
      auto& cell = table.cells[key];
      cell.n = v.size();
      double sum = 0.0;
      for (double x : v) sum += x;
      cell.mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - cell.mean) * (x - cell.mean);
      cell.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    for (const auto& col : table.columns) {
      double best = -1.0;
      for (const auto& row : table.rows) {
        if (auto it = table.cells.find({row, col}); it != table.cells.end()) best = std::max(best, it->second.mean);
      }
      for (const auto& row : table.rows) {
        if (auto it = table.cells.find({row, col}); it != table.cells.end()) it->second.best = it->second.mean == best;
      }
    }
    values.clear();
  };
  for (const auto& run : runs) {
    if (tables.empty() || tables.back().preset != run.preset) {
      if (!tables.empty()) finish(tables.back());
      tables.push_back({run.preset, {"Average"}, {}, {}});
      tables.back().columns.insert(tables.back().columns.end(), run.subsets.begin(), run.subsets.end());
    }
    auto& table = tables.back();
    for (const auto& row : run.rows) {
      if (std::find(table.rows.begin(), table.rows.end(), row.row) == table.rows.end()) table.rows.push_back(row.row);
      values[{row.row, "Average"}].push_back(row.average_f1);
      for (const auto& [subset, f1] : row.subset_f1) {
        if (std::find(table.columns.begin(), table.columns.end(), subset) == table.columns.end()) {
          table.columns.push_back(subset);
        }
        values[{row.row, subset}].push_back(f1);
      }
    }
  }
  finish(tables.back());

  std::ofstream csv(out_dir / "report.csv");
  csv << "preset,row,column,mean,sd,n,best\n";
  std::ofstream txt(out_dir / "report.txt");
  for (const auto& table : tables) {
    for (const auto& row : table.rows) {
      for (const auto& col : table.columns) {
        const auto it = table.cells.find({row, col});
        if (it == table.cells.end()) continue;
        const auto& c = it->second;
        csv << table.preset << ',' << row << ',' << col << ',' << fmt("%.9g", c.mean) << ',' << fmt("%.9g", c.sd) << ','
            << c.n << ',' << (c.best ? 1 : 0) << '\n';
      }
    }
    txt << render_table(table) << '\n';
  }
  if (!csv || !txt) throw Error("cannot write report files in " + out_dir.string());
  return tables;
}

std::string render_table(const ReportTable& table) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({table.preset});
  grid.back().insert(grid.back().end(), table.columns.begin(), table.columns.end());
  for (const auto& row : table.rows) {
    std::vector<std::string> line{row};
    for (const auto& col : table.columns) {
      const auto it = table.cells.find({row, col});
      if (it == table.cells.end()) {
        line.push_back("-");
        continue;
      }
      const auto& c = it->second;
      line.push_back(fmt("%.3f", c.mean) + " ± " + fmt("%.3f", c.sd) + (c.best ? " *" : "  "));
    }
    grid.push_back(std::move(line));
  }
  // Display width, counting the two-byte "±" as one column.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(grid.front().size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      const auto& cell = grid[r][i];
      const std::string pad(widths[i] - width(cell), ' ');
      os << (i == 0 ? cell + pad : "  " + pad + cell);
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  os << "(mean ± sd over seeds; * marks the best mean per column)\n";
  return os.str();
}

}  // namespace condseg
