#include "condseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "condseg/error.hpp"
#include "condseg/geometry.hpp"
#include "condseg/tensor_io.hpp"

namespace condseg {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

std::vector<const Sample*> Dataset::select(Split split, const std::optional<std::string>& subset) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.split == split && (!subset || s.subset_tag == *subset)) out.push_back(&s);
  }
  return out;
}

void Dataset::recount() {
  manifest.counts.clear();
  for (const auto& s : samples) ++manifest.counts[std::string(to_string(s.split))][s.subset_tag];
}

void SceneSpec::validate() const {
  if (size < 8) throw ValidationError("scene: size must be >= 8");
  if (min_objects < 1 || max_objects < min_objects) throw ValidationError("scene: bad object count range");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw ValidationError("scene: bad radius range");
  if (2.0 * max_radius + 2.0 > static_cast<double>(size)) throw ValidationError("scene: radii do not fit the image");
  for (double v : {background, foreground}) {
    if (v < 0.0 || v > 1.0) throw ValidationError("scene: intensities must lie in [0,1]");
  }
  if (noise < 0.0) throw ValidationError("scene: noise must be >= 0");
  if (eccentricity < 0.0 || eccentricity >= 1.0) throw ValidationError("scene: eccentricity must lie in [0,1)");
}

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;

  double level(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return u * u + v * v;
  }
  bool contains(double x, double y) const { return level(x, y) <= 1.0; }
};

/// Fraction of a 4x4 sub-sample grid inside the shape.
template <typename Inside>
double coverage(std::size_t r, std::size_t c, Inside&& inside) {
  int hits = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      hits += inside(static_cast<double>(c) - 0.375 + 0.25 * j, static_cast<double>(r) - 0.375 + 0.25 * i);
    }
  }
  return hits / 16.0;
}

/// Paints `shape` over the image with intensity `value` blended by coverage, and
/// sets mask pixels whose centers are inside.
template <typename Inside>
void paint(std::vector<float>& image, std::vector<float>* mask, std::size_t size, double value, Inside&& inside) {
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double cov = coverage(r, c, inside);
      if (cov > 0.0) {
        auto& px = image[r * size + c];
        px = static_cast<float>((1.0 - cov) * px + cov * value);
      }
      if (mask && inside(static_cast<double>(c), static_cast<double>(r))) (*mask)[r * size + c] = 1.0f;
    }
  }
}

void add_noise(std::vector<float>& image, double sigma, Rng& rng) {
  for (auto& v : image) v = static_cast<float>(std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0));
}

std::vector<Ellipse> place_ellipses(const SceneSpec& spec, Rng& rng) {
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
  const double size = static_cast<double>(spec.size);
  const double axis_ratio = std::sqrt(1.0 - spec.eccentricity * spec.eccentricity);
  std::vector<Ellipse> placed;
  for (std::size_t k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double a = rng.uniform(spec.min_radius, spec.max_radius);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double cx = rng.uniform(a + 1.0, size - a - 2.0);
      const double cy = rng.uniform(a + 1.0, size - a - 2.0);
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Ellipse& e) {
        return std::hypot(e.cx - cx, e.cy - cy) > e.a + a + 1.5;
      });
      if (clear) {
        placed.push_back({cx, cy, a, a * axis_ratio, theta});
        break;
      }
    }
  }
  return placed;
}

RenderedScene render_ellipses(const SceneSpec& spec, const std::vector<Ellipse>& blobs) {
  const std::size_t size = spec.size;
  RenderedScene scene{std::vector<float>(size * size, static_cast<float>(spec.background)),
                      std::vector<float>(size * size, 0.0f)};
  for (const auto& e : blobs) {
    paint(scene.image, &scene.mask, size, spec.foreground, [&e](double x, double y) { return e.contains(x, y); });
  }
  return scene;
}

double scale_of(std::size_t size) { return static_cast<double>(size) / 64.0; }

MetadataRecord categorical_record(const std::string& value) { return MetadataRecord{{value}}; }

Sample make_sample(std::string id, std::vector<float> image, std::vector<float> mask, std::size_t size,
                   MetadataRecord record, std::string subset, Split split) {
  Sample s;
  s.image_key = id;
  s.id = std::move(id);
  s.image = Tensor({1, size, size}, std::move(image));
  s.mask = Tensor({1, size, size}, std::move(mask));
  s.record = std::move(record);
  s.subset_tag = std::move(subset);
  s.split = split;
  return s;
}

constexpr Split kSplits[] = {Split::Train, Split::Val, Split::Test};

std::string sample_id(std::string_view prefix, Split split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*s_%s_%04zu", static_cast<int>(prefix.size()), prefix.data(),
                std::string(to_string(split)).c_str(), i);
  return buf;
}

bool mask_ok(const std::vector<float>& mask) {
  const auto on = std::count(mask.begin(), mask.end(), 1.0f);
  return on > 0 && static_cast<std::size_t>(on) < mask.size();
}

}  // namespace

RenderedScene render_blobs(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  auto scene = render_ellipses(spec, place_ellipses(spec, rng));
  add_noise(scene.image, spec.noise, rng);
  return scene;
}

SceneSpec domain_style(std::size_t index, std::size_t size) {
  struct Style {
    double bg, fg, noise, ecc, rmin, rmax;
    std::size_t nmin, nmax;
  };
  // Radii at 64 px.
  static constexpr Style kTable[] = {
      {0.20, 0.60, 0.04, 0.00, 6.0, 9.0, 3, 5},  {0.70, 0.40, 0.05, 0.50, 5.0, 8.0, 3, 6},
      {0.35, 0.60, 0.10, 0.70, 6.0, 10.0, 2, 5}, {0.55, 0.30, 0.08, 0.30, 4.0, 7.0, 4, 7},
      {0.30, 0.45, 0.03, 0.60, 5.0, 9.0, 3, 6},  {0.80, 0.55, 0.07, 0.20, 6.0, 9.0, 2, 5},
      {0.45, 0.80, 0.14, 0.80, 5.0, 8.0, 3, 6},
  };
  const Style& st = kTable[index % std::size(kTable)];
  const double k = scale_of(size);
  SceneSpec spec;
  spec.size = size;
  spec.background = st.bg;
  spec.foreground = st.fg;
  spec.noise = st.noise;
  spec.eccentricity = st.ecc;
  spec.min_radius = std::max(2.0, st.rmin * k);
  spec.max_radius = std::max(spec.min_radius, st.rmax * k);
  spec.min_objects = st.nmin;
  spec.max_objects = st.nmax;
  return spec;
}

Dataset gen_domains(const DomainsOptions& opts) {
  if (opts.styles < 2) throw ValidationError("gen_domains: styles must be >= 2");
  Dataset ds;
  auto& m = ds.manifest;
  m.generator = "domains";
  m.version = kGeneratorVersion;
  m.seed = opts.seed;
  m.options = {{"styles", opts.styles},
               {"per_style", {opts.per_style.train, opts.per_style.val, opts.per_style.test}},
               {"image_size", opts.image_size}};
  std::vector<std::string> classes;
  for (std::size_t s = 0; s < opts.styles; ++s) classes.push_back("domain" + std::to_string(s));
  m.schema = MetadataSchema({CategoricalField{"domain", classes}});
  m.subsets = classes;

  std::uint64_t counter = 0;
  for (std::size_t s = 0; s < opts.styles; ++s) {
    for (Split split : kSplits) {
      for (std::size_t i = 0; i < opts.per_style.of(split); ++i) {
        SceneSpec spec = domain_style(s, opts.image_size);
        spec.seed = derive_seed(opts.seed, counter++);
        auto scene = render_blobs(spec);
        ds.samples.push_back(make_sample(sample_id(classes[s], split, i), std::move(scene.image),
                                         std::move(scene.mask), opts.image_size, categorical_record(classes[s]),
                                         classes[s], split));
      }
    }
  }
  ds.recount();
  return ds;
}

namespace {

SceneSpec blob_base_style(std::size_t size) {
  const double k = scale_of(size);
  SceneSpec spec;
  spec.size = size;
  spec.background = 0.25;
  spec.foreground = 0.6;
  spec.noise = 0.06;
  spec.eccentricity = 0.4;
  spec.min_radius = 10.0 * k;
  spec.max_radius = 15.0 * k;
  spec.min_objects = 2;
  spec.max_objects = 4;
  return spec;
}

}  // namespace

Dataset gen_blobs(const BlobsOptions& opts) {
  Dataset ds;
  auto& m = ds.manifest;
  m.generator = "blobs";
  m.version = kGeneratorVersion;
  m.seed = opts.seed;
  m.options = {{"counts", {opts.counts.train, opts.counts.val, opts.counts.test}}, {"image_size", opts.image_size}};
  m.schema = MetadataSchema({CategoricalField{"source", {"blobs"}}});
  m.subsets = {"blobs"};
  std::uint64_t counter = 0;
  for (Split split : kSplits) {
    for (std::size_t i = 0; i < opts.counts.of(split); ++i) {
      SceneSpec spec = blob_base_style(opts.image_size);
      spec.seed = derive_seed(opts.seed, counter++);
      auto scene = render_blobs(spec);
      ds.samples.push_back(make_sample(sample_id("blob", split, i), std::move(scene.image), std::move(scene.mask),
                                       opts.image_size, categorical_record("blobs"), "blobs", split));
    }
  }
  ds.recount();
  return ds;
}

Dataset gen_annotation_styles(const Dataset& base, std::uint64_t seed, const AnnotationStyleOptions& opts) {
  if (!(opts.fine_tolerance > 0.0) || !(opts.coarse_tolerance > 0.0)) {
    throw ValidationError("gen_annotation_styles: tolerances must be > 0");
  }
  Dataset ds;
  auto& m = ds.manifest;
  m.generator = "styles";
  m.version = kGeneratorVersion;
  m.seed = seed;
  m.options = {{"base_generator", base.manifest.generator},
               {"base_seed", base.manifest.seed},
               {"base_options", base.manifest.options},
               {"fine_tolerance", opts.fine_tolerance},
               {"coarse_tolerance", opts.coarse_tolerance}};
  m.schema = MetadataSchema({CategoricalField{"style", {"accurate", "fine", "coarse"}}});
  m.subsets = {"accurate", "fine", "coarse"};

  ds.samples = base.samples;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split == Split::Train) train.push_back(i);
  }
  Rng(seed).shuffle(train);
  const std::size_t third = train.size() / 3;
  const std::size_t n_accurate = train.size() - 2 * third;

  for (auto& s : ds.samples) {
    s.subset_tag = "accurate";
    s.record = categorical_record("accurate");
  }
  for (std::size_t k = n_accurate; k < train.size(); ++k) {
    auto& s = ds.samples[train[k]];
    const bool fine = k < n_accurate + third;
    const double tol = fine ? opts.fine_tolerance : opts.coarse_tolerance;
    const std::size_t h = s.mask.dim(1), w = s.mask.dim(2);
    s.mask = Tensor({1, h, w}, polygonize_mask(s.mask.data(), h, w, tol));
    s.subset_tag = fine ? "fine" : "coarse";
    s.record = categorical_record(s.subset_tag);
  }
  ds.recount();
  return ds;
}

namespace {

struct Streak {
  Point2 a, b;
  double half_width;
  bool contains(double x, double y) const { return point_segment_distance({x, y}, a, b) <= half_width; }
};

struct MultitaskScene {
  std::vector<float> image, nuclei, anomaly;
};

MultitaskScene render_multitask(std::size_t size, bool with_artifacts, std::uint64_t seed) {
  const double k = scale_of(size);
  const double extent = static_cast<double>(size);
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    SceneSpec spec;
    spec.size = size;
    spec.background = 0.3;
    spec.foreground = 0.6;
    spec.noise = 0.05;
    spec.eccentricity = 0.5;
    spec.min_radius = std::max(2.0, 5.0 * k);
    spec.max_radius = std::max(spec.min_radius, 8.0 * k);
    spec.min_objects = 3;
    spec.max_objects = 6;
    auto base = render_ellipses(spec, place_ellipses(spec, rng));
    MultitaskScene scene{std::move(base.image), std::move(base.mask), std::vector<float>(size * size, 0.0f)};

    if (with_artifacts) {
      const auto n = rng.uniform_int(1, 2);
      for (std::int64_t i = 0; i < n; ++i) {
        if (rng.uniform() < 0.6) {
          const double angle = rng.uniform(0.0, std::numbers::pi);
          const double len = rng.uniform(0.5, 0.9) * extent;
          const Point2 mid{rng.uniform(0.3, 0.7) * extent, rng.uniform(0.3, 0.7) * extent};
          const Point2 d{0.5 * len * std::cos(angle), 0.5 * len * std::sin(angle)};
          const Streak st{{mid.x - d.x, mid.y - d.y}, {mid.x + d.x, mid.y + d.y}, std::max(1.0, rng.uniform(1.6, 2.6) * k)};
          paint(scene.image, &scene.anomaly, size, 0.9, [&st](double x, double y) { return st.contains(x, y); });
        } else {
          const double a = rng.uniform(9.0, 14.0) * k;
          const Ellipse e{rng.uniform(a, extent - a), rng.uniform(a, extent - a), a, a * rng.uniform(0.5, 0.9),
                          rng.uniform(0.0, std::numbers::pi)};
          paint(scene.image, &scene.anomaly, size, 0.05, [&e](double x, double y) { return e.contains(x, y); });
        }
      }
      for (std::size_t p = 0; p < scene.nuclei.size(); ++p) {
        if (scene.anomaly[p] == 1.0f) scene.nuclei[p] = 0.0f;
      }
    }
    add_noise(scene.image, spec.noise, rng);
    const bool ok = mask_ok(scene.nuclei) && (!with_artifacts || mask_ok(scene.anomaly));
    if (ok || attempt > 50) return scene;
  }
}

}  // namespace

Dataset gen_multitask(const MultitaskOptions& opts) {
  for (Split split : kSplits) {
    const auto ml = opts.multilabel.of(split);
    if (ml > opts.anomaly.of(split) || ml > opts.nuclei.of(split)) {
      throw ValidationError("gen_multitask: multilabel count exceeds a task count in split " +
                            std::string(to_string(split)));
    }
  }
  Dataset ds;
  auto& m = ds.manifest;
  m.generator = "multitask";
  m.version = kGeneratorVersion;
  m.seed = opts.seed;
  auto counts_json = [](const SplitCounts& c) { return nlohmann::json{c.train, c.val, c.test}; };
  m.options = {{"nuclei", counts_json(opts.nuclei)},
               {"anomaly", counts_json(opts.anomaly)},
               {"multilabel", counts_json(opts.multilabel)},
               {"image_size", opts.image_size}};
  m.schema = MetadataSchema({CategoricalField{"task", {"nuclei", "anomaly"}}});
  m.subsets = {"nuclei", "anomaly"};

  const std::size_t size = opts.image_size;
  std::uint64_t counter = 0;
  for (Split split : kSplits) {
    const std::size_t ml = opts.multilabel.of(split);
    const std::size_t anomaly_only = opts.anomaly.of(split) - ml;
    const std::size_t nuclei_only = opts.nuclei.of(split) - ml;
    std::size_t idx = 0;
    auto emit = [&](bool nuclei_task, bool anomaly_task, bool artifacts) {
      const std::uint64_t seed = derive_seed(opts.seed, counter++);
      auto scene = render_multitask(size, artifacts, seed);
      const std::string key = sample_id("img", split, idx++);
      if (nuclei_task) {
        auto s = make_sample(key + "_nuclei", scene.image, scene.nuclei, size, categorical_record("nuclei"), "nuclei", split);
        s.image_key = key;
        ds.samples.push_back(std::move(s));
      }
      if (anomaly_task) {
        auto s = make_sample(key + "_anomaly", scene.image, scene.anomaly, size, categorical_record("anomaly"), "anomaly",
                             split);
        s.image_key = key;
        ds.samples.push_back(std::move(s));
      }
    };
    for (std::size_t i = 0; i < ml; ++i) emit(true, true, true);
    for (std::size_t i = 0; i < anomaly_only; ++i) emit(false, true, true);
    for (std::size_t i = 0; i < nuclei_only; ++i) {
      const bool artifacts = Rng(derive_seed(opts.seed ^ 0xa5a5a5a5ULL, counter)).uniform() < 0.5;
      emit(true, false, artifacts);
    }
  }
  ds.recount();
  return ds;
}

Dataset pair_multilabel(const Dataset& multitask) {
  Dataset ds;
  ds.manifest = multitask.manifest;
  ds.manifest.generator = multitask.manifest.generator + "-paired";
  ds.manifest.subsets = {"multilabel"};
  std::map<std::string, std::pair<const Sample*, const Sample*>> by_key;
  std::vector<std::string> order;
  for (const auto& s : multitask.samples) {
    auto [it, inserted] = by_key.try_emplace(s.image_key);
    if (inserted) order.push_back(s.image_key);
    (s.subset_tag == "nuclei" ? it->second.first : it->second.second) = &s;
  }
  for (const auto& key : order) {
    const auto [nuc, ano] = by_key[key];
    if (!nuc || !ano) continue;
    Sample s = *nuc;
    s.id = key + "_pair";
    const std::size_t h = nuc->mask.dim(1), w = nuc->mask.dim(2);
    std::vector<float> both(nuc->mask.data().begin(), nuc->mask.data().end());
    both.insert(both.end(), ano->mask.data().begin(), ano->mask.data().end());
    s.mask = Tensor({2, h, w}, std::move(both));
    s.subset_tag = "multilabel";
    ds.samples.push_back(std::move(s));
  }
  ds.recount();
  return ds;
}

Dataset gen_continuous(const ContinuousOptions& opts) {
  if (!(opts.min_radius > 0.0) || !(opts.max_radius > opts.min_radius)) {
    throw ValidationError("gen_continuous: need 0 < min_radius < max_radius");
  }
  const std::size_t size = opts.image_size;
  const double k = scale_of(size);
  const double extent = static_cast<double>(size);
  const double rmin = opts.min_radius * k, rmax = opts.max_radius * k;

  Dataset ds;
  auto& m = ds.manifest;
  m.generator = "continuous";
  m.version = kGeneratorVersion;
  m.seed = opts.seed;
  m.options = {{"counts", {opts.counts.train, opts.counts.val, opts.counts.test}},
               {"image_size", size},
               {"min_radius", opts.min_radius},
               {"max_radius", opts.max_radius}};
  m.schema = MetadataSchema({ContinuousField{"lesion_radius", rmin, rmax}});
  m.subsets = {"lesion"};

  // Evenly spaced radii over the whole dataset, shuffled, so the encoded values span [0,1].
  const std::size_t n = opts.counts.total();
  std::vector<double> radii(n);
  for (std::size_t i = 0; i < n; ++i) {
    radii[i] = n > 1 ? rmin + (rmax - rmin) * static_cast<double>(i) / static_cast<double>(n - 1) : rmin;
  }
  Rng(derive_seed(opts.seed, 0xc0ffee)).shuffle(radii);

  std::size_t counter = 0;
  for (Split split : kSplits) {
    for (std::size_t i = 0; i < opts.counts.of(split); ++i, ++counter) {
      Rng rng(derive_seed(opts.seed, counter));
      const double r = radii[counter];
      std::vector<float> image(size * size, 0.15f);
      const double oa = rng.uniform(0.36, 0.42) * extent, ob = rng.uniform(0.30, 0.36) * extent;
      const Ellipse organ{extent / 2 + rng.uniform(-2.0, 2.0) * k, extent / 2 + rng.uniform(-2.0, 2.0) * k, oa, ob,
                          rng.uniform(0.0, std::numbers::pi)};
      paint(image, nullptr, size, 0.45, [&organ](double x, double y) { return organ.contains(x, y); });

      // Lesion center placed so the disk lies inside the organ's minor radius.
      const double room = std::max(0.0, ob - r - 1.0);
      const double rho = rng.uniform(0.0, room), phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Point2 c{organ.cx + rho * std::cos(phi), organ.cy + rho * std::sin(phi)};
      const double visible = r * rng.uniform(0.8, 1.2);
      const double edge = 1.5 * k;
      std::vector<float> mask(size * size, 0.0f);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double d = std::hypot(static_cast<double>(x) - c.x, static_cast<double>(y) - c.y);
          const double ramp = std::clamp((visible + edge - d) / (2.0 * edge), 0.0, 1.0);
          image[y * size + x] += static_cast<float>(0.08 * ramp);
          if (d <= r) mask[y * size + x] = 1.0f;
        }
      }
      add_noise(image, 0.05, rng);
      ds.samples.push_back(make_sample(sample_id("lesion", split, i), std::move(image), std::move(mask), size,
                                       MetadataRecord{{r}}, "lesion", split));
    }
  }
  ds.recount();
  return ds;
}

Dataset generate_preset(std::string_view preset, std::uint64_t seed, std::size_t image_size) {
  if (preset == "domains") {
    DomainsOptions o;
    o.seed = seed;
    o.image_size = image_size;
    return gen_domains(o);
  }
  if (preset == "styles") {
    BlobsOptions o;
    o.seed = seed;
    o.image_size = image_size;
    return gen_annotation_styles(gen_blobs(o), derive_seed(seed, 3));
  }
  if (preset == "multitask") {
    MultitaskOptions o;
    o.seed = seed;
    o.image_size = image_size;
    return gen_multitask(o);
  }
  if (preset == "continuous") {
    ContinuousOptions o;
    o.seed = seed;
    o.image_size = image_size;
    return gen_continuous(o);
  }
  throw ValidationError("unknown preset '" + std::string(preset) + "' (expected domains|styles|multitask|continuous)");
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"generator", m.generator}, {"version", m.version}, {"seed", m.seed},     {"options", m.options},
          {"schema", m.schema.to_json()}, {"subsets", m.subsets}, {"counts", m.counts}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.generator = j.at("generator").get<std::string>();
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.options = j.at("options");
    m.schema = MetadataSchema::from_json(j.at("schema"));
    m.subsets = j.at("subsets").get<std::vector<std::string>>();
    m.counts = j.at("counts").get<std::map<std::string, std::map<std::string, std::size_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool export_pgm) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  auto j = manifest_to_json(ds.manifest);
  auto index = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string image_file = "samples/" + s.id + ".image.cseg";
    const std::string mask_file = "samples/" + s.id + ".mask.cseg";
    save_tensor(dir / image_file, s.image, DType::F32);
    save_tensor(dir / mask_file, s.mask, DType::U8);
    if (export_pgm) {
      const std::size_t h = s.image.dim(1), w = s.image.dim(2);
      write_pgm(dir / ("samples/" + s.id + ".image.pgm"), s.image.data(), h, w);
      for (std::size_t k = 0; k < s.mask.dim(0); ++k) {
        write_pgm(dir / ("samples/" + s.id + ".mask" + std::to_string(k) + ".pgm"),
                  s.mask.data().subspan(k * h * w, h * w), h, w);
      }
    }
    index.push_back({{"id", s.id},
                     {"image_key", s.image_key},
                     {"split", to_string(s.split)},
                     {"subset", s.subset_tag},
                     {"record", record_to_json(s.record)},
                     {"image", image_file},
                     {"mask", mask_file}});
  }
  j["samples"] = std::move(index);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw Error("cannot write " + (dir / "manifest.json").string());
  os << j.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  Dataset ds;
  ds.manifest = manifest_from_json(j);
  const auto declared = ds.manifest.counts;
  try {
    for (const auto& e : j.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.image_key = e.at("image_key").get<std::string>();
      s.split = parse_split(e.at("split").get<std::string>());
      s.subset_tag = e.at("subset").get<std::string>();
      s.record = record_from_json(e.at("record"));
      s.image = load_tensor(dir / e.at("image").get<std::string>());
      s.mask = load_tensor(dir / e.at("mask").get<std::string>());
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json samples: " + std::string(e.what()));
  }
  ds.recount();
  if (ds.manifest.counts != declared) throw FormatError("manifest counts do not match the sample index");
  return ds;
}

}  // namespace condseg
