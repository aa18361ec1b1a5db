#include "condseg/metadata.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "condseg/error.hpp"

namespace condseg {

namespace {

void stderr_sink(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::atomic<WarningSink> warning_sink{&stderr_sink};

const std::string& name_of(const MetadataField& f) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, f);
}

}  // namespace

void set_warning_sink(WarningSink sink) { warning_sink.store(sink ? sink : &stderr_sink); }

MetadataSchema::MetadataSchema(std::vector<MetadataField> fields) : fields_(std::move(fields)) {
  std::set<std::string> names;
  for (const auto& f : fields_) {
    if (!names.insert(name_of(f)).second) throw ValidationError("schema: duplicate field '" + name_of(f) + "'");
    if (const auto* cat = std::get_if<CategoricalField>(&f)) {
      if (cat->class_names.empty()) throw ValidationError("schema: field '" + cat->name + "' has no classes");
      std::set<std::string> classes(cat->class_names.begin(), cat->class_names.end());
      if (classes.size() != cat->class_names.size()) {
        throw ValidationError("schema: field '" + cat->name + "' has duplicate class names");
      }
      total_dim_ += cat->class_names.size();
    } else {
      const auto& cont = std::get<ContinuousField>(f);
      if (!(cont.min < cont.max)) throw ValidationError("schema: field '" + cont.name + "' needs min < max");
      total_dim_ += 1;
    }
  }
  if (total_dim_ == 0) throw ValidationError("schema: total_dim must be >= 1");
}

std::size_t MetadataSchema::field_index(const std::string& name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (name_of(fields_[i]) == name) return i;
  }
  throw ValidationError("schema: no field named '" + name + "'");
}

const std::string& MetadataSchema::field_name(std::size_t index) const { return name_of(fields_.at(index)); }

std::size_t MetadataSchema::class_index(std::size_t field, const std::string& class_name) const {
  const auto* cat = std::get_if<CategoricalField>(&fields_.at(field));
  if (!cat) throw ValidationError("schema: field '" + field_name(field) + "' is not categorical");
  auto it = std::find(cat->class_names.begin(), cat->class_names.end(), class_name);
  if (it == cat->class_names.end()) {
    throw ValidationError("unknown class '" + class_name + "' for field '" + cat->name + "'");
  }
  return static_cast<std::size_t>(it - cat->class_names.begin());
}

bool MetadataSchema::operator==(const MetadataSchema& other) const { return to_json() == other.to_json(); }

nlohmann::json MetadataSchema::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& f : fields_) {
    if (const auto* cat = std::get_if<CategoricalField>(&f)) {
      arr.push_back({{"type", "categorical"}, {"name", cat->name}, {"classes", cat->class_names}});
    } else {
      const auto& c = std::get<ContinuousField>(f);
      arr.push_back({{"type", "continuous"}, {"name", c.name}, {"min", c.min}, {"max", c.max}});
    }
  }
  return arr;
}

MetadataSchema MetadataSchema::from_json(const nlohmann::json& j) {
  std::vector<MetadataField> fields;
  try {
    for (const auto& f : j) {
      const auto type = f.at("type").get<std::string>();
      if (type == "categorical") {
        fields.emplace_back(CategoricalField{f.at("name"), f.at("classes").get<std::vector<std::string>>()});
      } else if (type == "continuous") {
        fields.emplace_back(ContinuousField{f.at("name"), f.at("min"), f.at("max")});
      } else {
        throw ValidationError("schema: unknown field type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schema: ") + e.what());
  }
  return MetadataSchema(std::move(fields));
}

MetadataVector encode(const MetadataSchema& schema, const MetadataRecord& record) {
  const auto& fields = schema.fields();
  if (record.values.size() != fields.size()) {
    throw ValidationError("encode: record has " + std::to_string(record.values.size()) + " values, schema has " +
                          std::to_string(fields.size()) + " fields");
  }
  MetadataVector out;
  out.reserve(schema.total_dim());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (const auto* cat = std::get_if<CategoricalField>(&fields[i])) {
      const auto* label = std::get_if<std::string>(&record.values[i]);
      if (!label) throw ValidationError("encode: field '" + cat->name + "' expects a class name");
      const std::size_t idx = schema.class_index(i, *label);
      for (std::size_t k = 0; k < cat->class_names.size(); ++k) out.push_back(k == idx ? 1.0f : 0.0f);
    } else {
      const auto& cont = std::get<ContinuousField>(fields[i]);
      const auto* v = std::get_if<double>(&record.values[i]);
      if (!v) throw ValidationError("encode: field '" + cont.name + "' expects a number");
      if (std::isnan(*v)) throw ValidationError("encode: field '" + cont.name + "' is NaN");
      double x = *v;
      if (x < cont.min || x > cont.max) {
        std::ostringstream msg;
        msg << "field '" << cont.name << "' value " << x << " clamped to [" << cont.min << ", " << cont.max << "]";
        warning_sink.load()(msg.str());
        x = std::clamp(x, cont.min, cont.max);
      }
      out.push_back(static_cast<float>((x - cont.min) / (cont.max - cont.min)));
    }
  }
  return out;
}

MetadataVector dummy(const MetadataSchema& schema) { return MetadataVector(schema.total_dim(), 0.0f); }

MetadataRecord swap(const MetadataSchema& schema, const MetadataRecord& record, std::size_t field,
                    const std::vector<std::size_t>& permutation) {
  if (field >= schema.fields().size()) throw ValidationError("swap: field index out of range");
  const auto* cat = std::get_if<CategoricalField>(&schema.fields()[field]);
  if (!cat) throw ValidationError("swap: field '" + schema.field_name(field) + "' is not categorical");
  if (permutation.size() != cat->class_names.size()) {
    throw ValidationError("swap: permutation has " + std::to_string(permutation.size()) + " entries, field '" +
                          cat->name + "' has " + std::to_string(cat->class_names.size()) + " classes");
  }
  std::vector<bool> hit(permutation.size(), false);
  for (auto p : permutation) {
    if (p >= permutation.size() || hit[p]) throw ValidationError("swap: not a permutation");
    hit[p] = true;
  }
  if (record.values.size() != schema.fields().size()) throw ValidationError("swap: record does not match schema");
  const auto* label = std::get_if<std::string>(&record.values[field]);
  if (!label) throw ValidationError("swap: field '" + cat->name + "' expects a class name");
  MetadataRecord out = record;
  out.values[field] = cat->class_names[permutation[schema.class_index(field, *label)]];
  return out;
}

std::vector<std::size_t> parse_permutation(const MetadataSchema& schema, std::size_t field, const std::string& spec) {
  const auto* cat = std::get_if<CategoricalField>(&schema.fields().at(field));
  if (!cat) throw ValidationError("permutation: field '" + schema.field_name(field) + "' is not categorical");
  const std::size_t n = cat->class_names.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("permutation: expected 'from:to', got '" + item + "'");
    pairs.emplace_back(schema.class_index(field, item.substr(0, colon)), schema.class_index(field, item.substr(colon + 1)));
  }
  std::vector<bool> is_source(n, false);
  for (auto [from, to] : pairs) {
    perm[from] = to;
    is_source[from] = true;
  }
  if (pairs.size() == 1 && !is_source[pairs[0].second]) perm[pairs[0].second] = pairs[0].first;
  std::vector<bool> hit(n, false);
  for (auto p : perm) {
    if (hit[p]) throw ValidationError("permutation: '" + spec + "' is not a bijection");
    hit[p] = true;
  }
  return perm;
}

std::size_t first_categorical_field(const MetadataSchema& schema) {
  for (std::size_t i = 0; i < schema.fields().size(); ++i) {
    if (std::holds_alternative<CategoricalField>(schema.fields()[i])) return i;
  }
  throw ValidationError("schema has no categorical field");
}

nlohmann::json record_to_json(const MetadataRecord& record) {
  auto arr = nlohmann::json::array();
  for (const auto& v : record.values) {
    std::visit([&arr](const auto& x) { arr.push_back(x); }, v);
  }
  return arr;
}

MetadataRecord record_from_json(const nlohmann::json& j) {
  MetadataRecord r;
  for (const auto& v : j) {
    if (v.is_string()) {
      r.values.emplace_back(v.get<std::string>());
    } else if (v.is_number()) {
      r.values.emplace_back(v.get<double>());
    } else {
      throw FormatError("metadata record: values must be strings or numbers");
    }
  }
  return r;
}

}  // namespace condseg
