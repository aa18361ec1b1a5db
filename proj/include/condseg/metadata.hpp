#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace condseg {

struct CategoricalField {
  std::string name;
  std::vector<std::string> class_names;
};

struct ContinuousField {
  std::string name;
  double min = 0.0;
  double max = 1.0;
};

using MetadataField = std::variant<CategoricalField, ContinuousField>;

/// Ordered list of fields. Categoricals encode as one-hot blocks in declared
/// class order, continuous fields as (v - min) / (max - min).
class MetadataSchema {
 public:
  MetadataSchema() = default;
  explicit MetadataSchema(std::vector<MetadataField> fields);

  const std::vector<MetadataField>& fields() const noexcept { return fields_; }
  std::size_t total_dim() const noexcept { return total_dim_; }
  std::size_t field_index(const std::string& name) const;
  const std::string& field_name(std::size_t index) const;
  std::size_t class_index(std::size_t field, const std::string& class_name) const;

  nlohmann::json to_json() const;
  static MetadataSchema from_json(const nlohmann::json& j);

  bool operator==(const MetadataSchema& other) const;

 private:
  std::vector<MetadataField> fields_;
  std::size_t total_dim_ = 0;
};

/// One value per schema field, in schema order: a class name for categorical
/// fields, a raw scalar for continuous ones.
struct MetadataRecord {
  std::vector<std::variant<std::string, double>> values;

  bool operator==(const MetadataRecord&) const = default;
};

using MetadataVector = std::vector<float>;

/// Out-of-range continuous values are clamped to [min, max] and reported through
/// the warning sink (stderr by default).
MetadataVector encode(const MetadataSchema& schema, const MetadataRecord& record);

/// All-zeros vector of total_dim.
MetadataVector dummy(const MetadataSchema& schema);

/// Relabels one categorical field: class i becomes class permutation[i].
MetadataRecord swap(const MetadataSchema& schema, const MetadataRecord& record, std::size_t field,
                    const std::vector<std::size_t>& permutation);

/// Parses "a:b,c:d" into a permutation over the classes of a categorical field.
/// Unlisted classes map to themselves; a lone "a:b" is completed to the
/// transposition a<->b.
std::vector<std::size_t> parse_permutation(const MetadataSchema& schema, std::size_t field, const std::string& spec);

/// Index of the first categorical field; throws if the schema has none.
std::size_t first_categorical_field(const MetadataSchema& schema);

using WarningSink = void (*)(const std::string&);
void set_warning_sink(WarningSink sink);

nlohmann::json record_to_json(const MetadataRecord& record);
MetadataRecord record_from_json(const nlohmann::json& j);

}  // namespace condseg
