#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rplsyn {

enum class Kind { Categorical, Binary, Ordinal, Count, Continuous };
enum class Role { Copula, Response };

std::string_view to_string(Kind kind) noexcept;
std::string_view to_string(Role role) noexcept;

struct VariableKind {
  Kind kind = Kind::Continuous;
  // Categorical: the k >= 2 distinct labels in declaration order.
  // Binary: optional two labels mapped to 0 and 1 (empty means "0"/"1").
  std::vector<std::string> levels;

  static VariableKind categorical(std::vector<std::string> levels);
  static VariableKind binary() { return {Kind::Binary, {}}; }
  static VariableKind ordinal() { return {Kind::Ordinal, {}}; }
  static VariableKind count() { return {Kind::Count, {}}; }
  static VariableKind continuous() { return {Kind::Continuous, {}}; }

  bool is_categorical() const noexcept { return kind == Kind::Categorical; }
  bool is_integer() const noexcept { return kind != Kind::Continuous; }
  std::size_t num_levels() const noexcept { return levels.size(); }
  friend bool operator==(const VariableKind&, const VariableKind&) = default;
};

struct ColumnSchema {
  std::string name;
  VariableKind type;
  Role role = Role::Copula;
  friend bool operator==(const ColumnSchema&, const ColumnSchema&) = default;
};

struct Schema {
  std::vector<ColumnSchema> columns;

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws UnknownColumn
  // Checks level distinctness, k >= 2, response-kind rules.
  void validate() const;
  // FNV-1a of the canonical JSON form.
  std::uint64_t hash() const;
  friend bool operator==(const Schema&, const Schema&) = default;
};

void to_json(nlohmann::json& j, const Schema& s);
void from_json(const nlohmann::json& j, Schema& s);
Schema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const Schema& schema);

// One column of values. Integer kinds (categorical level index, binary,
// ordinal, count) live in `ints`; continuous in `reals`.
struct Column {
  ColumnSchema schema;
  std::vector<std::int64_t> ints;
  std::vector<double> reals;

  std::size_t size() const noexcept {
    return schema.type.is_integer() ? ints.size() : reals.size();
  }
  double numeric(std::size_t i) const {
    return schema.type.is_integer() ? static_cast<double>(ints[i]) : reals[i];
  }
  std::vector<double> numeric_values() const;
  friend bool operator==(const Column&, const Column&) = default;
};

struct MixedDataset {
  std::size_t n = 0;
  std::vector<Column> columns;

  Schema schema() const;
  const Column& column(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  // Checks shared length and per-kind value domains.
  void validate() const;
  // Subset of columns, in the given order.
  MixedDataset select(std::span<const std::size_t> indices) const;
  MixedDataset rows(std::span<const std::size_t> indices) const;
  friend bool operator==(const MixedDataset&, const MixedDataset&) = default;
};

// Empty dataset with the schema's columns and n = 0.
MixedDataset empty_dataset(const Schema& schema);

MixedDataset load_dataset(const std::filesystem::path& csv_path, const Schema& schema);
MixedDataset load_dataset(const std::filesystem::path& csv_path,
                          const std::filesystem::path& schema_path);
MixedDataset parse_csv(std::string_view text, const Schema& schema);
std::string format_csv(const MixedDataset& ds);
void write_csv(const std::filesystem::path& path, const MixedDataset& ds);

// Expanded latent layout: categorical c occupies a contiguous k_c-wide block,
// every other column a single latent column.
struct LatentBlock {
  std::size_t column = 0;  // index into the dataset/schema columns
  std::size_t offset = 0;  // first expanded column
  std::size_t width = 1;
  bool categorical = false;
};

struct ExpandedLayout {
  std::size_t p_star = 0;
  std::vector<LatentBlock> blocks;           // one per original column, in order
  std::vector<std::size_t> cat_block_index;  // indices into `blocks` of categorical blocks
  std::vector<std::size_t> origin;           // expanded column -> block index

  bool is_categorical(std::size_t expanded) const { return blocks[origin[expanded]].categorical; }
  std::vector<std::size_t> categorical_columns() const;  // expanded indices
  std::vector<std::size_t> rank_columns() const;         // expanded indices
};

ExpandedLayout expand_layout(const Schema& schema);
ExpandedLayout expand_layout(const MixedDataset& ds);

// One-positive-per-block decode of a latent row; nullopt marks a block with
// zero or several positive coordinates.
std::vector<std::optional<std::size_t>> decode_categoricals(const ExpandedLayout& layout,
                                                            std::span<const double> latent_row);

std::uint64_t fnv1a(std::string_view bytes) noexcept;

}  // namespace rplsyn
