#include "rplsyn/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "rplsyn/error.hpp"

namespace rplsyn {

std::string_view to_string(Kind kind) noexcept {
  switch (kind) {
    case Kind::Categorical: return "categorical";
    case Kind::Binary: return "binary";
    case Kind::Ordinal: return "ordinal";
    case Kind::Count: return "count";
    case Kind::Continuous: return "continuous";
  }
  return "unknown";
}

std::string_view to_string(Role role) noexcept {
  return role == Role::Response ? "response" : "copula";
}

std::uint64_t fnv1a(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

VariableKind VariableKind::categorical(std::vector<std::string> levels) {
  return {Kind::Categorical, std::move(levels)};
}

// ---------------------------------------------------------------- schema

std::optional<std::size_t> Schema::find(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return i;
  return std::nullopt;
}

std::size_t Schema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error(Errc::UnknownColumn, "column '" + std::string(name) + "' is not in the schema");
}

void Schema::validate() const {
  std::set<std::string> names;
  for (const auto& c : columns) {
    if (c.name.empty()) throw Error(Errc::InvalidSchema, "column with empty name");
    if (!names.insert(c.name).second)
      throw Error(Errc::InvalidSchema, "duplicate column '" + c.name + "'");
    const auto& t = c.type;
    if (t.kind == Kind::Categorical) {
      if (t.levels.size() < 2)
        throw Error(Errc::InvalidSchema, "categorical column '" + c.name + "' needs k >= 2 levels");
      std::set<std::string> uniq(t.levels.begin(), t.levels.end());
      if (uniq.size() != t.levels.size())
        throw Error(Errc::InvalidSchema, "categorical column '" + c.name + "' has repeated levels");
      if (t.levels.size() > 63)
        throw Error(Errc::InvalidSchema, "categorical column '" + c.name + "' has more than 63 levels");
    } else if (t.kind == Kind::Binary) {
      if (!t.levels.empty() && (t.levels.size() != 2 || t.levels[0] == t.levels[1]))
        throw Error(Errc::InvalidSchema, "binary column '" + c.name + "' labels must be two distinct values");
    } else if (!t.levels.empty()) {
      throw Error(Errc::InvalidSchema, "column '" + c.name + "' declares levels but is not categorical");
    }
    if (c.role == Role::Response &&
        !(t.kind == Kind::Ordinal || t.kind == Kind::Count || t.kind == Kind::Continuous))
      throw Error(Errc::InvalidSchema,
                  "response column '" + c.name + "' must be ordinal, count, or continuous");
  }
}

std::uint64_t Schema::hash() const {
  nlohmann::json j = *this;
  return fnv1a(j.dump());
}

void to_json(nlohmann::json& j, const Schema& s) {
  j = nlohmann::json::object();
  auto& cols = j["columns"] = nlohmann::json::array();
  for (const auto& c : s.columns) {
    nlohmann::json col{{"name", c.name}, {"kind", std::string(to_string(c.type.kind))}};
    if (!c.type.levels.empty()) col["levels"] = c.type.levels;
    if (c.role == Role::Response) col["role"] = "response";
    cols.push_back(std::move(col));
  }
}

void from_json(const nlohmann::json& j, Schema& s) {
  s.columns.clear();
  if (!j.contains("columns") || !j["columns"].is_array())
    throw Error(Errc::InvalidSchema, "schema must contain a 'columns' array");
  for (const auto& col : j["columns"]) {
    ColumnSchema c;
    c.name = col.at("name").get<std::string>();
    const auto kind = col.at("kind").get<std::string>();
    if (kind == "categorical") c.type.kind = Kind::Categorical;
    else if (kind == "binary") c.type.kind = Kind::Binary;
    else if (kind == "ordinal") c.type.kind = Kind::Ordinal;
    else if (kind == "count") c.type.kind = Kind::Count;
    else if (kind == "continuous") c.type.kind = Kind::Continuous;
    else throw Error(Errc::InvalidSchema, "column '" + c.name + "' has unknown kind '" + kind + "'");
    if (col.contains("levels")) c.type.levels = col["levels"].get<std::vector<std::string>>();
    const auto role = col.value("role", std::string("copula"));
    if (role == "response") c.role = Role::Response;
    else if (role == "copula") c.role = Role::Copula;
    else throw Error(Errc::InvalidSchema, "column '" + c.name + "' has unknown role '" + role + "'");
    s.columns.push_back(std::move(c));
  }
  s.validate();
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open schema " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSchema, path.string() + ": " + e.what());
  }
  return j.get<Schema>();
}

void save_schema(const std::filesystem::path& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write schema " + path.string());
  out << nlohmann::json(schema).dump(2) << '\n';
}

// ---------------------------------------------------------------- dataset

std::vector<double> Column::numeric_values() const {
  if (!schema.type.is_integer()) return reals;
  return std::vector<double>(ints.begin(), ints.end());
}

Schema MixedDataset::schema() const {
  Schema s;
  for (const auto& c : columns) s.columns.push_back(c.schema);
  return s;
}

std::size_t MixedDataset::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].schema.name == name) return i;
  throw Error(Errc::UnknownColumn, "column '" + std::string(name) + "' is not in the dataset");
}

const Column& MixedDataset::column(std::string_view name) const { return columns[index_of(name)]; }

void MixedDataset::validate() const {
  for (const auto& c : columns) {
    if (c.size() != n)
      throw Error(Errc::SchemaMismatch, "column '" + c.schema.name + "' has " +
                                            std::to_string(c.size()) + " values, expected " +
                                            std::to_string(n));
    const auto& t = c.schema.type;
    if (t.kind == Kind::Categorical) {
      const auto k = static_cast<std::int64_t>(t.levels.size());
      for (std::size_t i = 0; i < n; ++i)
        if (c.ints[i] < 0 || c.ints[i] >= k)
          throw Error(Errc::LevelNotInSchema, "column '" + c.schema.name + "' row " +
                                                  std::to_string(i) + " holds level index " +
                                                  std::to_string(c.ints[i]));
    } else if (t.kind == Kind::Binary) {
      for (std::size_t i = 0; i < n; ++i)
        if (c.ints[i] != 0 && c.ints[i] != 1)
          throw Error(Errc::LevelNotInSchema, "binary column '" + c.schema.name + "' row " +
                                                  std::to_string(i) + " is not 0/1");
    } else if (t.kind == Kind::Continuous) {
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(c.reals[i]))
          throw Error(Errc::MissingValue, "column '" + c.schema.name + "' row " +
                                              std::to_string(i) + " is not finite");
    }
  }
}

MixedDataset MixedDataset::select(std::span<const std::size_t> indices) const {
  MixedDataset out;
  out.n = n;
  for (auto i : indices) out.columns.push_back(columns.at(i));
  return out;
}

MixedDataset MixedDataset::rows(std::span<const std::size_t> indices) const {
  MixedDataset out;
  out.n = indices.size();
  for (const auto& c : columns) {
    Column nc{c.schema, {}, {}};
    if (c.schema.type.is_integer()) {
      nc.ints.reserve(indices.size());
      for (auto r : indices) nc.ints.push_back(c.ints.at(r));
    } else {
      nc.reals.reserve(indices.size());
      for (auto r : indices) nc.reals.push_back(c.reals.at(r));
    }
    out.columns.push_back(std::move(nc));
  }
  return out;
}

MixedDataset empty_dataset(const Schema& schema) {
  MixedDataset ds;
  for (const auto& c : schema.columns) ds.columns.push_back(Column{c, {}, {}});
  return ds;
}

// ---------------------------------------------------------------- csv

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

std::string where(const ColumnSchema& c, std::size_t row) {
  return "column '" + c.name + "' row " + std::to_string(row + 1);
}

std::int64_t parse_integer(std::string_view cell, const ColumnSchema& c, std::size_t row) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec == std::errc() && p == cell.data() + cell.size()) return v;
  double d = 0;
  auto [p2, ec2] = std::from_chars(cell.data(), cell.data() + cell.size(), d);
  if (ec2 == std::errc() && p2 == cell.data() + cell.size() && std::isfinite(d) &&
      d == std::floor(d) && std::abs(d) < 9.0e15)
    return static_cast<std::int64_t>(d);
  throw Error(Errc::NonIntegerCount, where(c, row) + ": '" + std::string(cell) + "' is not an integer");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace

MixedDataset parse_csv(std::string_view text, const Schema& schema) {
  schema.validate();
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!trim(line).empty()) lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw Error(Errc::InvalidArgument, "CSV has no header row");

  const auto header = split_csv_line(lines[0]);
  std::vector<std::size_t> schema_of_field(header.size());
  std::vector<bool> seen(schema.columns.size(), false);
  for (std::size_t f = 0; f < header.size(); ++f) {
    const auto name = std::string(trim(header[f]));
    auto idx = schema.find(name);
    if (!idx) throw Error(Errc::UnknownColumn, "CSV column '" + name + "' is not in the schema");
    if (seen[*idx]) throw Error(Errc::InvalidArgument, "CSV column '" + name + "' repeated");
    seen[*idx] = true;
    schema_of_field[f] = *idx;
  }
  for (std::size_t c = 0; c < schema.columns.size(); ++c)
    if (!seen[c])
      throw Error(Errc::UnknownColumn,
                  "schema column '" + schema.columns[c].name + "' is missing from the CSV header");

  MixedDataset ds = empty_dataset(schema);
  ds.n = lines.size() - 1;
  for (auto& c : ds.columns) {
    if (c.schema.type.is_integer()) c.ints.resize(ds.n);
    else c.reals.resize(ds.n);
  }
  // Level lookup tables.
  std::vector<std::unordered_map<std::string, std::int64_t>> level_index(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& levels = schema.columns[c].type.levels;
    for (std::size_t l = 0; l < levels.size(); ++l)
      level_index[c][levels[l]] = static_cast<std::int64_t>(l);
  }

  for (std::size_t r = 0; r < ds.n; ++r) {
    const auto fields = split_csv_line(lines[r + 1]);
    if (fields.size() != header.size())
      throw Error(Errc::MissingValue, "row " + std::to_string(r + 1) + " has " +
                                          std::to_string(fields.size()) + " fields, expected " +
                                          std::to_string(header.size()));
    for (std::size_t f = 0; f < fields.size(); ++f) {
      const auto c = schema_of_field[f];
      auto& col = ds.columns[c];
      const auto& cs = col.schema;
      const auto cell = trim(fields[f]);
      if (is_missing(cell)) throw Error(Errc::MissingValue, where(cs, r) + " is empty");
      switch (cs.type.kind) {
        case Kind::Categorical: {
          auto it = level_index[c].find(std::string(cell));
          if (it == level_index[c].end())
            throw Error(Errc::LevelNotInSchema,
                        where(cs, r) + ": level '" + std::string(cell) + "' not declared");
          col.ints[r] = it->second;
          break;
        }
        case Kind::Binary: {
          if (!cs.type.levels.empty()) {
            auto it = level_index[c].find(std::string(cell));
            if (it == level_index[c].end())
              throw Error(Errc::LevelNotInSchema,
                          where(cs, r) + ": label '" + std::string(cell) + "' not declared");
            col.ints[r] = it->second;
          } else {
            const auto v = parse_integer(cell, cs, r);
            if (v != 0 && v != 1)
              throw Error(Errc::LevelNotInSchema, where(cs, r) + ": binary value must be 0 or 1");
            col.ints[r] = v;
          }
          break;
        }
        case Kind::Ordinal:
          col.ints[r] = parse_integer(cell, cs, r);
          break;
        case Kind::Count: {
          const auto v = parse_integer(cell, cs, r);
          if (v < 0) throw Error(Errc::NonIntegerCount, where(cs, r) + ": negative count");
          col.ints[r] = v;
          break;
        }
        case Kind::Continuous: {
          double v = 0;
          auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
          if (ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(v))
            throw Error(Errc::InvalidArgument,
                        where(cs, r) + ": '" + std::string(cell) + "' is not a number");
          col.reals[r] = v;
          break;
        }
      }
    }
  }

  for (const auto& c : ds.columns) {
    if (c.schema.type.kind != Kind::Ordinal) continue;
    std::set<std::int64_t> uniq(c.ints.begin(), c.ints.end());
    if (uniq.size() < 10)
      warn("ordinal column '" + c.schema.name + "' has " + std::to_string(uniq.size()) +
           " levels; ordinal variables with fewer than 10 levels are usually better modeled "
           "as categorical");
  }
  return ds;
}

MixedDataset load_dataset(const std::filesystem::path& csv_path, const Schema& schema) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + csv_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

MixedDataset load_dataset(const std::filesystem::path& csv_path,
                          const std::filesystem::path& schema_path) {
  return load_dataset(csv_path, load_schema(schema_path));
}

std::string format_csv(const MixedDataset& ds) {
  std::string out;
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    if (c) out.push_back(',');
    out += quote_if_needed(ds.columns[c].schema.name);
  }
  out.push_back('\n');
  for (std::size_t r = 0; r < ds.n; ++r) {
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      if (c) out.push_back(',');
      const auto& col = ds.columns[c];
      const auto& t = col.schema.type;
      if (t.kind == Kind::Categorical || (t.kind == Kind::Binary && !t.levels.empty()))
        out += quote_if_needed(t.levels[static_cast<std::size_t>(col.ints[r])]);
      else if (t.is_integer())
        out += std::to_string(col.ints[r]);
      else
        out += format_double(col.reals[r]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const MixedDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << format_csv(ds);
}

// ---------------------------------------------------------------- layout

ExpandedLayout expand_layout(const Schema& schema) {
  ExpandedLayout layout;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& t = schema.columns[c].type;
    LatentBlock b;
    b.column = c;
    b.offset = layout.p_star;
    b.categorical = t.is_categorical();
    b.width = b.categorical ? t.levels.size() : 1;
    if (b.categorical) layout.cat_block_index.push_back(layout.blocks.size());
    for (std::size_t w = 0; w < b.width; ++w) layout.origin.push_back(layout.blocks.size());
    layout.p_star += b.width;
    layout.blocks.push_back(b);
  }
  return layout;
}

ExpandedLayout expand_layout(const MixedDataset& ds) { return expand_layout(ds.schema()); }

std::vector<std::size_t> ExpandedLayout::categorical_columns() const {
  std::vector<std::size_t> out;
  for (auto bi : cat_block_index)
    for (std::size_t w = 0; w < blocks[bi].width; ++w) out.push_back(blocks[bi].offset + w);
  return out;
}

std::vector<std::size_t> ExpandedLayout::rank_columns() const {
  std::vector<std::size_t> out;
  for (const auto& b : blocks)
    if (!b.categorical) out.push_back(b.offset);
  return out;
}

std::vector<std::optional<std::size_t>> decode_categoricals(const ExpandedLayout& layout,
                                                            std::span<const double> row) {
  std::vector<std::optional<std::size_t>> out;
  for (auto bi : layout.cat_block_index) {
    const auto& b = layout.blocks[bi];
    std::optional<std::size_t> level;
    int positives = 0;
    for (std::size_t w = 0; w < b.width; ++w) {
      if (row[b.offset + w] > 0.0) {
        ++positives;
        level = w;
      }
    }
    out.push_back(positives == 1 ? level : std::nullopt);
  }
  return out;
}

}  // namespace rplsyn
