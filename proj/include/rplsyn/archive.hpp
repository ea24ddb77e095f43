#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/factor_model.hpp"
#include "rplsyn/target_regression.hpp"

namespace rplsyn {

// Everything synthesis needs: the copula posterior with its marginals and the
// per-response target models. `schema` is the full input schema in column
// order; `copula.schema` is the subset modeled by the copula.
struct ModelArchive {
  Schema schema;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  nlohmann::json config;
  PosteriorDraws copula;
  std::vector<TargetModel> targets;

  std::uint64_t schema_hash() const { return schema.hash(); }
};

inline constexpr char kArchiveMagic[8] = {'R', 'P', 'L', 'S', 'Y', 'N', 'A', 'R'};
inline constexpr std::uint32_t kArchiveVersion = 1;

// Magic, u32 version, u64 metadata length, JSON metadata, then every draw's
// C (column-major) and alpha-tilde as little-endian doubles.
std::string serialize_archive(const ModelArchive& archive);
ModelArchive parse_archive(std::string_view bytes);

void save_archive(const std::filesystem::path& path, const ModelArchive& archive);
ModelArchive load_archive(const std::filesystem::path& path);

}  // namespace rplsyn
