#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rplsyn/archive.hpp"
#include "rplsyn/risk.hpp"
#include "rplsyn/synthesizer.hpp"
#include "rplsyn/utility.hpp"

namespace rplsyn {

struct FitSettings {
  std::size_t iters = 50000;
  std::size_t burn_in = 25000;
  std::size_t thin = 10;
  std::size_t factors = 0;  // 0 selects the default
  HyperParams prior;
  std::size_t target_iters = 1100;
  std::size_t target_burn_in = 100;
  std::size_t target_thin = 10;
  std::size_t trees = 200;
  // Columns switched to the response role in addition to the schema's own.
  std::vector<std::string> targets;
  std::uint64_t seed = 0;
  std::size_t progress_every = 0;
};

void to_json(nlohmann::json& j, const FitSettings& s);
void from_json(const nlohmann::json& j, FitSettings& s);

// "paper": 50000/25000 copula, 1100/100 target. "desk": 3000/1800, 300/100.
FitSettings fit_preset(std::string_view name);

// FNV-1a of the canonical (sorted-key, compact) JSON text.
std::uint64_t config_hash(const nlohmann::json& config);

// Copula over the copula-role columns; one target model per response column,
// conditioned on the copula columns.
ModelArchive fit_model(const MixedDataset& data, const FitSettings& settings);

// Full-schema synthetic datasets in the archive's column order.
std::vector<MixedDataset> synthesize_release(const ModelArchive& archive, const SynthesisPlan& plan,
                                             SynthesisStats* stats = nullptr);

std::string synthetic_file_name(const std::string& stem, std::size_t index);  // 1-based
// Writes <stem>_syn_<i>.csv, schema.json and manifest.json; returns the CSV
// paths.
std::vector<std::filesystem::path> write_release(const std::filesystem::path& dir, const std::string& stem,
                                                 const std::vector<MixedDataset>& release,
                                                 const nlohmann::json& manifest);

// Adds "seed" and "config_hash" to a report object.
nlohmann::json stamp(nlohmann::json report, std::uint64_t seed, const nlohmann::json& config);

void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

struct RiskSettings {
  std::vector<std::string> known;
  std::string target;
  RiskGrid grid;
  std::size_t reps = 100;
};

void to_json(nlohmann::json& j, const RiskSettings& s);
void from_json(const nlohmann::json& j, RiskSettings& s);

// Everything one reproducible end-to-end run needs.
struct RunBundle {
  std::filesystem::path data;
  std::filesystem::path schema;
  std::filesystem::path out_dir;
  std::string stem = "data";
  FitSettings fit;
  std::size_t m = 5;
  std::size_t n_out = 0;
  DrawSelection selection = DrawSelection::RoundRobin;
  std::optional<RegressionSpec> utility;
  HorseshoeConfig horseshoe;
  std::optional<RiskSettings> risk;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

void from_json(const nlohmann::json& j, RunBundle& b);
// Relative paths in the bundle resolve against `base`.
RunBundle load_bundle(const std::filesystem::path& path);

struct RunOutputs {
  std::filesystem::path archive;
  std::vector<std::filesystem::path> synthetic;
  std::optional<std::filesystem::path> utility;
  std::optional<std::filesystem::path> risk;
};

// Fit, synthesize, then the optional utility and risk evaluations. A failing
// stage is rethrown with its name prefixed to the message.
RunOutputs end_to_end(const RunBundle& bundle, const nlohmann::json& config);

}  // namespace rplsyn
