#include "rplsyn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rplsyn/error.hpp"

namespace rplsyn {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error(Errc::ArchiveFormat, "archive is truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_archive(const ModelArchive& a) {
  const auto& cop = a.copula;
  const std::size_t p = cop.layout.p_star;
  nlohmann::json marginals = nlohmann::json::array();
  for (const auto& m : cop.marginals) marginals.push_back(m ? nlohmann::json(*m) : nlohmann::json());
  nlohmann::json meta{
      {"schema", a.schema},
      {"schema_hash", a.schema_hash()},
      {"seed", a.seed},
      {"config_hash", a.config_hash},
      {"config", a.config},
      {"copula",
       {{"schema", cop.schema},
        {"n_fit", cop.n_fit},
        {"p_star", p},
        {"num_draws", cop.draws.size()},
        {"marginals", marginals},
        {"probs", cop.probs}}},
      {"targets", a.targets},
  };
  const std::string text = meta.dump();

  std::string out(kArchiveMagic, sizeof kArchiveMagic);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& d : cop.draws) {
    if (static_cast<std::size_t>(d.C.rows()) != p || static_cast<std::size_t>(d.alpha_tilde.size()) != p)
      throw Error(Errc::ArchiveFormat, "posterior draw dimension disagrees with the layout");
    out.append(reinterpret_cast<const char*>(d.C.data()), p * p * sizeof(double));
    out.append(reinterpret_cast<const char*>(d.alpha_tilde.data()), p * sizeof(double));
  }
  return out;
}

ModelArchive parse_archive(std::string_view bytes) {
  if (bytes.size() < sizeof kArchiveMagic || std::memcmp(bytes.data(), kArchiveMagic, sizeof kArchiveMagic) != 0)
    throw Error(Errc::ArchiveFormat, "not a model archive (bad magic)");
  std::size_t pos = sizeof kArchiveMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kArchiveVersion)
    throw Error(Errc::ArchiveFormat, "unsupported archive version " + std::to_string(version));
  const auto len = take<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw Error(Errc::ArchiveFormat, "archive is truncated");

  ModelArchive a;
  std::size_t p = 0, num_draws = 0;
  try {
    const auto meta = nlohmann::json::parse(bytes.substr(pos, len));
    a.schema = meta.at("schema").get<Schema>();
    if (meta.at("schema_hash").get<std::uint64_t>() != a.schema.hash())
      throw Error(Errc::SchemaMismatch, "archive schema hash does not match its schema");
    a.seed = meta.at("seed").get<std::uint64_t>();
    a.config_hash = meta.at("config_hash").get<std::uint64_t>();
    a.config = meta.at("config");
    const auto& cop = meta.at("copula");
    a.copula.schema = cop.at("schema").get<Schema>();
    a.copula.layout = expand_layout(a.copula.schema);
    a.copula.n_fit = cop.at("n_fit").get<std::size_t>();
    p = cop.at("p_star").get<std::size_t>();
    num_draws = cop.at("num_draws").get<std::size_t>();
    for (const auto& m : cop.at("marginals")) {
      if (m.is_null()) a.copula.marginals.emplace_back();
      else a.copula.marginals.emplace_back(m.get<MarginalEstimator>());
    }
    a.copula.probs = cop.at("probs").get<CategoricalProbTable>();
    a.targets = meta.at("targets").get<std::vector<TargetModel>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ArchiveFormat, std::string("bad archive metadata: ") + e.what());
  }
  if (p != a.copula.layout.p_star) throw Error(Errc::ArchiveFormat, "archive p_star disagrees with its schema");
  pos += len;

  const std::size_t per_draw = (p * p + p) * sizeof(double);
  if (bytes.size() - pos != per_draw * num_draws)
    throw Error(Errc::ArchiveFormat, "archive draw block has the wrong size");
  const auto P = static_cast<Eigen::Index>(p);
  a.copula.draws.resize(num_draws);
  for (auto& d : a.copula.draws) {
    d.C.resize(P, P);
    d.alpha_tilde.resize(P);
    std::memcpy(d.C.data(), bytes.data() + pos, p * p * sizeof(double));
    pos += p * p * sizeof(double);
    std::memcpy(d.alpha_tilde.data(), bytes.data() + pos, p * sizeof(double));
    pos += p * sizeof(double);
  }
  return a;
}

void save_archive(const std::filesystem::path& path, const ModelArchive& archive) {
  const std::string bytes = serialize_archive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "failed writing '" + path.string() + "'");
}

ModelArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_archive(buf.str());
}

}  // namespace rplsyn
