#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvol/filter.hpp"
#include "rvol/observation.hpp"
#include "rvol/paths.hpp"

namespace rvol {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Full-precision decimal formatting (17 significant digits round-trips a double).
inline std::string format_full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

}  // namespace detail

// Path export: step,time,value[,z_1..z_J]; one row per grid point.
inline void write_state_path(const std::filesystem::path& file, const StatePath& path,
                             const std::vector<OUBankState>* bank = nullptr) {
  auto out = detail::open_out(file);
  out << "step,time,value";
  const std::size_t J = bank && !bank->empty() ? bank->front().values.size() : 0;
  for (std::size_t j = 1; j <= J; ++j) out << ",z_" << j;
  out << "\n";
  for (std::size_t n = 0; n < path.values.size(); ++n) {
    out << n << ',' << format_full(static_cast<double>(n) * path.grid.delta) << ','
        << format_full(path.values[n]);
    if (J > 0) {
      const auto& state = (*bank)[n];
      for (std::size_t j = 0; j < J; ++j) out << ',' << format_full(state.values[j]);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + file.string());
}

// Key=value metadata sidecar accompanying an observation file.
struct ObservationMeta {
  double delta = 0.0;
  double horizon = 0.0;
  double b = 0.0;
  std::string kind;   // exp | square
  std::uint64_t seed = 0;
  std::string model;  // liouville | fbm | abs_bm | ou_ou
  std::optional<double> hurst;
};

inline void write_observations(const std::filesystem::path& file, const ObservationSeries& obs,
                               const ObservationMeta& meta) {
  auto out = detail::open_out(file);
  out << "step,count\n";
  for (std::size_t n = 0; n < obs.counts.size(); ++n) out << (n + 1) << ',' << obs.counts[n] << "\n";
  if (!out) throw IoError("write failed: " + file.string());

  auto side = std::filesystem::path(file);
  side.replace_extension(".meta");
  auto ms = detail::open_out(side);
  ms << "delta=" << format_full(meta.delta) << "\n";
  ms << "T=" << format_full(meta.horizon) << "\n";
  ms << "b=" << format_full(meta.b) << "\n";
  ms << "kind=" << meta.kind << "\n";
  ms << "seed=" << meta.seed << "\n";
  ms << "model=" << meta.model << "\n";
  if (meta.hurst) ms << "H=" << format_full(*meta.hurst) << "\n";
  if (!ms) throw IoError("write failed: " + side.string());
}

inline std::pair<ObservationSeries, ObservationMeta> read_observations(const std::filesystem::path& file) {
  auto in = detail::open_in(file);
  std::string line;
  if (!std::getline(in, line) || line != "step,count")
    throw IoError("bad observation header in " + file.string());
  ObservationSeries obs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split(line, ',');
    if (fields.size() != 2) throw IoError("bad observation row in " + file.string());
    obs.counts.push_back(std::stoul(fields[1]));
  }
  obs.total = std::accumulate(obs.counts.begin(), obs.counts.end(), 0ul);

  auto side = std::filesystem::path(file);
  side.replace_extension(".meta");
  auto ms = detail::open_in(side);
  ObservationMeta meta;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad meta line in " + side.string());
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "delta") meta.delta = std::stod(value);
    else if (key == "T") meta.horizon = std::stod(value);
    else if (key == "b") meta.b = std::stod(value);
    else if (key == "kind") meta.kind = value;
    else if (key == "seed") meta.seed = std::stoull(value);
    else if (key == "model") meta.model = value;
    else if (key == "H") meta.hurst = std::stod(value);
    else throw IoError("unknown meta key '" + key + "' in " + side.string());
  }
  obs.delta = meta.delta;
  return {obs, meta};
}

// Posterior export: step,time,state_mean,state_q01,state_q99[,h_mean,h_q01,h_q99].
inline void write_posterior(const std::filesystem::path& file,
                            const std::vector<PosteriorSummary>& summaries, bool with_h) {
  auto out = detail::open_out(file);
  out << "step,time,state_mean,state_q01,state_q99";
  if (with_h) out << ",h_mean,h_q01,h_q99";
  out << "\n";
  for (const auto& s : summaries) {
    out << s.step << ',' << format_full(s.time) << ',' << format_full(s.state_mean) << ','
        << format_full(s.state_q01) << ',' << format_full(s.state_q99);
    if (with_h) {
      out << ',' << format_full(s.h_mean.value()) << ',' << format_full(s.h_q01.value()) << ','
          << format_full(s.h_q99.value());
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + file.string());
}

// Final parameter sample: k,theta.
inline void write_theta_sample(const std::filesystem::path& file, const std::vector<double>& thetas) {
  auto out = detail::open_out(file);
  out << "k,theta\n";
  for (std::size_t k = 0; k < thetas.size(); ++k) out << (k + 1) << ',' << format_full(thetas[k]) << "\n";
  if (!out) throw IoError("write failed: " + file.string());
}

inline std::uint64_t fnv1a64_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot hash: " + file.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

// Manifest of every regular file under root (relative path, content hash,
// byte size), sorted by path. The manifest itself is excluded.
inline void write_manifest(const std::filesystem::path& root, const std::string& name = "manifest.txt") {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == name) continue;
    files.push_back(std::filesystem::relative(entry.path(), root));
  }
  std::sort(files.begin(), files.end());
  auto out = detail::open_out(root / name);
  out << "path,fnv1a64,bytes\n";
  for (const auto& rel : files) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file(root / rel)));
    out << rel.generic_string() << ',' << hex << ',' << std::filesystem::file_size(root / rel) << "\n";
  }
  if (!out) throw IoError("write failed: " + (root / name).string());
}

}  // namespace rvol
