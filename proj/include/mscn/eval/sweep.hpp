#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mscn/eval/probe.hpp"
#include "mscn/train/trainer.hpp"

namespace mscn {

inline constexpr const char* kSweepHeader =
    "sweep_id,param,value,seed,probe_acc,pretrain_loss_final,wall_s";

/// One-factor sweep: `param` (dotted config path) takes each of `values`
/// under each replicate seed, everything else fixed at `base`.
struct SweepSpec {
  std::string sweep_id;
  std::string param;
  std::vector<Json> values;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  RunConfig base;
};

struct SweepRow {
  std::string sweep_id, param, value;
  std::uint64_t seed = 0;
  double probe_acc = 0;
  double pretrain_loss_final = 0;
  double wall_s = 0;

  std::string csv() const {
    std::ostringstream os;
    os << sweep_id << ',' << param << ',' << value << ',' << seed << ',' << std::setprecision(17)
       << probe_acc << ',' << pretrain_loss_final << ',' << std::setprecision(6) << std::fixed
       << wall_s;
    return os.str();
  }
};

struct SweepOptions {
  bool resume = false;
  std::ostream* log = nullptr;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // every row of the results CSV
  std::filesystem::path csv_path;
  std::string summary;
};

/// Base config with one dotted key replaced. The key must already exist.
inline RunConfig with_override(const RunConfig& base, const std::string& path, const Json& value) {
  Json j = to_json(base);
  std::string ptr = "/" + path;
  std::replace(ptr.begin(), ptr.end(), '.', '/');
  const Json::json_pointer jp(ptr);
  require<ConfigError>(j.contains(jp), "unknown sweep parameter '", path, "'");
  j[jp] = value;
  return config_from_json(j);
}

inline SweepSpec parse_sweep_spec(const Json& j, const std::filesystem::path& base_dir = {}) {
  SweepSpec s;
  detail::Reader r(j, "sweep");
  r.get("sweep_id", s.sweep_id);
  r.get("param", s.param);
  r.get("values", s.values);
  r.get("seeds", s.seeds);
  std::string base_path;
  r.get("base_config", base_path);
  const bool inline_base = r.claim("base");
  r.finish();
  require<ConfigError>(!s.sweep_id.empty() && s.sweep_id.find_first_of("/\\,") == std::string::npos,
                       "sweep_id must be a non-empty name without separators");
  require<ConfigError>(!s.param.empty(), "sweep param must be set");
  require<ConfigError>(!s.values.empty(), "sweep values must be non-empty");
  require<ConfigError>(!s.seeds.empty(), "sweep seeds must be non-empty");
  require<ConfigError>(inline_base != !base_path.empty(),
                       "sweep needs exactly one of 'base' (inline config) or 'base_config' (path)");
  if (inline_base) {
    s.base = config_from_json(j.at("base"));
  } else {
    std::filesystem::path p = base_path;
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    s.base = load_config(p);
  }
  for (const auto& v : s.values) with_override(s.base, s.param, v).validate();
  return s;
}

namespace detail {

inline std::string cell_name(const std::string& param, const Json& value, std::uint64_t seed) {
  std::string v = value.dump();
  for (char& c : v)
    if (c == '/' || c == '"' || c == ' ' || c == ',') c = '_';
  return param + "=" + v + "/seed" + std::to_string(seed);
}

inline double last_epoch_mean(const std::vector<MetricsRow>& m) {
  if (m.empty()) return std::nan("");
  const auto last = m.back().epoch;
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : m)
    if (r.epoch == last) s += r.loss, ++n;
  return s / static_cast<double>(n);
}

inline double last_epoch_mean_from_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string f;
    MetricsRow r;
    std::getline(ls, f, ',');
    r.epoch = std::stoull(f);
    std::getline(ls, f, ',');
    std::getline(ls, f, ',');
    r.loss = std::stod(f);
    rows.push_back(r);
  }
  return last_epoch_mean(rows);
}

inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& p) {
  std::vector<SweepRow> rows;
  std::ifstream in(p);
  std::string line;
  if (!std::getline(in, line)) return rows;
  require<CorruptionError>(line == kSweepHeader, "unexpected sweep CSV header in ", p.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // value may itself contain commas only if it is a JSON array; split from both ends
    std::vector<std::string> f;
    std::size_t a = 0;
    for (int i = 0; i < 2; ++i) {
      const auto c = line.find(',', a);
      f.push_back(line.substr(a, c - a));
      a = c + 1;
    }
    std::vector<std::string> tail;
    std::size_t b = line.size();
    for (int i = 0; i < 4; ++i) {
      const auto c = line.rfind(',', b - 1);
      tail.insert(tail.begin(), line.substr(c + 1, b - c - 1));
      b = c;
    }
    SweepRow r;
    r.sweep_id = f[0];
    r.param = f[1];
    r.value = line.substr(a, b - a);
    r.seed = std::stoull(tail[0]);
    r.probe_acc = std::stod(tail[1]);
    r.pretrain_loss_final = std::stod(tail[2]);
    r.wall_s = std::stod(tail[3]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace detail

/// Mean and sample standard deviation of probe accuracy per value, in spec order.
inline std::string sweep_summary(const SweepSpec& spec, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(28) << spec.param << std::right << std::setw(4) << "n"
     << std::setw(12) << "mean_acc" << std::setw(10) << "std" << '\n';
  for (const auto& v : spec.values) {
    std::map<std::uint64_t, double> by_seed;  // latest row per seed wins
    for (const auto& r : rows)
      if (r.value == v.dump() && std::isfinite(r.probe_acc)) by_seed[r.seed] = r.probe_acc;
    double m = 0, sd = 0;
    for (const auto& [s, a] : by_seed) m += a;
    const auto n = by_seed.size();
    if (n) m /= static_cast<double>(n);
    for (const auto& [s, a] : by_seed) sd += (a - m) * (a - m);
    sd = n > 1 ? std::sqrt(sd / static_cast<double>(n - 1)) : 0.0;
    os << std::left << std::setw(28) << v.dump() << std::right << std::setw(4) << n << std::fixed
       << std::setprecision(4) << std::setw(12) << m << std::setw(10) << sd << '\n'
       << std::defaultfloat;
  }
  return os.str();
}

/// Mean probe accuracy per value over completed cells.
inline std::map<std::string, double> sweep_means(const std::vector<SweepRow>& rows) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows)
    if (std::isfinite(r.probe_acc)) acc[r.value].first += r.probe_acc, ++acc[r.value].second;
  std::map<std::string, double> out;
  for (const auto& [v, p] : acc) out[v] = p.first / static_cast<double>(p.second);
  return out;
}

/// For every value x seed: pretrain, then linear probe. Cells whose final
/// checkpoint exists are skipped on resume. A failing cell is recorded with
/// a NaN accuracy and the sweep continues.
inline SweepResult run_sweep(const SweepSpec& spec, const Dataset& train, const Dataset& val,
                             const std::filesystem::path& out_dir, const SweepOptions& opt = {}) {
  namespace fs = std::filesystem;
  const fs::path root = out_dir / spec.sweep_id;
  fs::create_directories(root);
  SweepResult res;
  res.csv_path = root / "results.csv";
  std::vector<SweepRow> existing;
  if (fs::exists(res.csv_path)) {
    require<IoError>(opt.resume, "sweep results ", res.csv_path.string(),
                     " already exist; rerun with resume to continue the sweep");
    existing = detail::read_sweep_csv(res.csv_path);
  }
  std::ofstream csv(res.csv_path, std::ios::app);
  if (!csv) throw IoError("cannot write " + res.csv_path.string());
  if (existing.empty() && fs::file_size(res.csv_path) == 0) csv << kSweepHeader << '\n' << std::flush;
  res.rows = existing;

  for (const auto& value : spec.values)
    for (const auto seed : spec.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const fs::path cell = root / detail::cell_name(spec.param, value, seed);
      SweepRow row{spec.sweep_id, spec.param, value.dump(), seed, 0, 0, 0};
      auto cfg = with_override(spec.base, spec.param, value);
      cfg.seed = seed;
      const fs::path final_ckpt = cell / (output_prefix(cfg) + "-final.ckpt");
      const bool done = fs::exists(final_ckpt);
      const bool recorded = std::any_of(existing.begin(), existing.end(), [&](const SweepRow& r) {
        return r.value == row.value && r.seed == seed && std::isfinite(r.probe_acc);
      });
      if (done && recorded) {
        if (opt.log) *opt.log << "skip " << cell.string() << " (complete)\n";
        continue;
      }
      try {
        Network<float> net;
        if (done) {
          net = load_checkpoint(final_ckpt).online;
          net.config = cfg.model;
          row.pretrain_loss_final =
              detail::last_epoch_mean_from_csv(cell / (output_prefix(cfg) + ".metrics.csv"));
        } else {
          TrainOptions to;
          to.out_dir = cell;
          to.log = opt.log;
          const auto tr = Trainer(cfg, train).run(to);
          net = tr.online;
          row.pretrain_loss_final = detail::last_epoch_mean(tr.metrics);
        }
        row.probe_acc = linear_probe(net, train, val, cfg.eval.probe, cfg.augment, cfg.seed).accuracy;
      } catch (const Error& e) {
        row.probe_acc = std::nan("");
        fs::create_directories(cell);
        std::ofstream(cell / "error.txt") << e.what() << '\n';
        if (opt.log) *opt.log << "cell " << cell.string() << " failed: " << e.what() << '\n';
      }
      row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      csv << row.csv() << '\n' << std::flush;
      res.rows.push_back(row);
      if (opt.log)
        *opt.log << spec.param << "=" << row.value << " seed " << seed << " probe_acc "
                 << row.probe_acc << " (" << row.wall_s << " s)" << std::endl;
    }
  res.summary = sweep_summary(spec, res.rows);
  std::ofstream(root / "summary.txt") << res.summary;
  return res;
}

}  // namespace mscn
