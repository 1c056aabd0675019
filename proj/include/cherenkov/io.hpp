#pragma once

// File formats: event logs (CSV / JSONL) with a JSON manifest, binary grids, reconstruction
// reports.

#include "cherenkov/forward.hpp"
#include "cherenkov/hash.hpp"
#include "cherenkov/inverse.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cherenkov::io {

using nlohmann::json;

class FormatError : public Error {
 public:
  using Error::Error;
};

enum class EventFormat { csv, jsonl };

inline EventFormat format_for_path(const std::string& path) {
  auto ends = [&](const char* s) {
    std::string e(s);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  return ends(".jsonl") || ends(".json") ? EventFormat::jsonl : EventFormat::csv;
}

inline std::string manifest_path(const std::string& data_path) { return data_path + ".manifest.json"; }

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline const char* csv_header(bool oracle) {
  return oracle ? "shot_id,x1,x2,x3,t,zt1,zt2,omega,xi1,xi2,xi3,t_emit,az"
                : "shot_id,x1,x2,x3,t,zt1,zt2,omega";
}

/// Writes all events of the data set, ordered by shot and then by the event order.
inline void write_events(std::ostream& os, const DataSet& ds, EventFormat format, bool oracle_fields) {
  using detail::fmt;
  if (oracle_fields && !ds.has_oracle_fields)
    throw PreconditionError("write_events: oracle fields were stripped from this data set");
  if (format == EventFormat::csv) os << csv_header(oracle_fields) << "\n";
  for (const auto& rec : ds.shots)
    for (const auto& e : rec.events) {
      if (format == EventFormat::csv) {
        os << rec.id << "," << fmt(e.x[0]) << "," << fmt(e.x[1]) << "," << fmt(e.x[2]) << ","
           << fmt(e.t) << "," << fmt(e.zeta_tan[0]) << "," << fmt(e.zeta_tan[1]) << "," << fmt(e.omega);
        if (oracle_fields)
          os << "," << fmt(e.xi[0]) << "," << fmt(e.xi[1]) << "," << fmt(e.xi[2]) << ","
             << fmt(e.t_emit) << "," << e.azimuth;
        os << "\n";
      } else {
        json j = {{"shot_id", rec.id}, {"x1", e.x[0]}, {"x2", e.x[1]}, {"x3", e.x[2]},
                  {"t", e.t}, {"zt1", e.zeta_tan[0]}, {"zt2", e.zeta_tan[1]}, {"omega", e.omega}};
        if (oracle_fields) {
          j["xi1"] = e.xi[0];
          j["xi2"] = e.xi[1];
          j["xi3"] = e.xi[2];
          j["t_emit"] = e.t_emit;
          j["az"] = e.azimuth;
        }
        os << j.dump() << "\n";
      }
    }
}

inline json shot_json(const ShotRecord& rec) {
  const auto& s = rec.shot;
  json j = {{"id", rec.id},
            {"z", detail::vec_json(s.z)},
            {"theta", detail::vec_json(s.theta)},
            {"beta", s.beta},
            {"t_window", json::array({s.t_min, s.t_max})},
            {"events", rec.events.size()}};
  j["diagnostics"] = {{"emission_samples", rec.diag.emission_samples},
                      {"skipped_outside", rec.diag.skipped_outside},
                      {"skipped_margin", rec.diag.skipped_margin},
                      {"rays", rec.diag.rays},
                      {"discarded_unobserved", rec.diag.discarded_unobserved},
                      {"step_failures", rec.diag.step_failures},
                      {"trapped", rec.diag.trapped}};
  if (!rec.error.empty()) j["error"] = rec.error;
  return j;
}

inline json manifest_json(const DataSet& ds, EventFormat format, bool oracle_fields) {
  json shots = json::array();
  for (const auto& rec : ds.shots) shots.push_back(shot_json(rec));
  return {{"scene_hash", hex64(ds.scene_hash)},
          {"format", format == EventFormat::csv ? "csv" : "jsonl"},
          {"oracle_fields", oracle_fields},
          {"event_count", ds.event_count()},
          {"shots", shots}};
}

/// Writes the event file and its manifest next to it.
inline void save_dataset(const std::string& path, const DataSet& ds, bool oracle_fields) {
  auto format = format_for_path(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  write_events(os, ds, format, oracle_fields);
  std::ofstream ms(manifest_path(path), std::ios::binary);
  if (!ms) throw Error("cannot write " + manifest_path(path));
  ms << manifest_json(ds, format, oracle_fields).dump(2) << "\n";
}

/// Reads an event file and its manifest. Oracle-only columns, if present, are ignored.
inline DataSet load_dataset(const std::string& path) {
  std::ifstream ms(manifest_path(path));
  if (!ms) throw FormatError("missing manifest " + manifest_path(path));
  json man;
  try {
    man = json::parse(ms);
  } catch (const json::exception& e) {
    throw FormatError(manifest_path(path) + ": " + e.what());
  }
  DataSet ds;
  ds.has_oracle_fields = false;
  ds.scene_hash = std::stoull(man.at("scene_hash").get<std::string>(), nullptr, 16);
  std::map<int, std::size_t> slot;
  for (const auto& s : man.at("shots")) {
    ShotRecord rec;
    rec.id = s.at("id").get<int>();
    rec.shot.z = detail::json_vec(s.at("z"));
    rec.shot.theta = detail::json_vec(s.at("theta"));
    rec.shot.beta = s.at("beta").get<double>();
    rec.shot.t_min = s.at("t_window")[0].get<double>();
    rec.shot.t_max = s.at("t_window")[1].get<double>();
    if (s.contains("error")) rec.error = s["error"].get<std::string>();
    slot[rec.id] = ds.shots.size();
    ds.shots.push_back(std::move(rec));
  }
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path);
  auto format = format_for_path(path);
  std::string line;
  int lineno = 0;
  auto add = [&](int id, const ArrivalEvent& e) {
    auto it = slot.find(id);
    if (it == slot.end()) throw FormatError(path + ":" + std::to_string(lineno) + ": unknown shot_id " + std::to_string(id));
    ds.shots[it->second].events.push_back(e);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ArrivalEvent e;
    int id = 0;
    if (format == EventFormat::csv) {
      if (lineno == 1) {
        if (line.rfind("shot_id,", 0) != 0) throw FormatError(path + ":1: missing CSV header");
        continue;
      }
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 8 && cells.size() != 13)
        throw FormatError(path + ":" + std::to_string(lineno) + ": expected 8 or 13 columns");
      try {
        id = std::stoi(cells[0]);
        e.x = Vec3(std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]));
        e.t = std::stod(cells[4]);
        e.zeta_tan = Eigen::Vector2d(std::stod(cells[5]), std::stod(cells[6]));
        e.omega = std::stod(cells[7]);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number");
      }
    } else {
      try {
        json j = json::parse(line);
        id = j.at("shot_id").get<int>();
        e.x = Vec3(j.at("x1").get<double>(), j.at("x2").get<double>(), j.at("x3").get<double>());
        e.t = j.at("t").get<double>();
        e.zeta_tan = Eigen::Vector2d(j.at("zt1").get<double>(), j.at("zt2").get<double>());
        e.omega = j.at("omega").get<double>();
      } catch (const json::exception& ex) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
    add(id, e);
  }
  for (auto& rec : ds.shots) std::stable_sort(rec.events.begin(), rec.events.end(),
                                              [](const auto& a, const auto& b) { return a.t < b.t; });
  return ds;
}

// --- binary grids ---------------------------------------------------------------------------

/// Layout: int64 nx, ny, nz; double origin[3]; double spacing[3]; then nx*ny*nz*c doubles,
/// row-major [i][j][k][c]. The component count c is implied by the file size.
inline void write_grid(const std::string& path, const GridField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  for (auto d : f.dims) os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  for (int a = 0; a < 3; ++a) os.write(reinterpret_cast<const char*>(&f.origin[a]), sizeof(double));
  for (int a = 0; a < 3; ++a) os.write(reinterpret_cast<const char*>(&f.spacing[a]), sizeof(double));
  os.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(f.data.size() * sizeof(double)));
}

inline GridField read_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot read " + path);
  auto size = static_cast<std::int64_t>(is.tellg());
  is.seekg(0);
  constexpr std::int64_t header = 3 * 8 + 6 * 8;
  if (size < header) throw FormatError(path + ": truncated header");
  GridField f;
  for (auto& d : f.dims) is.read(reinterpret_cast<char*>(&d), sizeof(d));
  for (int a = 0; a < 3; ++a) is.read(reinterpret_cast<char*>(&f.origin[a]), sizeof(double));
  for (int a = 0; a < 3; ++a) is.read(reinterpret_cast<char*>(&f.spacing[a]), sizeof(double));
  if (f.dims[0] < 1 || f.dims[1] < 1 || f.dims[2] < 1) throw FormatError(path + ": bad dimensions");
  std::int64_t nodes = f.dims[0] * f.dims[1] * f.dims[2];
  std::int64_t payload = size - header;
  if (payload % (nodes * 8) != 0) throw FormatError(path + ": payload size does not match dimensions");
  f.components = static_cast<int>(payload / (nodes * 8));
  f.data.resize(static_cast<std::size_t>(nodes * f.components));
  is.read(reinterpret_cast<char*>(f.data.data()), payload);
  return f;
}

inline MetricField metric_from_grid(const GridField& f, std::optional<double> h_deriv = std::nullopt) {
  if (f.components != 6) throw FormatError("metric grid needs 6 components per node, found " + std::to_string(f.components));
  metric_kinds::GridSampled g;
  g.dims = f.dims;
  g.origin = f.origin;
  g.spacing = f.spacing;
  g.data = f.data;
  return MetricField(std::move(g), std::nullopt, h_deriv);
}

inline GridField grid_from_metric(const MetricField& m) {
  const auto* g = std::get_if<metric_kinds::GridSampled>(&m.variant());
  if (!g) throw PreconditionError("grid_from_metric: metric is not grid-sampled");
  GridField f;
  f.dims = g->dims;
  f.origin = g->origin;
  f.spacing = g->spacing;
  f.components = 6;
  f.data = g->data;
  return f;
}

// --- reconstruction report --------------------------------------------------------------------

inline json reconstruction_json(const MetricEstimate& est) {
  json sites = json::array();
  for (const auto& s : est.sites) {
    json j = {{"z", detail::vec_json(s.z)}, {"boundary_points", s.boundary_points}};
    if (s.fit) {
      json g = json::array(), h = json::array();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
          g.push_back(s.fit->g(r, c));
          h.push_back(s.fit->h(r, c));
        }
      j["G_hat"] = g;
      j["H_hat"] = h;
      j["diagnostics"] = {{"condition_number", s.fit->condition},
                          {"residual_rms", s.fit->residual_rms},
                          {"covector_count", s.fit->covector_count},
                          {"cone_solid_angle", s.fit->cone_solid_angle},
                          {"spd_floor_active", s.fit->floor_active},
                          {"polarization_error", s.fit->polarization_error}};
    }
    if (!s.failure.empty()) j["failure"] = s.failure;
    if (s.relative_error) j["relative_frobenius_error"] = *s.relative_error;
    sites.push_back(j);
  }
  json out = {{"h", est.h}, {"sites", sites}};
  if (auto m = est.median_error()) out["median_relative_error"] = *m;
  return out;
}

}  // namespace cherenkov::io
