#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenefit/error.hpp"
#include "scenefit/geometry.hpp"
#include "scenefit/objective.hpp"
#include "scenefit/solver.hpp"

namespace scenefit {

using Json = nlohmann::ordered_json;

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, "'" + path.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

namespace detail {

template <typename T>
T get_field(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::kInvalidInput, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kInvalidInput, "expected a 3-vector");
  for (const auto& c : j)
    if (!c.is_number()) throw Error(ErrorCode::kInvalidInput, "3-vector entries must be numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Json to_json(const std::vector<Vec3>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(to_json(p));
  return a;
}

inline std::vector<Vec3> points_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kInvalidInput, "expected an array of 3-vectors");
  std::vector<Vec3> out;
  out.reserve(j.size());
  for (const auto& p : j) out.push_back(vec3_from_json(p));
  return out;
}

inline Json to_json(const SceneModel& scene) {
  Json bodies = Json::array();
  for (const auto& b : scene.bodies) {
    Json hulls = Json::array();
    for (const auto& h : b.hulls) hulls.push_back(to_json(h.vertices));
    Json jb;
    jb["name"] = b.name;
    jb["is_static"] = b.is_static;
    jb["density"] = b.mass_density;
    if (b.vertex_mass) jb["vertex_mass"] = *b.vertex_mass;
    jb["pose"] = {{"theta", to_json(b.pose.theta)}, {"t", to_json(b.pose.t)}};
    jb["hulls"] = std::move(hulls);
    bodies.push_back(std::move(jb));
  }
  Json j;
  j["gravity"] = to_json(scene.gravity);
  j["bodies"] = std::move(bodies);
  return j;
}

inline SceneModel scene_from_json(const Json& j) {
  SceneModel s;
  if (j.contains("gravity")) s.gravity = vec3_from_json(j["gravity"]);
  const Json bodies = detail::get_field<Json>(j, "bodies");
  if (!bodies.is_array()) throw Error(ErrorCode::kInvalidInput, "'bodies' must be an array");
  for (const auto& jb : bodies) {
    RigidBody b;
    b.name = jb.value("name", std::string{});
    b.is_static = jb.value("is_static", false);
    b.mass_density = jb.value("density", b.mass_density);
    if (jb.contains("vertex_mass") && !jb["vertex_mass"].is_null()) b.vertex_mass = jb["vertex_mass"].get<double>();
    if (jb.contains("pose")) {
      const auto& p = jb["pose"];
      if (p.contains("theta")) b.pose.theta = vec3_from_json(p["theta"]);
      if (p.contains("t")) b.pose.t = vec3_from_json(p["t"]);
    }
    for (const auto& jh : detail::get_field<Json>(jb, "hulls")) b.hulls.push_back(BodyFrameHull{points_from_json(jh)});
    s.bodies.push_back(std::move(b));
  }
  s.validate();
  return s;
}

/// Triangle mesh with a free-form comment header.
struct ObjMesh {
  std::vector<std::string> comments;
  TriangulatedBoundary mesh;
};

inline std::string to_obj(const ObjMesh& m) {
  std::string out;
  for (const auto& c : m.comments) out += "# " + c + "\n";
  for (const auto& v : m.mesh.vertices)
    out += "v " + format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z()) + "\n";
  for (const auto& t : m.mesh.triangles)
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  return out;
}

inline ObjMesh obj_from_text(const std::string& text) {
  ObjMesh m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      m.comments.push_back(line.substr(2));
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw Error(ErrorCode::kIo, "bad vertex on OBJ line " + std::to_string(lineno));
      m.mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int& k : t) {
        std::string tok;
        if (!(ls >> tok)) throw Error(ErrorCode::kIo, "bad face on OBJ line " + std::to_string(lineno));
        k = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        if (k < 0 || k >= static_cast<int>(m.mesh.vertices.size()))
          throw Error(ErrorCode::kIo, "face index out of range on OBJ line " + std::to_string(lineno));
      }
      std::string extra;
      if (ls >> extra) throw Error(ErrorCode::kIo, "only triangles are supported (OBJ line " + std::to_string(lineno) + ")");
      m.mesh.triangles.push_back(t);
    }
  }
  return m;
}

inline void write_obj(const std::filesystem::path& path, const ObjMesh& m) { write_text(path, to_obj(m)); }
inline ObjMesh read_obj(const std::filesystem::path& path) { return obj_from_text(read_text(path)); }

/// World-frame boundary of every hull of a body, concatenated.
inline TriangulatedBoundary body_hull_meshes(const RigidBody& b) {
  TriangulatedBoundary m;
  for (const auto& h : b.hulls) {
    const auto hb = hull_boundary(h, b.pose);
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), hb.vertices.begin(), hb.vertices.end());
    for (const auto& t : hb.triangles) m.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
  return m;
}

/// Observation file: per body the cloud and the name of its prior-mesh OBJ,
/// relative to the JSON file.
inline Json observation_to_json(const Observation& obs, const SceneModel& scene,
                                const std::vector<std::string>& prior_files) {
  Json bodies = Json::array();
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    Json jb;
    jb["name"] = scene.bodies[i].name;
    jb["points"] = i < obs.clouds.size() ? to_json(obs.clouds[i]) : Json::array();
    jb["prior"] = i < prior_files.size() && !prior_files[i].empty() ? Json(prior_files[i]) : Json(nullptr);
    bodies.push_back(std::move(jb));
  }
  Json j;
  j["bodies"] = std::move(bodies);
  return j;
}

inline Observation observation_from_json(const Json& j, const std::filesystem::path& base_dir) {
  Observation obs;
  for (const auto& jb : detail::get_field<Json>(j, "bodies")) {
    obs.clouds.push_back(jb.contains("points") ? points_from_json(jb["points"]) : std::vector<Vec3>{});
    TriangulatedBoundary prior;
    if (jb.contains("prior") && jb["prior"].is_string()) prior = read_obj(base_dir / jb["prior"].get<std::string>()).mesh;
    obs.priors.push_back(std::move(prior));
  }
  return obs;
}

inline Observation read_observation(const std::filesystem::path& path) {
  return observation_from_json(read_json(path), path.parent_path());
}

inline Json to_json(const OuterRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json j;
  j["iteration"] = r.iteration;
  j["objective"] = num(r.objective);
  j["objective_prev"] = num(r.objective_prev);
  j["objective_post"] = num(r.objective_post);
  j["eq_norm"] = num(r.eq_norm);
  j["ineq_norm"] = num(r.ineq_norm);
  j["kkt"] = num(r.kkt);
  j["rho_eq"] = r.rho_eq;
  j["rho_ineq"] = r.rho_ineq;
  j["lm_iterations"] = r.lm_iterations;
  j["lm_stop"] = r.lm_stop;
  j["trimmed"] = r.trimmed;
  j["active_terms"] = r.active_terms;
  j["seconds"] = r.seconds;
  return j;
}

inline OuterRecord outer_record_from_json(const Json& j) {
  auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
  };
  OuterRecord r;
  try {
    r.iteration = j.at("iteration").get<int>();
    r.objective = num("objective");
    r.objective_prev = num("objective_prev");
    r.objective_post = num("objective_post");
    r.eq_norm = num("eq_norm");
    r.ineq_norm = num("ineq_norm");
    r.kkt = num("kkt");
    r.rho_eq = j.at("rho_eq").get<double>();
    r.rho_ineq = j.at("rho_ineq").get<double>();
    r.lm_iterations = j.at("lm_iterations").get<int>();
    r.lm_stop = j.at("lm_stop").get<std::string>();
    r.trimmed = j.at("trimmed").get<std::size_t>();
    r.active_terms = j.at("active_terms").get<std::size_t>();
    r.seconds = j.at("seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("trace record: ") + e.what());
  }
  return r;
}

inline std::string to_jsonl(const std::vector<OuterRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<OuterRecord> trace_from_jsonl(const std::string& text) {
  std::vector<OuterRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(outer_record_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIo, std::string("trace line: ") + e.what());
    }
  }
  return out;
}

/// Minimal CSV table; cells are written verbatim and must not contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    auto line = [](const std::vector<std::string>& cells) {
      std::string s;
      for (std::size_t c = 0; c < cells.size(); ++c) s += (c ? "," : "") + cells[c];
      return s + "\n";
    };
    std::string out = line(header);
    for (const auto& r : rows) out += line(r);
    return out;
  }

  static CsvTable parse(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      (first ? t.header : t.rows.emplace_back()) = std::move(cells);
      first = false;
    }
    return t;
  }
};

}  // namespace scenefit
