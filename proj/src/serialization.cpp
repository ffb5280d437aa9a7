#include "fova/serialization.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fova/errors.hpp"

namespace fova {

namespace {

const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing field `" + key + "`");
  return j.at(key);
}

double number_at(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

}  // namespace

Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    const std::string rw = where + "[" + std::to_string(r) + "]";
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError(rw + ": ragged or non-array row");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = number_at(row.at(static_cast<std::size_t>(c)), rw + "[" + std::to_string(c) + "]");
  }
  return m;
}

Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_at(j[i], where);
  return v;
}

Json to_json(const MdpSpec& mdp) {
  Json t = Json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    Json per_action = Json::array();
    for (int a = 0; a < mdp.n_actions; ++a) per_action.push_back(to_json(Vector(mdp.transition.row(mdp.row(s, a)))));
    t.push_back(std::move(per_action));
  }
  Json j;
  j["version"] = kSchemaVersion;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  j["gamma"] = mdp.gamma;
  j["r_max"] = mdp.r_max;
  j["transition"] = std::move(t);
  j["reward"] = to_json(mdp.reward);
  j["initial_dist"] = to_json(mdp.initial_dist);
  return j;
}

MdpSpec mdp_from_json(const Json& j) {
  const std::string where = "mdp";
  if (j.contains("version") && j.at("version") != kSchemaVersion)
    throw ConfigError(where + ".version: unsupported schema version");
  MdpSpec m;
  m.n_states = require(j, "n_states", where).get<int>();
  m.n_actions = require(j, "n_actions", where).get<int>();
  m.gamma = number_at(require(j, "gamma", where), where + ".gamma");
  m.r_max = number_at(require(j, "r_max", where), where + ".r_max");
  if (m.n_states < 1 || m.n_actions < 1) throw ConfigError(where + ": sizes must be positive");
  const Json& t = require(j, "transition", where);
  if (!t.is_array() || static_cast<int>(t.size()) != m.n_states)
    throw ConfigError(where + ".transition: expected n_states entries");
  m.transition.resize(static_cast<Eigen::Index>(m.n_states) * m.n_actions, m.n_states);
  for (int s = 0; s < m.n_states; ++s) {
    const Matrix rows = matrix_from_json(t.at(static_cast<std::size_t>(s)),
                                         where + ".transition[" + std::to_string(s) + "]");
    if (rows.rows() != m.n_actions || rows.cols() != m.n_states)
      throw ConfigError(where + ".transition[" + std::to_string(s) + "]: wrong shape");
    for (int a = 0; a < m.n_actions; ++a) m.transition.row(m.row(s, a)) = rows.row(a);
  }
  m.reward = matrix_from_json(require(j, "reward", where), where + ".reward");
  m.initial_dist = vector_from_json(require(j, "initial_dist", where), where + ".initial_dist");
  m.validate();
  return m;
}

Json to_json(const Policy& p) { return to_json(p.probs()); }

Policy policy_from_json(const Json& j, const std::string& where) {
  try {
    return Policy(matrix_from_json(j, where));
  } catch (const ArgumentError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::string format_double(double x) {
  if (!std::isfinite(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, end);
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
  write_text_file(j.dump(2) + "\n", path);
}

void write_text_file(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fova
