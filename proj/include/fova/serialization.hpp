#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fova/mdp.hpp"

namespace fova {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Matrices are nested row arrays, vectors flat arrays.
Json to_json(const Matrix& m);
Json to_json(const Vector& v);
Matrix matrix_from_json(const Json& j, const std::string& where);
Vector vector_from_json(const Json& j, const std::string& where);

/// Transition is written as a 3-level array indexed [s][a][s'].
Json to_json(const MdpSpec& mdp);
MdpSpec mdp_from_json(const Json& j);

Json to_json(const Policy& p);
Policy policy_from_json(const Json& j, const std::string& where);

/// Shortest decimal text that round-trips a double (non-finite → null).
std::string format_double(double x);

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const Json& j, const std::filesystem::path& path);
void write_text_file(const std::string& text, const std::filesystem::path& path);

}  // namespace fova
