#pragma once

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <string_view>

#include "sgfuse/liegroup.h"

namespace sgfuse {

using Json = nlohmann::json;

/// Malformed input. The message carries a byte offset (syntax errors) or a
/// JSON path such as `$.nodes[3].radius` (schema errors).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Compact JSON with sorted object keys and every float written with 17
// significant digits, so equal documents produce identical bytes.
std::string canonical_dump(const Json& value);

// Parses text, mapping syntax errors to ParseError with the byte offset.
Json parse_json(std::string_view text, std::string_view what);

// Schema helpers; `path` names the value being read for diagnostics.
const Json& require(const Json& object, const std::string& key, const std::string& path);
double get_double(const Json& value, const std::string& path);
std::int64_t get_int(const Json& value, const std::string& path);
std::uint64_t get_uint(const Json& value, const std::string& path);
bool get_bool(const Json& value, const std::string& path);
std::string get_string(const Json& value, const std::string& path);
const Json& get_array(const Json& value, const std::string& path);

Json to_json(const Vector3& v);
Vector3 vector3_from_json(const Json& value, const std::string& path);
// (qw, qx, qy, qz, tx, ty, tz)
Json to_json(const Pose& pose);
Pose pose_from_json(const Json& value, const std::string& path);

}  // namespace sgfuse
