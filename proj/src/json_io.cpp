#include "sgfuse/json_io.h"

#include <cmath>
#include <cstdio>

namespace sgfuse {

namespace {

void dump_into(const Json& value, std::string& out) {
  switch (value.type()) {
    case Json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (const auto& [key, item] : value.items()) {
        if (!first) {
          out.push_back(',');
        }
        first = false;
        out += Json(key).dump();
        out.push_back(':');
        dump_into(item, out);
      }
      out.push_back('}');
      break;
    }
    case Json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& item : value) {
        if (!first) {
          out.push_back(',');
        }
        first = false;
        dump_into(item, out);
      }
      out.push_back(']');
      break;
    }
    case Json::value_t::number_float: {
      const double d = value.get<double>();
      if (!std::isfinite(d)) {
        throw std::invalid_argument("cannot serialize non-finite number");
      }
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", d);
      std::string text(buf);
      if (text.find_first_of(".e") == std::string::npos) {
        text += ".0";
      }
      out += text;
      break;
    }
    default:
      out += value.dump();
  }
}

}  // namespace

std::string canonical_dump(const Json& value) {
  std::string out;
  dump_into(value, out);
  return out;
}

Json parse_json(std::string_view text, std::string_view what) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string(what) + ": syntax error at byte " + std::to_string(e.byte) +
                     ": " + e.what());
  }
}

const Json& require(const Json& object, const std::string& key, const std::string& path) {
  if (!object.is_object()) {
    throw ParseError(path + ": expected an object");
  }
  const auto it = object.find(key);
  if (it == object.end()) {
    throw ParseError(path + "." + key + ": missing field");
  }
  return *it;
}

double get_double(const Json& value, const std::string& path) {
  if (!value.is_number()) {
    throw ParseError(path + ": expected a number");
  }
  const double d = value.get<double>();
  if (!std::isfinite(d)) {
    throw ParseError(path + ": expected a finite number");
  }
  return d;
}

std::int64_t get_int(const Json& value, const std::string& path) {
  if (!value.is_number_integer()) {
    throw ParseError(path + ": expected an integer");
  }
  return value.get<std::int64_t>();
}

std::uint64_t get_uint(const Json& value, const std::string& path) {
  if (value.is_number_unsigned()) {
    return value.get<std::uint64_t>();
  }
  // Values built in code rather than parsed may be signed.
  if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(value.get<std::int64_t>());
  }
  throw ParseError(path + ": expected a non-negative integer");
}

bool get_bool(const Json& value, const std::string& path) {
  if (!value.is_boolean()) {
    throw ParseError(path + ": expected a boolean");
  }
  return value.get<bool>();
}

std::string get_string(const Json& value, const std::string& path) {
  if (!value.is_string()) {
    throw ParseError(path + ": expected a string");
  }
  return value.get<std::string>();
}

const Json& get_array(const Json& value, const std::string& path) {
  if (!value.is_array()) {
    throw ParseError(path + ": expected an array");
  }
  return value;
}

Json to_json(const Vector3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vector3 vector3_from_json(const Json& value, const std::string& path) {
  const Json& arr = get_array(value, path);
  if (arr.size() != 3) {
    throw ParseError(path + ": expected 3 numbers");
  }
  return Vector3(get_double(arr[0], path + "[0]"), get_double(arr[1], path + "[1]"),
                 get_double(arr[2], path + "[2]"));
}

Json to_json(const Pose& pose) {
  Json arr = Json::array();
  for (const double d : pose.to_array()) {
    arr.push_back(d);
  }
  return arr;
}

Pose pose_from_json(const Json& value, const std::string& path) {
  const Json& arr = get_array(value, path);
  if (arr.size() != 7) {
    throw ParseError(path + ": expected 7 numbers (qw qx qy qz tx ty tz)");
  }
  std::array<double, 7> a{};
  for (std::size_t i = 0; i < 7; ++i) {
    a[i] = get_double(arr[i], path + "[" + std::to_string(i) + "]");
  }
  const double norm = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]);
  if (!(norm > 1e-12)) {
    throw ParseError(path + ": zero quaternion");
  }
  return Pose::FromArray(a);
}

}  // namespace sgfuse
