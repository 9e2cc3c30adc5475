#pragma once
/// @file json_io.hpp
/// @brief JSON encodings of grids and velocity models shared by the file
/// containers and the run configuration.

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "characteristics.hpp"
#include "core.hpp"

namespace mlsl {

using nlohmann::json;

/// Config-level error: bad key, bad value or inconsistent settings.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Rejects keys of `obj` outside `allowed`, naming the first offender.
inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("unknown key '" + where + "." + key + "'");
  }
}

inline json velocity_to_json(const VelocityModel& m) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Constant1D>) return {{"kind", "const1d"}, {"a", v.a}};
        else if constexpr (std::is_same_v<T, VariableSin1D>) return {{"kind", "sin1d"}};
        else if constexpr (std::is_same_v<T, Constant2D>) return {{"kind", "const2d"}, {"a", v.a}, {"b", v.b}};
        else return {{"kind", "swirl2d"}, {"period", v.period}};
      },
      m);
}

inline VelocityModel velocity_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("velocity: missing 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "const1d") {
    check_keys(j, {"kind", "a"}, "velocity");
    return Constant1D{j.value("a", 1.0)};
  }
  if (kind == "sin1d") {
    check_keys(j, {"kind"}, "velocity");
    return VariableSin1D{};
  }
  if (kind == "const2d") {
    check_keys(j, {"kind", "a", "b"}, "velocity");
    return Constant2D{j.value("a", 1.0), j.value("b", 1.0)};
  }
  if (kind == "swirl2d") {
    check_keys(j, {"kind", "period"}, "velocity");
    return Swirl2D{j.value("period", 2.0)};
  }
  throw ConfigError("velocity: unknown kind '" + kind + "'");
}

inline json grid_to_json(const Grid1D& g) { return {{"x_lo", g.x_lo}, {"x_hi", g.x_hi}, {"n", g.n}}; }

inline json grid_to_json(const Grid2D& g) {
  return {{"x_lo", g.x_lo}, {"x_hi", g.x_hi}, {"y_lo", g.y_lo}, {"y_hi", g.y_hi}, {"nx", g.n_x}, {"ny", g.n_y}};
}

template <GridType G>
G grid_from_json(const json& j) {
  if constexpr (G::dim == 1) {
    return Grid1D(j.at("x_lo").get<Real>(), j.at("x_hi").get<Real>(), j.at("n").get<int>());
  } else {
    return Grid2D(j.at("x_lo").get<Real>(), j.at("x_hi").get<Real>(), j.at("y_lo").get<Real>(),
                  j.at("y_hi").get<Real>(), j.at("nx").get<int>(), j.at("ny").get<int>());
  }
}

}  // namespace mlsl
