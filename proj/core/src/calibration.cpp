#include "amoe/calibration.hpp"

#include <string>

#include "amoe/error.hpp"

namespace amoe {

CalibrationMap fit_calibration(const Vector& means, const Vector& targets, CalibrationUnits units) {
  if (means.size() != targets.size()) throw std::invalid_argument("calibration inputs differ in length");
  if (means.size() < 2) throw DataError("calibration needs at least 2 points");
  const auto n = static_cast<double>(means.size());
  const double mu_bar = means.mean();
  const double y_bar = targets.mean();
  const Vector dm = means.array() - mu_bar;
  const Vector dy = targets.array() - y_bar;
  const double var = dm.squaredNorm() / n;
  CalibrationMap map;
  map.units = units;
  if (var < kCalibrationMinVariance) {
    map.a = 1.0;
    map.b = y_bar - mu_bar;
    map.degenerate = true;
    return map;
  }
  map.a = dm.dot(dy) / n / var;
  map.b = y_bar - map.a * mu_bar;
  return map;
}

nlohmann::json calibration_to_json(const CalibrationMap& m) {
  return {{"a", m.a}, {"b", m.b}, {"units", m.units == CalibrationUnits::kOriginal ? "original" : "z"},
          {"degenerate", m.degenerate}};
}

CalibrationMap calibration_from_json(const nlohmann::json& j) {
  CalibrationMap m;
  m.a = j.at("a").get<double>();
  m.b = j.at("b").get<double>();
  const auto u = j.value("units", std::string("original"));
  if (u == "original") m.units = CalibrationUnits::kOriginal;
  else if (u == "z") m.units = CalibrationUnits::kZ;
  else throw DataError("unknown calibration units '" + u + "'");
  m.degenerate = j.value("degenerate", false);
  return m;
}

}  // namespace amoe
