#pragma once

#include <nlohmann/json.hpp>

#include "amoe/types.hpp"

namespace amoe {

enum class CalibrationUnits { kOriginal, kZ };

/// mu -> a * mu + b applied to predictive means only.
struct CalibrationMap {
  double a = 1.0;
  double b = 0.0;
  CalibrationUnits units = CalibrationUnits::kOriginal;
  bool degenerate = false;  // fitted means had (near) zero variance

  double apply(double mu) const { return a * mu + b; }
  Vector apply(const Vector& means) const { return (a * means.array() + b).matrix(); }
};

inline constexpr double kCalibrationMinVariance = 1e-12;

/// Least-squares fit of targets on predicted means. With Var(means) below
/// kCalibrationMinVariance the slope is fixed at 1 and b is the mean residual.
CalibrationMap fit_calibration(const Vector& means, const Vector& targets,
                               CalibrationUnits units = CalibrationUnits::kOriginal);

inline Vector apply_calibration(const CalibrationMap& map, const Vector& means) { return map.apply(means); }

nlohmann::json calibration_to_json(const CalibrationMap& map);
CalibrationMap calibration_from_json(const nlohmann::json& j);

}  // namespace amoe
