#pragma once

#include <map>
#include <string>
#include <vector>

#include "tcfbsde/cash.hpp"

namespace tcfbsde {

using ParamTable = std::map<std::string, double>;

/// Scalar linear-quadratic model with additive noise:
/// f = -a x + beta v + f0, sigma = s0 + sv v, b = (e0 + ev v) z,
/// g = gx x + gy y + ga a + gr r + gv v, phi = mT x,
/// l = (qx x^2 + qv v^2) / 2, h = hx x^2 / 2, gamma = gam y^2 / 2.
ModelSpec linear_test_model(const ParamTable& params, const LevyJumpSpec& jumps);

/// Scalar model with drift quadratic in the control and multiplicative noise:
/// f = -a x + beta v + eps v^2, sigma = s0 + s1 x, b = (e0 + e1 x) z,
/// g linear, phi = x, l = (v^2 + qx x^2) / 2, h = hx x^2 / 2, gamma = y^2 / 2.
ModelSpec quadratic_drift_model(const ParamTable& params, const LevyJumpSpec& jumps);

CashParams cash_params(const ParamTable& params);

/// Built-in model by name ("linear_test", "quadratic_drift", "cash"). Unknown
/// parameter names are errors.
ModelSpec builtin_model(const std::string& name, const ParamTable& params, const LevyJumpSpec& jumps);
std::vector<std::string> builtin_model_names();
/// Default parameter table of a built-in model.
ParamTable builtin_defaults(const std::string& name);

}  // namespace tcfbsde
