#pragma once

#include "tcfbsde/cash.hpp"
#include "tcfbsde/fbsde.hpp"
#include "tcfbsde/models.hpp"

namespace tcfbsde::testing {

// Scalar model with every coefficient and cost identically zero.
inline ModelSpec zero_model(double lambda = 1.0) {
  ModelSpec m;
  m.name = "zero";
  m.dims = {1, 1, 1, 1};
  m.x0 = constant(1, 1.0);
  m.f = [](double, double, const Vec&, const Vec&) -> Vec { return zeros(1); };
  m.sigma = [](double, double, const Vec&, const Vec&) -> Mat { return Mat::Zero(1, 1); };
  m.b = [](double, double, const Vec&, const Vec&, double) -> Vec { return zeros(1); };
  m.g = [](double, double, const Vec&, const Vec&, const Mat&, const Vec&, const Vec&) -> Vec { return zeros(1); };
  m.phi = [](const Vec&) -> Vec { return zeros(1); };
  m.l = [](double, double, const Vec&, const Vec&, const Mat&, const Vec&, const Vec&) { return 0.0; };
  m.h = [](const Vec&) { return 0.0; };
  m.gamma = [](const Vec&) { return 0.0; };
  m.control_set = ControlSet::unbounded(1);
  m.jumps = {1.0, lambda};
  return m;
}

inline BundleSpec bundle_spec(const ModelSpec& model, double du = 1e-2, double alpha = 0.7) {
  return bundle_spec_for(model, {alpha, 1.0}, 1.0, du);
}

inline CashSpec default_cash() { return make_cash_spec(CashParams{}); }

}  // namespace tcfbsde::testing
