#include "tcfbsde/fbsde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "tcfbsde/format.hpp"

namespace tcfbsde {

namespace {

void monomials(int dims, int degree, std::vector<int>& current, std::vector<std::vector<int>>& out) {
  // Exponent tuples ordered by total degree.
  for (int total = 0; total <= degree; ++total) {
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == dims - 1) {
        current[static_cast<std::size_t>(pos)] = left;
        out.push_back(current);
        return;
      }
      for (int e = left; e >= 0; --e) {
        current[static_cast<std::size_t>(pos)] = e;
        rec(pos + 1, left - e);
      }
    };
    if (dims == 0) {
      if (total == 0) out.emplace_back();
      continue;
    }
    rec(0, total);
  }
}

double legendre(int order, double x) {
  if (order == 0) return 1.0;
  double p0 = 1.0, p1 = x;
  for (int l = 2; l <= order; ++l) {
    const double p2 = ((2.0 * l - 1.0) * x * p1 - (l - 1.0) * p0) / l;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

/// Solves y = yhat + dE * F(y) by Newton with a finite-difference Jacobian.
template <class Fn>
Vec solve_implicit(const Vec& yhat, double dE, const Fn& F, std::size_t step) {
  Vec y = yhat + dE * F(yhat);
  Mat jac;
  bool have_jac = false;
  for (int it = 0; it < 50; ++it) {
    const Vec res = y - yhat - dE * F(y);
    require(res.allFinite(), "non-finite backward value at step " + std::to_string(step));
    if (res.norm() <= 1e-15 * (1.0 + y.norm())) return y;
    if (!have_jac) {
      jac = Mat::Identity(y.size(), y.size()) - dE * jacobian(F, y);
      have_jac = true;
    }
    const Vec delta = jac.partialPivLu().solve(res);
    y -= delta;
    if (delta.norm() <= 1e-15 * (1.0 + y.norm())) return y;
  }
  throw Error("implicit backward step did not converge at step " + std::to_string(step));
}

}  // namespace

Regression::Regression(const std::vector<Vec>& states, std::size_t offset, std::size_t count, int degree, double ridge,
                       std::size_t step) {
  require(count >= 1, "empty regression sample");
  const int n = static_cast<int>(states[offset].size());
  std::vector<int> active;
  Vec mean = Vec::Zero(n), sd = Vec::Zero(n);
  for (std::size_t j = 0; j < count; ++j) mean += states[offset + j];
  mean /= static_cast<double>(count);
  for (std::size_t j = 0; j < count; ++j) sd += (states[offset + j] - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(count)).cwiseSqrt();
  for (int q = 0; q < n; ++q)
    if (sd(q) > 1e-12 * (1.0 + std::abs(mean(q)))) active.push_back(q);

  std::vector<std::vector<int>> powers;
  std::vector<int> scratch(active.size(), 0);
  monomials(static_cast<int>(active.size()), degree, scratch, powers);
  require(powers.size() <= 4096, "regression basis overflow at step " + std::to_string(step));
  require(powers.size() <= count, "regression rank deficiency at step " + std::to_string(step) + ": " +
                                      std::to_string(count) + " samples for " + std::to_string(powers.size()) +
                                      " basis functions");

  design_.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(powers.size()));
  for (std::size_t j = 0; j < count; ++j) {
    const Vec& s = states[offset + j];
    for (std::size_t b = 0; b < powers.size(); ++b) {
      double value = 1.0;
      for (std::size_t q = 0; q < active.size(); ++q) {
        const int a = active[q];
        const double z = (s(a) - mean(a)) / sd(a);
        for (int e = 0; e < powers[b][q]; ++e) value *= z;
      }
      design_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = value;
    }
  }
  Eigen::MatrixXd gram = design_.transpose() * design_ / static_cast<double>(count);
  for (Eigen::Index b = 1; b < gram.rows(); ++b) gram(b, b) += ridge;
  solver_.compute(gram);
  bool ok = solver_.info() == Eigen::Success && solver_.isPositive();
  if (ok) {
    const auto diag = solver_.vectorD();
    ok = diag.minCoeff() > 1e-13 * std::max(1.0, diag.maxCoeff());
  }
  require(ok, "regression rank deficiency at step " + std::to_string(step));
}

Eigen::MatrixXd Regression::fit(const Eigen::MatrixXd& targets) const {
  const Eigen::MatrixXd rhs = design_.transpose() * targets / static_cast<double>(design_.rows());
  return design_ * solver_.solve(rhs);
}

Eigen::Map<const Eigen::MatrixXd> EnsembleSolution::r_nodes(std::size_t i, std::size_t j) const {
  const auto m = static_cast<std::size_t>(dims.m);
  return {r.data() + (i * members + j) * m * nodes, dims.m, static_cast<Eigen::Index>(nodes)};
}

Eigen::Map<Eigen::MatrixXd> EnsembleSolution::r_nodes(std::size_t i, std::size_t j) {
  const auto m = static_cast<std::size_t>(dims.m);
  return {r.data() + (i * members + j) * m * nodes, dims.m, static_cast<Eigen::Index>(nodes)};
}

void solve_forward(const ModelSpec& model, const ControlProcess& control, const ConditionalEnsemble& ensemble,
                   const SolverConfig& config, EnsembleSolution& out) {
  require(ensemble.d == model.dims.d, "Brownian dimension of the ensemble does not match the model");
  const MarkQuadrature rule = model.jumps.quadrature();
  const Clock& clock = ensemble.clock;
  const std::size_t steps = clock.steps();
  const std::size_t members = ensemble.size();
  const auto d = static_cast<std::size_t>(model.dims.d);
  const double lambda = model.jumps.intensity;

  out.clock = clock;
  out.members = members;
  out.dims = model.dims;
  out.nodes = rule.size();
  out.x.assign((steps + 1) * members, Vec());
  out.v.assign(steps * members, Vec());
  out.has_backward = false;

  Vec dB(model.dims.d);
  for (std::size_t j = 0; j < members; ++j) {
    const MemberNoise& noise = ensemble.members[j];
    Vec x = model.x0;
    out.x[j] = x;
    for (std::size_t i = 0; i < steps; ++i) {
      const ClockStep s = clock.step(i);
      const Vec v = model.control_set.admit(control(s.t1, s.t2, x), config.control_tolerance);
      out.v[i * members + j] = v;
      if (s.dE != 0.0) {
        for (std::size_t q = 0; q < d; ++q) dB(static_cast<Eigen::Index>(q)) = noise.dB[i * d + q];
        Vec next = x + model.f(s.t1, s.t2, x, v) * s.dE;
        next += model.sigma(s.t1, s.t2, x, v) * dB;
        for (std::size_t e = noise.jump_offsets[i]; e < noise.jump_offsets[i + 1]; ++e)
          next += model.b(s.t1, s.t2, x, v, noise.marks[e]);
        next -= (s.dE * lambda) * jump_mean(model, rule, s.t1, s.t2, x, v);
        require(next.allFinite(), "forward blow-up at step " + std::to_string(i));
        x = next;
      }
      out.x[(i + 1) * members + j] = x;
    }
  }
}

BackwardPaths solve_backward(const BackwardProblem& problem, const ConditionalEnsemble& ensemble,
                             const std::vector<Vec>& state, const MarkQuadrature& rule, double intensity,
                             const SolverConfig& config) {
  const Clock& clock = ensemble.clock;
  const std::size_t steps = clock.steps();
  const std::size_t members = ensemble.size();
  const int m = problem.dim;
  const int d = ensemble.d;
  const auto K = static_cast<Eigen::Index>(rule.size());
  const std::size_t block = static_cast<std::size_t>(m) * rule.size();
  require(problem.terminal.size() == members, "one terminal value per particle required");
  require(state.size() == (steps + 1) * members, "regression state has the wrong size");

  BackwardPaths out;
  out.y.assign((steps + 1) * members, Vec());
  out.a.assign(steps * members, Mat::Zero(m, d));
  out.r.assign(steps * members * block, 0.0);
  for (std::size_t j = 0; j < members; ++j) {
    require(problem.terminal[j].size() == m && problem.terminal[j].allFinite(), "invalid terminal value");
    out.y[steps * members + j] = problem.terminal[j];
  }

  // Legendre expansion of r(t, z) in the mark.
  const int L = std::max(1, config.jump_basis);
  const double c = std::max(std::abs(rule.nodes.front()), std::abs(rule.nodes.back()));
  Eigen::MatrixXd psi(L, K);
  for (int l = 0; l < L; ++l)
    for (Eigen::Index k = 0; k < K; ++k) psi(l, k) = legendre(l, rule.nodes[static_cast<std::size_t>(k)] / c);
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(rule.weights.data(), K);
  const Eigen::MatrixXd gram = psi * w.asDiagonal() * psi.transpose();
  const Eigen::VectorXd psi_mean = psi * w;
  const Eigen::MatrixXd to_nodes = gram.ldlt().solve(psi);  // L x K

  const auto run_driver = [&](std::size_t i, std::size_t j, const Vec& yhat, double dE, const Mat& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& r) {
    return solve_implicit(yhat, dE, [&](const Vec& y) { return problem.driver(i, j, y, a, r); }, i);
  };

  Eigen::MatrixXd r_zero = Eigen::MatrixXd::Zero(m, K);
  for (std::size_t ii = steps; ii-- > 0;) {
    const std::size_t i = ii;
    const double dE = clock.step(i).dE;
    if (dE == 0.0) {
      // No noise and no time elapse: Y is already known at the left point.
      for (std::size_t j = 0; j < members; ++j) {
        out.y[i * members + j] = out.y[(i + 1) * members + j];
        if (i + 1 < steps) {
          out.a[i * members + j] = out.a[(i + 1) * members + j];
          std::copy_n(out.r.begin() + static_cast<std::ptrdiff_t>(((i + 1) * members + j) * block), block,
                      out.r.begin() + static_cast<std::ptrdiff_t>((i * members + j) * block));
        }
      }
      continue;
    }
    if (problem.deterministic) {
      const Mat a0 = Mat::Zero(m, d);
      for (std::size_t j = 0; j < members; ++j)
        out.y[i * members + j] = run_driver(i, j, out.y[(i + 1) * members + j], dE, a0, r_zero);
      continue;
    }

    const Regression reg(state, i * members, members, config.basis_degree, config.ridge, i);
    const auto M = static_cast<Eigen::Index>(members);
    Eigen::MatrixXd next(M, m);
    for (Eigen::Index j = 0; j < M; ++j) next.row(j) = out.y[(i + 1) * members + static_cast<std::size_t>(j)].transpose();
    const Eigen::MatrixXd fitted = reg.fit(next);
    const Eigen::MatrixXd residual = next - fitted;

    const Eigen::Index cols = static_cast<Eigen::Index>(m) * (d + L);
    Eigen::MatrixXd weighted(M, cols);
    Eigen::VectorXd zc(L);
    for (Eigen::Index j = 0; j < M; ++j) {
      const MemberNoise& noise = ensemble.members[static_cast<std::size_t>(j)];
      zc = -intensity * dE * psi_mean;
      for (std::size_t e = noise.jump_offsets[i]; e < noise.jump_offsets[i + 1]; ++e)
        for (int l = 0; l < L; ++l) zc(l) += legendre(l, noise.marks[e] / c);
      for (int row = 0; row < m; ++row) {
        for (int q = 0; q < d; ++q)
          weighted(j, row * d + q) = residual(j, row) * noise.dB[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(q)] / dE;
        for (int l = 0; l < L; ++l)
          weighted(j, static_cast<Eigen::Index>(m) * d + row * L + l) = residual(j, row) * zc(l) / (intensity * dE);
      }
    }
    const Eigen::MatrixXd integrands = reg.fit(weighted);

    Eigen::MatrixXd coef(m, L), r(m, K);
    for (std::size_t j = 0; j < members; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      Mat a(m, d);
      for (int row = 0; row < m; ++row) {
        for (int q = 0; q < d; ++q) a(row, q) = integrands(jj, row * d + q);
        for (int l = 0; l < L; ++l) coef(row, l) = integrands(jj, static_cast<Eigen::Index>(m) * d + row * L + l);
      }
      r.noalias() = coef * to_nodes;
      out.a[i * members + j] = a;
      std::copy_n(r.data(), block, out.r.begin() + static_cast<std::ptrdiff_t>((i * members + j) * block));
      const Vec yhat = fitted.row(jj).transpose();
      out.y[i * members + j] = run_driver(i, j, yhat, dE, a, r);
    }
  }
  return out;
}

void solve_backward(const ModelSpec& model, const ConditionalEnsemble& ensemble, const SolverConfig& config,
                    EnsembleSolution& solution, const std::vector<Vec>* regression_state) {
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::size_t members = solution.members;
  const std::size_t steps = solution.steps();
  const Clock& clock = solution.clock;
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(rule.weights.data(), static_cast<Eigen::Index>(rule.size()));

  BackwardProblem problem;
  problem.dim = model.dims.m;
  problem.deterministic = model.flags.backward_deterministic;
  for (std::size_t j = 0; j < members; ++j) problem.terminal.push_back(model.phi(solution.x[steps * members + j]));
  problem.driver = [&](std::size_t i, std::size_t j, const Vec& y, const Mat& a,
                       const Eigen::Ref<const Eigen::MatrixXd>& r) -> Vec {
    const ClockStep s = clock.step(i);
    const Vec& x = solution.x[i * members + j];
    const Vec& v = solution.v[i * members + j];
    if (!model.flags.generator_uses_r) {
      const Vec r_mean = r * w;
      return lambda * model.g(s.t1, s.t2, x, y, a, r_mean, v);
    }
    Vec sum = Vec::Zero(model.dims.m);
    for (Eigen::Index k = 0; k < r.cols(); ++k) {
      const Vec rk = r.col(k);
      sum += w(k) * model.g(s.t1, s.t2, x, y, a, rk, v);
    }
    return lambda * sum;
  };
  BackwardPaths paths =
      solve_backward(problem, ensemble, regression_state ? *regression_state : solution.x, rule, lambda, config);
  solution.y = std::move(paths.y);
  solution.a = std::move(paths.a);
  solution.r = std::move(paths.r);
  solution.has_backward = true;
}

EnsembleSolution solve_ensemble(const ModelSpec& model, const ControlProcess& control,
                                const ConditionalEnsemble& ensemble, const SolverConfig& config, bool backward,
                                const std::vector<Vec>* regression_state) {
  EnsembleSolution solution;
  solve_forward(model, control, ensemble, config, solution);
  if (backward) solve_backward(model, ensemble, config, solution, regression_state);
  return solution;
}

double member_cost(const ModelSpec& model, const EnsembleSolution& solution, std::size_t j) {
  require(solution.has_backward, "cost needs the backward solution");
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::size_t members = solution.members;
  const std::size_t steps = solution.steps();
  double running = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const ClockStep s = solution.clock.step(i);
    if (s.dE == 0.0) continue;
    const std::size_t at = i * members + j;
    const auto r = solution.r_nodes(i, j);
    double integral = 0.0;
    if (!model.flags.cost_uses_r) {
      Vec r_mean = Vec::Zero(model.dims.m);
      for (std::size_t k = 0; k < rule.size(); ++k) r_mean += rule.weights[k] * r.col(static_cast<Eigen::Index>(k));
      integral = model.l(s.t1, s.t2, solution.x[at], solution.y[at], solution.a[at], r_mean, solution.v[at]);
    } else {
      for (std::size_t k = 0; k < rule.size(); ++k) {
        const Vec rk = r.col(static_cast<Eigen::Index>(k));
        integral += rule.weights[k] * model.l(s.t1, s.t2, solution.x[at], solution.y[at], solution.a[at], rk, solution.v[at]);
      }
    }
    running += s.dE * lambda * integral;
  }
  const double total = running + model.h(solution.x[steps * members + j]) + model.gamma(solution.y[j]);
  require(std::isfinite(total), "non-finite cost");
  return total;
}

double path_cost(const ModelSpec& model, const EnsembleSolution& solution) {
  double sum = 0.0;
  for (std::size_t j = 0; j < solution.members; ++j) sum += member_cost(model, solution, j);
  return sum / static_cast<double>(solution.members);
}

FBSDESolution member_view(const EnsembleSolution& solution, std::size_t j) {
  FBSDESolution out;
  out.clock = solution.clock.kind;
  out.grid = solution.clock.grid;
  out.t1 = solution.clock.t1;
  out.t2 = solution.clock.t2;
  out.nodes = solution.nodes;
  out.has_backward = solution.has_backward;
  const std::size_t steps = solution.steps();
  const std::size_t block = static_cast<std::size_t>(solution.dims.m) * solution.nodes;
  for (std::size_t i = 0; i <= steps; ++i) {
    out.x.push_back(solution.x[i * solution.members + j]);
    if (solution.has_backward) out.y.push_back(solution.y[i * solution.members + j]);
    if (i == steps) break;
    out.v.push_back(solution.v[i * solution.members + j]);
    if (solution.has_backward) {
      out.a.push_back(solution.a[i * solution.members + j]);
      const auto begin = solution.r.begin() + static_cast<std::ptrdiff_t>((i * solution.members + j) * block);
      out.r.insert(out.r.end(), begin, begin + static_cast<std::ptrdiff_t>(block));
    }
  }
  return out;
}

namespace {

std::size_t members_for(const ModelSpec& model, const SolverConfig& config) {
  return model.flags.backward_deterministic ? 1 : config.inner_paths;
}

void check_bundle(const ModelSpec& model, const PathBundle& bundle) {
  require(bundle.spec.brownian_dim == model.dims.d, "bundle Brownian dimension does not match the model");
  require(bundle.spec.jumps.intensity == model.jumps.intensity && bundle.spec.jumps.c == model.jumps.c &&
              bundle.spec.jumps.mark_law == model.jumps.mark_law,
          "bundle jump law does not match the model");
}

}  // namespace

FBSDESolution solve_forward_dual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                 const SolverConfig& config) {
  check_bundle(model, bundle);
  const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, 1));
  EnsembleSolution solution;
  solve_forward(model, control, ens, config, solution);
  return member_view(solution, 0);
}

FBSDESolution solve_backward_dual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                  const FBSDESolution& forward, const SolverConfig& config) {
  check_bundle(model, bundle);
  const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, members_for(model, config)));
  EnsembleSolution solution;
  solve_forward(model, control, ens, config, solution);
  require(forward.x.size() == solution.steps() + 1, "forward solution does not belong to this bundle");
  for (std::size_t i = 0; i < forward.x.size(); ++i)
    require(forward.x[i] == solution.x[i * solution.members], "forward solution does not belong to this bundle");
  solve_backward(model, ens, config, solution);
  return member_view(solution, 0);
}

FBSDESolution compose_duality(const FBSDESolution& dual, const InversePath& inverse) {
  require(dual.clock == ClockKind::kOperational, "compose_duality expects an operational-time solution");
  const std::size_t steps = dual.steps();
  const std::size_t block = dual.has_backward ? dual.r.size() / std::max<std::size_t>(1, steps) : 0;
  FBSDESolution out;
  out.clock = ClockKind::kCalendar;
  out.grid = inverse.calendar_grid;
  out.nodes = dual.nodes;
  out.has_backward = dual.has_backward;
  for (std::size_t k = 0; k < inverse.indices.size(); ++k) {
    const std::size_t i = inverse.indices[k];
    require(i <= steps, "horizon mismatch: E(t) beyond the dual solution");
    out.t1.push_back(dual.t1[i]);
    out.t2.push_back(dual.t2[i]);
    out.x.push_back(dual.x[i]);
    if (dual.has_backward) out.y.push_back(dual.y[i]);
    if (k + 1 == inverse.indices.size()) break;
    const std::size_t si = std::min(i, steps - 1);
    out.v.push_back(dual.v[si]);
    if (dual.has_backward) {
      if (i < steps) {
        out.a.push_back(dual.a[i]);
        out.r.insert(out.r.end(), dual.r.begin() + static_cast<std::ptrdiff_t>(i * block),
                     dual.r.begin() + static_cast<std::ptrdiff_t>((i + 1) * block));
      } else {
        out.a.push_back(Mat::Zero(dual.a.front().rows(), dual.a.front().cols()));
        out.r.insert(out.r.end(), block, 0.0);
      }
    }
  }
  return out;
}

CostEstimate summarize(std::vector<double> per_path) {
  require(!per_path.empty(), "empty ensemble");
  CostEstimate est;
  const auto n = static_cast<double>(per_path.size());
  double sum = 0.0;
  for (const double c : per_path) sum += c;
  est.mean = sum / n;
  if (per_path.size() > 1) {
    double ss = 0.0;
    for (const double c : per_path) ss += (c - est.mean) * (c - est.mean);
    est.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  est.per_path = std::move(per_path);
  return est;
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  const auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      run(i);
      if (errors[i]) break;
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, count); ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw Error("path " + std::to_string(i) + ": " + e.what());
    }
  }
}

std::vector<CostEstimate> evaluate_costs(const ModelSpec& model, std::span<const ControlPolicy> policies,
                                         const EnsemblePlan& plan, const SolverConfig& config) {
  require(plan.size >= 1, "ensemble must be nonempty");
  std::vector<std::vector<double>> costs(policies.size(), std::vector<double>(plan.size));
  parallel_for(plan.size, config.threads, [&](std::size_t i) {
    const PathBundle bundle = plan.bundle(i);
    check_bundle(model, bundle);
    const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, members_for(model, config)));
    for (std::size_t p = 0; p < policies.size(); ++p) {
      const EnsembleSolution sol = solve_ensemble(model, policies[p](bundle), ens, config);
      costs[p][i] = path_cost(model, sol);
    }
  });
  std::vector<CostEstimate> out;
  for (auto& c : costs) out.push_back(summarize(std::move(c)));
  return out;
}

CostEstimate evaluate_cost(const ModelSpec& model, const ControlPolicy& policy, const EnsemblePlan& plan,
                           const SolverConfig& config) {
  return evaluate_costs(model, std::span<const ControlPolicy>(&policy, 1), plan, config).front();
}

CostEstimate evaluate_cost(const ModelSpec& model, const ControlPolicy& policy, const std::vector<PathBundle>& bundles,
                           const SolverConfig& config) {
  require(!bundles.empty(), "ensemble must be nonempty");
  std::vector<double> costs(bundles.size());
  parallel_for(bundles.size(), config.threads, [&](std::size_t i) {
    check_bundle(model, bundles[i]);
    const ConditionalEnsemble ens =
        operational_ensemble(bundles[i], sample_members(bundles[i], members_for(model, config)));
    costs[i] = path_cost(model, solve_ensemble(model, policy(bundles[i]), ens, config));
  });
  return summarize(std::move(costs));
}

BundleSpec bundle_spec_for(const ModelSpec& model, const SubordinatorSpec& subordinator, double horizon, double du) {
  BundleSpec spec;
  spec.subordinator = subordinator;
  spec.jumps = model.jumps;
  spec.horizon = horizon;
  spec.du = du;
  spec.brownian_dim = model.dims.d;
  return spec;
}

DualityResult duality_round_trip(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                 const SolverConfig& config, bool inject_fault) {
  check_bundle(model, bundle);
  const std::vector<MemberDrivers> drivers = sample_members(bundle, members_for(model, config));
  const ConditionalEnsemble dual_ens = operational_ensemble(bundle, drivers);
  const ConditionalEnsemble cal_ens = calendar_ensemble(bundle, drivers, bundle.inverse);
  const EnsembleSolution dual = solve_ensemble(model, control, dual_ens, config);

  ModelSpec calendar_model = model;
  if (inject_fault) {
    const DriftFn f = model.f;
    calendar_model.f = [f](double t1, double t2, const Vec& x, const Vec& v) -> Vec { return -f(t1, t2, x, v); };
  }
  const EnsembleSolution cal = solve_ensemble(calendar_model, control, cal_ens, config);

  DualityResult result;
  const std::size_t members = dual.members;
  const std::size_t n_dual = dual.steps();
  const std::size_t block = static_cast<std::size_t>(model.dims.m) * dual.nodes;
  const auto gap = [](const auto& a, const auto& b) { return (a - b).cwiseAbs().maxCoeff(); };
  for (std::size_t k = 0; k < cal.clock.grid.size(); ++k) {
    const std::size_t i = cal.clock.op_index[k];
    for (std::size_t j = 0; j < members; ++j) {
      result.forward = std::max(result.forward, gap(cal.x[k * members + j], dual.x[i * members + j]));
      result.backward = std::max(result.backward, gap(cal.y[k * members + j], dual.y[i * members + j]));
      if (k + 1 == cal.clock.grid.size()) continue;
      const Mat& a_cal = cal.a[k * members + j];
      const Mat a_dual = i < n_dual ? dual.a[i * members + j] : Mat::Zero(a_cal.rows(), a_cal.cols());
      result.backward = std::max(result.backward, gap(a_cal, a_dual));
      for (std::size_t q = 0; q < block; ++q) {
        const double rc = cal.r[(k * members + j) * block + q];
        const double rd = i < n_dual ? dual.r[(i * members + j) * block + q] : 0.0;
        result.backward = std::max(result.backward, std::abs(rc - rd));
      }
    }
  }
  // Reverse direction: X*_u = X_{D(u-)}, read from the calendar solution at t = D(u_{i-1}).
  const std::vector<double>& t = cal.clock.grid;
  for (std::size_t i = 0; i <= n_dual; ++i) {
    std::size_t k = 0;
    if (i == 1) {
      k = 1;
    } else if (i >= 2) {
      const double target = bundle.subordinator.values[i - 1];
      const auto it = std::lower_bound(t.begin(), t.end(), target);
      if (it == t.end() || *it != target) continue;
      k = static_cast<std::size_t>(it - t.begin());
    }
    if (k >= t.size()) continue;
    for (std::size_t j = 0; j < members; ++j) {
      result.reverse = std::max(result.reverse, gap(cal.x[k * members + j], dual.x[i * members + j]));
      result.reverse = std::max(result.reverse, gap(cal.y[k * members + j], dual.y[i * members + j]));
    }
  }
  return result;
}

double gronwall_ratio(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle, const Vec& delta,
                      const SolverConfig& config) {
  require(delta.size() == model.dims.n && delta.norm() > 0.0, "perturbation must be a nonzero n-vector");
  const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, 1));
  EnsembleSolution base, bumped;
  solve_forward(model, control, ens, config, base);
  ModelSpec shifted = model;
  shifted.x0 = model.x0 + delta;
  solve_forward(shifted, control, ens, config, bumped);
  const double L = model.lipschitz;
  const double C = 2.0 * L + L * L + model.jumps.intensity * L * L;
  double worst = 0.0;
  for (std::size_t i = 0; i < base.x.size(); ++i) {
    const double bound = delta.squaredNorm() * std::exp(C * ens.clock.t2[i]);
    worst = std::max(worst, (bumped.x[i] - base.x[i]).squaredNorm() / bound);
  }
  return worst;
}

std::vector<double> ito_decomposition_check(const ModelSpec& model, const ScalarField& F, const EnsembleSolution& solution,
                                            const ConditionalEnsemble& ensemble, std::size_t member) {
  require(static_cast<bool>(F.value), "scalar field needs a value");
  require(member < solution.members && member < ensemble.members.size(), "Ito check member out of range");
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const Clock& clock = solution.clock;
  const std::size_t members = solution.members;
  const int n = model.dims.n;
  const auto d = static_cast<std::size_t>(model.dims.d);
  const MemberNoise& noise = ensemble.members[member];
  const std::vector<double>& tF = clock.kind == ClockKind::kCalendar ? clock.grid : clock.t1;

  const auto d_t1 = [&](double t1, double t2, const Vec& x) {
    if (F.d_t1) return F.d_t1(t1, t2, x);
    const double h = fd_step(t1);
    return (F.value(t1 + h, t2, x) - F.value(t1 - h, t2, x)) / (2.0 * h);
  };
  const auto d_t2 = [&](double t1, double t2, const Vec& x) {
    if (F.d_t2) return F.d_t2(t1, t2, x);
    const double h = fd_step(t2);
    return (F.value(t1, t2 + h, x) - F.value(t1, t2 - h, x)) / (2.0 * h);
  };
  const auto grad = [&](double t1, double t2, const Vec& x) -> Vec {
    if (F.grad_x) return F.grad_x(t1, t2, x);
    return gradient([&](const Vec& z) { return F.value(t1, t2, z); }, x);
  };
  const auto hess = [&](double t1, double t2, const Vec& x) -> Mat {
    if (F.hess_x) return F.hess_x(t1, t2, x);
    Mat H(n, n);
    Vec p = x;
    const double f0 = F.value(t1, t2, x);
    for (int a = 0; a < n; ++a) {
      const double ha = 1e-4 * (1.0 + std::abs(x(a)));
      for (int b = 0; b < n; ++b) {
        const double hb = 1e-4 * (1.0 + std::abs(x(b)));
        if (a == b) {
          p(a) = x(a) + ha;
          const double fp = F.value(t1, t2, p);
          p(a) = x(a) - ha;
          const double fm = F.value(t1, t2, p);
          p(a) = x(a);
          H(a, a) = (fp - 2.0 * f0 + fm) / (ha * ha);
        } else {
          double acc = 0.0;
          for (int sa = -1; sa <= 1; sa += 2)
            for (int sb = -1; sb <= 1; sb += 2) {
              p(a) = x(a) + sa * ha;
              p(b) = x(b) + sb * hb;
              acc += sa * sb * F.value(t1, t2, p);
              p(a) = x(a);
              p(b) = x(b);
            }
          H(a, b) = acc / (4.0 * ha * hb);
        }
      }
    }
    return H;
  };

  std::vector<double> residual(clock.grid.size(), 0.0);
  Vec dB(model.dims.d);
  for (std::size_t k = 0; k < clock.steps(); ++k) {
    const ClockStep s = clock.step(k);
    const Vec& x = solution.x[k * members + member];
    const Vec& x_next = solution.x[(k + 1) * members + member];
    const Vec& v = solution.v[k * members + member];
    const double t = tF[k];
    const double f0 = F.value(t, s.t2, x);
    const double change = F.value(tF[k + 1], clock.t2[k + 1], x_next) - f0;

    const Vec fx = grad(t, s.t2, x);
    const Mat sig = model.sigma(s.t1, s.t2, x, v);
    const Mat Fxx = hess(t, s.t2, x);
    double jump_l2 = 0.0, jump_comp = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Vec bz = model.b(s.t1, s.t2, x, v, rule.nodes[q]);
      const double jumpF = F.value(t, s.t2, Vec(x + bz)) - f0;
      jump_l2 += rule.weights[q] * (jumpF - fx.dot(bz));
      jump_comp += rule.weights[q] * jumpF;
    }
    const double L2F = d_t2(t, s.t2, x) + fx.dot(model.f(s.t1, s.t2, x, v)) +
                       0.5 * (sig * sig.transpose() * Fxx).trace() + lambda * jump_l2;
    for (std::size_t q = 0; q < d; ++q) dB(static_cast<Eigen::Index>(q)) = noise.dB[k * d + q];
    double events = 0.0;
    for (std::size_t e = noise.jump_offsets[k]; e < noise.jump_offsets[k + 1]; ++e)
      events += F.value(t, s.t2, Vec(x + model.b(s.t1, s.t2, x, v, noise.marks[e]))) - f0;
    const double rhs = d_t1(t, s.t2, x) * (tF[k + 1] - t) + L2F * s.dE + fx.dot(sig * dB) + events -
                       s.dE * lambda * jump_comp;
    require(std::isfinite(rhs), "non-finite derivative values in the Ito check at step " + std::to_string(k));
    residual[k + 1] = residual[k] + (change - rhs);
  }
  return residual;
}

double ito_terminal_residual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                             const ScalarField& F, const SolverConfig& config, std::size_t members) {
  return ito_terminal_residual(model, control, bundle, sample_members(bundle, members), F, config);
}

double ito_terminal_residual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                             const std::vector<MemberDrivers>& drivers, const ScalarField& F, const SolverConfig& config) {
  check_bundle(model, bundle);
  require(!drivers.empty(), "Ito residual needs at least one member");
  const ConditionalEnsemble ens = operational_ensemble(bundle, drivers);
  EnsembleSolution sol;
  solve_forward(model, control, ens, config, sol);
  double total = 0.0;
  for (std::size_t m = 0; m < drivers.size(); ++m) total += ito_decomposition_check(model, F, sol, ens, m).back();
  return total / static_cast<double>(drivers.size());
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "KS test needs two nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    dmax = std::max(dmax, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  const double lam = (en + 0.12 + 0.11 / en) * dmax;
  double p = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = sign * 2.0 * std::exp(-2.0 * k * k * lam * lam);
    p += term;
    if (std::abs(term) < 1e-12) break;
    sign = -sign;
  }
  if (lam < 1e-3) p = 1.0;
  return {dmax, std::clamp(p, 0.0, 1.0)};
}

}  // namespace tcfbsde
