#include "tcfbsde/smp.hpp"

#include <algorithm>
#include <cmath>

#include "tcfbsde/format.hpp"

namespace tcfbsde {

namespace {

Vec col_vec(const Eigen::Ref<const Eigen::MatrixXd>& m, Eigen::Index c) { return m.col(c); }

Vec mark_mean(const Eigen::Ref<const Eigen::MatrixXd>& nodes, const MarkQuadrature& rule) {
  Vec out = Vec::Zero(nodes.rows());
  for (std::size_t k = 0; k < rule.size(); ++k) out += rule.weights[k] * nodes.col(static_cast<Eigen::Index>(k));
  return out;
}

/// Piecewise-linear interpolation of node values at mark z (flat outside).
Vec interpolate_nodes(const Eigen::Ref<const Eigen::MatrixXd>& nodes, const MarkQuadrature& rule, double z) {
  const auto& zs = rule.nodes;
  if (z <= zs.front()) return nodes.col(0);
  if (z >= zs.back()) return nodes.col(static_cast<Eigen::Index>(zs.size() - 1));
  const auto it = std::upper_bound(zs.begin(), zs.end(), z);
  const auto hi = static_cast<Eigen::Index>(it - zs.begin());
  const double w = (z - zs[static_cast<std::size_t>(hi - 1)]) / (zs[static_cast<std::size_t>(hi)] - zs[static_cast<std::size_t>(hi - 1)]);
  return (1.0 - w) * nodes.col(hi - 1) + w * nodes.col(hi);
}

}  // namespace

double hamiltonian(const ModelSpec& model, const MarkQuadrature& rule, const HamiltonianPoint& pt) {
  const Dims& dm = model.dims;
  const auto K = static_cast<Eigen::Index>(rule.size());
  require(pt.x.size() == dm.n && pt.y.size() == dm.m && pt.v.size() == dm.k && pt.p.size() == dm.m &&
              pt.q.size() == dm.n && pt.a.rows() == dm.m && pt.a.cols() == dm.d && pt.k.rows() == dm.n &&
              pt.k.cols() == dm.d && pt.r.rows() == dm.m && pt.r.cols() == K && pt.R.rows() == dm.n &&
              pt.R.cols() == K,
          "Hamiltonian arguments do not match the model dimensions");
  const double lambda = model.jumps.intensity;
  double value = pt.q.dot(model.f(pt.t1, pt.t2, pt.x, pt.v));
  value += pt.k.cwiseProduct(model.sigma(pt.t1, pt.t2, pt.x, pt.v)).sum();
  double integral = 0.0;
  if (!model.flags.generator_uses_r) {
    const Vec r_mean = mark_mean(pt.r, rule);
    integral += pt.p.dot(model.g(pt.t1, pt.t2, pt.x, pt.y, pt.a, r_mean, pt.v));
  }
  if (!model.flags.cost_uses_r) {
    const Vec r_mean = mark_mean(pt.r, rule);
    integral -= model.l(pt.t1, pt.t2, pt.x, pt.y, pt.a, r_mean, pt.v);
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    const double w = rule.weights[static_cast<std::size_t>(k)];
    const double z = rule.nodes[static_cast<std::size_t>(k)];
    const Vec rk = col_vec(pt.r, k);
    double term = -pt.R.col(k).dot(model.b(pt.t1, pt.t2, pt.x, pt.v, z));
    if (model.flags.generator_uses_r) term += pt.p.dot(model.g(pt.t1, pt.t2, pt.x, pt.y, pt.a, rk, pt.v));
    if (model.flags.cost_uses_r) term -= model.l(pt.t1, pt.t2, pt.x, pt.y, pt.a, rk, pt.v);
    integral += w * term;
  }
  return value - lambda * integral;
}

Vec hamiltonian_grad_v(const ModelSpec& model, const MarkQuadrature& rule, const HamiltonianPoint& pt,
                       bool allow_closed_form) {
  if (allow_closed_form && model.hamiltonian_grad_v) return model.hamiltonian_grad_v(pt);
  Vec out(model.dims.k);
  HamiltonianPoint probe = pt;
  const double base = hamiltonian(model, rule, pt);
  for (int c = 0; c < model.dims.k; ++c) {
    const double h = fd_step(pt.v(c));
    probe.v = pt.v;
    probe.v(c) = pt.v(c) + h;
    const bool up = model.control_set.contains(probe.v);
    const double plus = up ? hamiltonian(model, rule, probe) : 0.0;
    probe.v(c) = pt.v(c) - h;
    const bool down = model.control_set.contains(probe.v);
    const double minus = down ? hamiltonian(model, rule, probe) : 0.0;
    require(up || down, "finite-difference stencil leaves the control set in both directions");
    if (up && down) out(c) = (plus - minus) / (2.0 * h);
    else if (up) out(c) = (plus - base) / h;
    else out(c) = (base - minus) / h;
  }
  return out;
}

Eigen::Map<const Eigen::MatrixXd> AdjointEnsemble::R_nodes(std::size_t i, std::size_t j) const {
  const auto n = static_cast<std::size_t>(dims.n);
  return {R.data() + (i * members + j) * n * nodes, dims.n, static_cast<Eigen::Index>(nodes)};
}

AdjointSolution adjoint_view(const AdjointEnsemble& adj, std::size_t j) {
  AdjointSolution out;
  out.clock = adj.clock.kind;
  out.grid = adj.clock.grid;
  out.t1 = adj.clock.t1;
  out.t2 = adj.clock.t2;
  out.nodes = adj.nodes;
  const std::size_t block = static_cast<std::size_t>(adj.dims.n) * adj.nodes;
  for (std::size_t i = 0; i <= adj.steps(); ++i) {
    out.p.push_back(adj.p[i * adj.members + j]);
    out.q.push_back(adj.q[i * adj.members + j]);
    if (i == adj.steps()) break;
    out.k.push_back(adj.k[i * adj.members + j]);
    const auto begin = adj.R.begin() + static_cast<std::ptrdiff_t>((i * adj.members + j) * block);
    out.R.insert(out.R.end(), begin, begin + static_cast<std::ptrdiff_t>(block));
  }
  return out;
}

AdjointEnsemble broadcast(const AdjointSolution& adj, const Dims& dims, std::size_t members) {
  AdjointEnsemble out;
  out.clock.kind = adj.clock;
  out.clock.grid = adj.grid;
  out.clock.t1 = adj.t1;
  out.clock.t2 = adj.t2;
  out.members = members;
  out.dims = dims;
  out.nodes = adj.nodes;
  const std::size_t steps = adj.grid.size() - 1;
  const std::size_t block = static_cast<std::size_t>(dims.n) * adj.nodes;
  for (std::size_t i = 0; i <= steps; ++i)
    for (std::size_t j = 0; j < members; ++j) {
      out.p.push_back(adj.p[i]);
      out.q.push_back(adj.q[i]);
      if (i == steps) continue;
      out.k.push_back(adj.k[i]);
      out.R.insert(out.R.end(), adj.R.begin() + static_cast<std::ptrdiff_t>(i * block),
                   adj.R.begin() + static_cast<std::ptrdiff_t>((i + 1) * block));
    }
  return out;
}

Linearization::Linearization(const ModelSpec& model, const EnsembleSolution& solution)
    : model_(model),
      solution_(solution),
      rule_(model.jumps.quadrature()),
      members_(solution.members),
      n_(model.dims.n),
      m_(model.dims.m),
      d_(model.dims.d),
      k_(model.dims.k),
      has_bx_(!model.flags.additive_noise) {
  require(solution.has_backward, "linearization needs the backward solution");
  const std::size_t steps = solution.steps();
  const std::size_t K = rule_.size();
  const bool g_nodes = model.flags.generator_uses_r;
  const bool l_nodes = model.flags.cost_uses_r;
  g_weights_ = g_nodes ? rule_.weights : std::vector<double>{1.0};
  l_weights_ = l_nodes ? rule_.weights : std::vector<double>{1.0};

  int at = 0;
  const auto take = [&at](int size) {
    const int here = at;
    at += size;
    return here;
  };
  off_.fx = take(n_ * n_);
  off_.fv = take(n_ * k_);
  off_.jx = take(n_ * n_);
  off_.jv = take(n_ * k_);
  off_.sx = take(d_ * n_ * n_);
  off_.sv = take(d_ * n_ * k_);
  off_.bx = take(has_bx_ ? static_cast<int>(K) * n_ * n_ : 0);
  off_.gx = 0;
  off_.gy = off_.gx + m_ * n_;
  off_.gr = off_.gy + m_ * m_;
  off_.gv = off_.gr + m_ * m_;
  off_.ga = off_.gv + m_ * k_;
  off_.g_stride = off_.ga + d_ * m_ * m_;
  off_.g = take(static_cast<int>(g_weights_.size()) * off_.g_stride);
  off_.lx = 0;
  off_.ly = off_.lx + n_;
  off_.lr = off_.ly + m_;
  off_.lv = off_.lr + m_;
  off_.la = off_.lv + k_;
  off_.l_stride = off_.la + d_ * m_;
  off_.l = take(static_cast<int>(l_weights_.size()) * off_.l_stride);
  off_.total = at;
  data_.assign(steps * members_ * static_cast<std::size_t>(off_.total), 0.0);

  for (std::size_t i = 0; i < steps; ++i) {
    const ClockStep s = solution.clock.step(i);
    if (s.dE == 0.0) continue;
    for (std::size_t j = 0; j < members_; ++j) {
      double* base = data_.data() + (i * members_ + j) * static_cast<std::size_t>(off_.total);
      const auto put = [base](int offset, const auto& value) {
        Eigen::Map<Eigen::MatrixXd>(base + offset, value.rows(), value.cols()) = value;
      };
      const std::size_t pt = i * members_ + j;
      const Vec& x = solution.x[pt];
      const Vec& v = solution.v[pt];
      const Vec& y = solution.y[pt];
      const Mat& a = solution.a[pt];
      const auto r = solution.r_nodes(i, j);
      const double t1 = s.t1, t2 = s.t2;

      put(off_.fx, jacobian([&](const Vec& z) { return model.f(t1, t2, z, v); }, x));
      put(off_.fv, jacobian([&](const Vec& w) { return model.f(t1, t2, x, w); }, v));
      put(off_.jx, jacobian([&](const Vec& z) { return jump_mean(model, rule_, t1, t2, z, v); }, x));
      put(off_.jv, jacobian([&](const Vec& w) { return jump_mean(model, rule_, t1, t2, x, w); }, v));
      for (int q = 0; q < d_; ++q) {
        if (!model.flags.additive_noise)
          put(off_.sx + q * n_ * n_, jacobian([&](const Vec& z) -> Vec { return model.sigma(t1, t2, z, v).col(q); }, x));
        put(off_.sv + q * n_ * k_, jacobian([&](const Vec& w) -> Vec { return model.sigma(t1, t2, x, w).col(q); }, v));
      }
      if (has_bx_)
        for (std::size_t k = 0; k < K; ++k)
          put(off_.bx + static_cast<int>(k) * n_ * n_,
              jacobian([&](const Vec& z) { return model.b(t1, t2, z, v, rule_.nodes[k]); }, x));

      const Vec r_mean = mark_mean(r, rule_);
      for (std::size_t c = 0; c < g_weights_.size(); ++c) {
        const Vec rc = g_nodes ? Vec(r.col(static_cast<Eigen::Index>(c))) : r_mean;
        put(goff(c, off_.gx), jacobian([&](const Vec& z) { return model.g(t1, t2, z, y, a, rc, v); }, x));
        put(goff(c, off_.gy), jacobian([&](const Vec& z) { return model.g(t1, t2, x, z, a, rc, v); }, y));
        put(goff(c, off_.gr), jacobian([&](const Vec& z) { return model.g(t1, t2, x, y, a, z, v); }, rc));
        put(goff(c, off_.gv), jacobian([&](const Vec& w) { return model.g(t1, t2, x, y, a, rc, w); }, v));
        for (int q = 0; q < d_; ++q)
          put(goff(c, off_.ga) + q * m_ * m_, jacobian(
                                                  [&](const Vec& col) {
                                                    Mat aa = a;
                                                    aa.col(q) = col;
                                                    return model.g(t1, t2, x, y, aa, rc, v);
                                                  },
                                                  Vec(a.col(q))));
      }
      for (std::size_t c = 0; c < l_weights_.size(); ++c) {
        const Vec rc = l_nodes ? Vec(r.col(static_cast<Eigen::Index>(c))) : r_mean;
        put(loff(c, off_.lx), gradient([&](const Vec& z) { return model.l(t1, t2, z, y, a, rc, v); }, x));
        put(loff(c, off_.ly), gradient([&](const Vec& z) { return model.l(t1, t2, x, z, a, rc, v); }, y));
        put(loff(c, off_.lr), gradient([&](const Vec& z) { return model.l(t1, t2, x, y, a, z, v); }, rc));
        put(loff(c, off_.lv), gradient([&](const Vec& w) { return model.l(t1, t2, x, y, a, rc, w); }, v));
        for (int q = 0; q < d_; ++q)
          put(loff(c, off_.la) + q * m_, gradient(
                                             [&](const Vec& col) {
                                               Mat aa = a;
                                               aa.col(q) = col;
                                               return model.l(t1, t2, x, y, aa, rc, v);
                                             },
                                             Vec(a.col(q))));
      }
    }
  }
}

std::pair<Mat, Mat> Linearization::jump_derivatives(std::size_t i, std::size_t j, double z) const {
  const ClockStep s = solution_.clock.step(i);
  const std::size_t at = i * members_ + j;
  const Vec& x = solution_.x[at];
  const Vec& v = solution_.v[at];
  Mat bx = model_.flags.additive_noise
               ? Mat(Mat::Zero(model_.dims.n, model_.dims.n))
               : jacobian([&](const Vec& y) { return model_.b(s.t1, s.t2, y, v, z); }, x);
  Mat bv = jacobian([&](const Vec& w) { return model_.b(s.t1, s.t2, x, w, z); }, v);
  return {bx, bv};
}

std::pair<Mat, Vec> Linearization::event_r_derivatives(std::size_t i, std::size_t j, double z) const {
  const bool g_nodes = model_.flags.generator_uses_r;
  const bool l_nodes = model_.flags.cost_uses_r;
  if (!g_nodes && !l_nodes) return {Mat(gr(i, j, 0)), Vec(lr(i, j, 0))};
  const ClockStep s = solution_.clock.step(i);
  const std::size_t pt = i * members_ + j;
  const Vec& x = solution_.x[pt];
  const Vec& v = solution_.v[pt];
  const Vec& y = solution_.y[pt];
  const Mat& a = solution_.a[pt];
  const Vec re = interpolate_nodes(solution_.r_nodes(i, j), rule_, z);
  Mat g_r = g_nodes ? jacobian([&](const Vec& c) { return model_.g(s.t1, s.t2, x, y, a, c, v); }, re) : Mat(gr(i, j, 0));
  Vec l_r = l_nodes ? gradient([&](const Vec& c) { return model_.l(s.t1, s.t2, x, y, a, c, v); }, re) : Vec(lr(i, j, 0));
  return {g_r, l_r};
}

AdjointEnsemble solve_adjoint(const ModelSpec& model, const EnsembleSolution& sol, const ConditionalEnsemble& ens,
                              const Linearization& lin, const SolverConfig& config) {
  const Dims& dm = model.dims;
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::size_t steps = sol.steps();
  const std::size_t M = sol.members;
  const auto d = static_cast<std::size_t>(dm.d);
  const auto& wg = lin.generator_weights();
  const auto& wl = lin.cost_weights();

  AdjointEnsemble adj;
  adj.clock = sol.clock;
  adj.members = M;
  adj.dims = dm;
  adj.nodes = rule.size();
  adj.p.assign((steps + 1) * M, Vec());

  // p runs forward from -gamma_y(Y_0).
  for (std::size_t j = 0; j < M; ++j) {
    Vec p = -gradient(model.gamma, sol.y[j]);
    adj.p[j] = p;
    const MemberNoise& noise = ens.members[j];
    for (std::size_t i = 0; i < steps; ++i) {
      const double dE = sol.clock.step(i).dE;
      if (dE != 0.0) {
        Vec drift = Vec::Zero(dm.m), comp = Vec::Zero(dm.m);
        for (std::size_t k = 0; k < wg.size(); ++k) {
          drift += wg[k] * (lin.gy(i, j, k).transpose() * p);
          comp += wg[k] * (lin.gr(i, j, k).transpose() * p);
        }
        for (std::size_t k = 0; k < wl.size(); ++k) {
          drift -= wl[k] * lin.ly(i, j, k);
          comp -= wl[k] * lin.lr(i, j, k);
        }
        Vec next = p + lambda * dE * drift;
        for (std::size_t q = 0; q < d; ++q) {
          Vec diff = Vec::Zero(dm.m);
          for (std::size_t k = 0; k < wg.size(); ++k) diff += wg[k] * (lin.ga(i, j, k, static_cast<int>(q)).transpose() * p);
          for (std::size_t k = 0; k < wl.size(); ++k) diff -= wl[k] * lin.la(i, j, k, static_cast<int>(q));
          next += lambda * diff * noise.dB[i * d + q];
        }
        for (std::size_t e = noise.jump_offsets[i]; e < noise.jump_offsets[i + 1]; ++e) {
          const auto [gr, lr] = lin.event_r_derivatives(i, j, noise.marks[e]);
          next += gr.transpose() * p - lr;
        }
        next -= lambda * dE * comp;
        require(next.allFinite(), "adjoint p blow-up at step " + std::to_string(i));
        p = next;
      }
      adj.p[(i + 1) * M + j] = p;
    }
  }

  // q, k, R backward.
  BackwardProblem problem;
  problem.dim = dm.n;
  problem.deterministic = model.flags.adjoint_deterministic;
  for (std::size_t j = 0; j < M; ++j) {
    const Vec& xT = sol.x[steps * M + j];
    const Mat phi_x = jacobian(model.phi, xT);
    problem.terminal.push_back(-(phi_x.transpose() * adj.p[steps * M + j]) + gradient(model.h, xT));
  }
  problem.driver = [&](std::size_t i, std::size_t j, const Vec& q, const Mat& k,
                       const Eigen::Ref<const Eigen::MatrixXd>& R) -> Vec {
    const Vec& p = adj.p[i * M + j];
    Vec F = lin.fx(i, j).transpose() * q;
    for (std::size_t c = 0; c < wg.size(); ++c) F -= lambda * wg[c] * (lin.gx(i, j, c).transpose() * p);
    for (std::size_t c = 0; c < wl.size(); ++c) F += lambda * wl[c] * lin.lx(i, j, c);
    for (std::size_t c = 0; c < d; ++c) F += lin.sx(i, j, static_cast<int>(c)).transpose() * Vec(k.col(static_cast<Eigen::Index>(c)));
    if (lin.has_bx())
      for (std::size_t c = 0; c < rule.size(); ++c)
        F += lambda * rule.weights[c] * (lin.bx(i, j, c).transpose() * Vec(R.col(static_cast<Eigen::Index>(c))));
    return F;
  };
  BackwardPaths paths = solve_backward(problem, ens, sol.x, rule, lambda, config);
  adj.q = std::move(paths.y);
  adj.k = std::move(paths.a);
  adj.R = std::move(paths.r);
  return adj;
}

AdjointSolution solve_adjoint(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                              const SolverConfig& config) {
  const std::size_t members =
      model.flags.backward_deterministic && model.flags.adjoint_deterministic ? 1 : config.inner_paths;
  const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, members));
  const EnsembleSolution sol = solve_ensemble(model, control, ens, config);
  const Linearization lin(model, sol);
  return adjoint_view(solve_adjoint(model, sol, ens, lin, config), 0);
}

VariationalEnsemble solve_variational(const ModelSpec& model, const EnsembleSolution& base,
                                      const ConditionalEnsemble& ens, const Linearization& lin,
                                      const ControlProcess& direction, const SolverConfig& config) {
  const Dims& dm = model.dims;
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::size_t steps = base.steps();
  const std::size_t M = base.members;
  const auto d = static_cast<std::size_t>(dm.d);
  const auto& wg = lin.generator_weights();

  VariationalEnsemble var;
  var.x1.assign((steps + 1) * M, Vec());
  var.direction.assign(steps * M, Vec());
  for (std::size_t j = 0; j < M; ++j) {
    const MemberNoise& noise = ens.members[j];
    Vec x1 = Vec::Zero(dm.n);
    var.x1[j] = x1;
    for (std::size_t i = 0; i < steps; ++i) {
      const ClockStep s = base.clock.step(i);
      const Vec dir = direction(s.t1, s.t2, base.x[i * M + j]);
      require(dir.size() == dm.k, "direction has the wrong dimension");
      var.direction[i * M + j] = dir;
      if (s.dE != 0.0) {
        Vec next = x1 + (lin.fx(i, j) * x1 + lin.fv(i, j) * dir) * s.dE;
        for (std::size_t q = 0; q < d; ++q) next += (lin.sx(i, j, static_cast<int>(q)) * x1 + lin.sv(i, j, static_cast<int>(q)) * dir) * noise.dB[i * d + q];
        for (std::size_t e = noise.jump_offsets[i]; e < noise.jump_offsets[i + 1]; ++e) {
          const auto [bx, bv] = lin.jump_derivatives(i, j, noise.marks[e]);
          next += bx * x1 + bv * dir;
        }
        next -= lambda * s.dE * (lin.jx(i, j) * x1 + lin.jv(i, j) * dir);
        require(next.allFinite(), "variational blow-up at step " + std::to_string(i));
        x1 = next;
      }
      var.x1[(i + 1) * M + j] = x1;
    }
  }

  BackwardProblem problem;
  problem.dim = dm.m;
  problem.deterministic = model.flags.backward_deterministic;
  for (std::size_t j = 0; j < M; ++j) {
    const Vec& xT = base.x[steps * M + j];
    problem.terminal.push_back(jacobian(model.phi, xT) * var.x1[steps * M + j]);
  }
  problem.driver = [&](std::size_t i, std::size_t j, const Vec& y1, const Mat& a1,
                       const Eigen::Ref<const Eigen::MatrixXd>& r1) -> Vec {
    const Vec& x1 = var.x1[i * M + j];
    const Vec& dir = var.direction[i * M + j];
    const Vec r_mean = mark_mean(r1, rule);
    Vec sum = Vec::Zero(dm.m);
    for (std::size_t k = 0; k < wg.size(); ++k) {
      const Vec rk = model.flags.generator_uses_r ? Vec(r1.col(static_cast<Eigen::Index>(k))) : r_mean;
      Vec term = lin.gx(i, j, k) * x1 + lin.gy(i, j, k) * y1 + lin.gr(i, j, k) * rk + lin.gv(i, j, k) * dir;
      for (std::size_t q = 0; q < d; ++q) term += lin.ga(i, j, k, static_cast<int>(q)) * Vec(a1.col(static_cast<Eigen::Index>(q)));
      sum += wg[k] * term;
    }
    return lambda * sum;
  };
  BackwardPaths paths = solve_backward(problem, ens, base.x, rule, lambda, config);
  var.y1 = std::move(paths.y);
  var.a1 = std::move(paths.a);
  var.r1 = std::move(paths.r);
  return var;
}

double linearized_cost(const ModelSpec& model, const EnsembleSolution& base, const Linearization& lin,
                       const VariationalEnsemble& var, std::size_t j) {
  const Dims& dm = model.dims;
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::size_t steps = base.steps();
  const std::size_t M = base.members;
  const std::size_t block = static_cast<std::size_t>(dm.m) * rule.size();
  const auto& wl = lin.cost_weights();
  double running = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double dE = base.clock.step(i).dE;
    if (dE == 0.0) continue;
    const std::size_t at = i * M + j;
    const Eigen::Map<const Eigen::MatrixXd> r1(var.r1.data() + at * block, dm.m, static_cast<Eigen::Index>(rule.size()));
    const Vec r_mean = mark_mean(r1, rule);
    double integral = 0.0;
    for (std::size_t k = 0; k < wl.size(); ++k) {
      const Vec rk = model.flags.cost_uses_r ? Vec(r1.col(static_cast<Eigen::Index>(k))) : r_mean;
      double term = lin.lx(i, j, k).dot(var.x1[at]) + lin.ly(i, j, k).dot(var.y1[at]) + lin.lr(i, j, k).dot(rk) + lin.lv(i, j, k).dot(var.direction[at]);
      for (int q = 0; q < dm.d; ++q) term += lin.la(i, j, k, q).dot(var.a1[at].col(q));
      integral += wl[k] * term;
    }
    running += dE * lambda * integral;
  }
  const Vec& xT = base.x[steps * M + j];
  return running + gradient(model.h, xT).dot(var.x1[steps * M + j]) + gradient(model.gamma, base.y[j]).dot(var.y1[j]);
}

namespace {

std::size_t inner_members(const ModelSpec& model, const SolverConfig& config) {
  return model.flags.backward_deterministic && model.flags.adjoint_deterministic ? 1 : config.inner_paths;
}

void check_rhos(const std::vector<double>& rhos) {
  require(!rhos.empty(), "rho list must be nonempty");
  for (const double r : rhos) require(std::isfinite(r) && r > 0.0, "every rho must be positive");
}

}  // namespace

std::vector<ConvergenceRow> gateaux_consistency_check(const ModelSpec& model, const ControlPolicy& u,
                                                      const ControlProcess& v, const std::vector<double>& rhos,
                                                      const EnsemblePlan& plan, const SolverConfig& config) {
  check_rhos(rhos);
  const std::size_t R = rhos.size();
  std::vector<std::vector<double>> quotient(R, std::vector<double>(plan.size));
  std::vector<std::vector<double>> diff(R, std::vector<double>(plan.size));
  std::vector<double> linear(plan.size);
  parallel_for(plan.size, config.threads, [&](std::size_t i) {
    const PathBundle bundle = plan.bundle(i);
    const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, inner_members(model, config)));
    const ControlProcess base_control = u(bundle);
    const EnsembleSolution base = solve_ensemble(model, base_control, ens, config);
    const Linearization lin(model, base);
    const VariationalEnsemble var = solve_variational(model, base, ens, lin, v, config);
    double lin_cost = 0.0;
    for (std::size_t j = 0; j < base.members; ++j) lin_cost += linearized_cost(model, base, lin, var, j);
    lin_cost /= static_cast<double>(base.members);
    linear[i] = lin_cost;
    const double J0 = path_cost(model, base);
    for (std::size_t r = 0; r < R; ++r) {
      const EnsembleSolution moved = solve_ensemble(model, base_control.shifted(v, rhos[r]), ens, config, true, &base.x);
      quotient[r][i] = (path_cost(model, moved) - J0) / rhos[r];
      diff[r][i] = quotient[r][i] - lin_cost;
    }
  });
  std::vector<ConvergenceRow> rows;
  const CostEstimate lin_est = summarize(linear);
  for (std::size_t r = 0; r < R; ++r) {
    const CostEstimate q = summarize(quotient[r]);
    const CostEstimate dlt = summarize(diff[r]);
    rows.push_back({rhos[r], q.mean, q.std_error, lin_est.mean, lin_est.std_error, std::abs(dlt.mean), dlt.std_error});
  }
  return rows;
}

std::vector<RemainderRow> remainder_convergence_check(const ModelSpec& model, const ControlPolicy& u,
                                                      const ControlProcess& v, const std::vector<double>& rhos,
                                                      const EnsemblePlan& plan, const SolverConfig& config,
                                                      std::size_t calendar_points) {
  check_rhos(rhos);
  const std::size_t R = rhos.size();
  const std::size_t P = plan.size;
  const MarkQuadrature rule = model.jumps.quadrature();
  const double lambda = model.jumps.intensity;
  const std::vector<double> cal_grid = uniform_calendar_grid(plan.spec.horizon, calendar_points);
  // x_curve[r][path * points + c]
  std::vector<std::vector<double>> x_curve(R, std::vector<double>(P * calendar_points));
  std::vector<std::vector<double>> y_curve(R, std::vector<double>(P * calendar_points));
  std::vector<std::vector<double>> a_int(R, std::vector<double>(P)), r_int(R, std::vector<double>(P));

  parallel_for(P, config.threads, [&](std::size_t i) {
    const PathBundle bundle = plan.bundle(i);
    const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, inner_members(model, config)));
    const ControlProcess base_control = u(bundle);
    const EnsembleSolution base = solve_ensemble(model, base_control, ens, config);
    const Linearization lin(model, base);
    const VariationalEnsemble var = solve_variational(model, base, ens, lin, v, config);
    const InversePath inv = invert_subordinator(bundle.subordinator, cal_grid);
    const std::size_t M = base.members;
    const std::size_t steps = base.steps();
    const std::size_t block = static_cast<std::size_t>(model.dims.m) * rule.size();
    for (std::size_t r = 0; r < R; ++r) {
      const double rho = rhos[r];
      const EnsembleSolution moved = solve_ensemble(model, base_control.shifted(v, rho), ens, config, true, &base.x);
      for (std::size_t c = 0; c < calendar_points; ++c) {
        const std::size_t idx = inv.indices[c];
        double sx = 0.0, sy = 0.0;
        for (std::size_t j = 0; j < M; ++j) {
          const std::size_t at = idx * M + j;
          sx += ((moved.x[at] - base.x[at]) / rho - var.x1[at]).squaredNorm();
          sy += ((moved.y[at] - base.y[at]) / rho - var.y1[at]).squaredNorm();
        }
        x_curve[r][i * calendar_points + c] = sx / static_cast<double>(M);
        y_curve[r][i * calendar_points + c] = sy / static_cast<double>(M);
      }
      double sa = 0.0, sr = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        const double dE = base.clock.step(s).dE;
        for (std::size_t j = 0; j < M; ++j) {
          const std::size_t at = s * M + j;
          sa += dE * ((moved.a[at] - base.a[at]) / rho - var.a1[at]).squaredNorm();
          double node_sum = 0.0;
          for (std::size_t k = 0; k < rule.size(); ++k)
            for (int row = 0; row < model.dims.m; ++row) {
              const std::size_t e = at * block + k * static_cast<std::size_t>(model.dims.m) + static_cast<std::size_t>(row);
              const double t = (moved.r[e] - base.r[e]) / rho - var.r1[e];
              node_sum += rule.weights[k] * t * t;
            }
          sr += dE * lambda * node_sum;
        }
      }
      a_int[r][i] = sa / static_cast<double>(M);
      r_int[r][i] = sr / static_cast<double>(M);
    }
  });

  const auto sup_mean = [&](const std::vector<double>& curve, double& se) {
    double best = -1.0;
    for (std::size_t c = 0; c < calendar_points; ++c) {
      std::vector<double> column(P);
      for (std::size_t i = 0; i < P; ++i) column[i] = curve[i * calendar_points + c];
      const CostEstimate est = summarize(std::move(column));
      if (est.mean > best) {
        best = est.mean;
        se = est.std_error;
      }
    }
    return best;
  };
  std::vector<RemainderRow> rows;
  for (std::size_t r = 0; r < R; ++r) {
    RemainderRow row;
    row.rho = rhos[r];
    row.x = sup_mean(x_curve[r], row.x_se);
    row.y = sup_mean(y_curve[r], row.y_se);
    const CostEstimate a = summarize(a_int[r]);
    const CostEstimate rr = summarize(r_int[r]);
    row.a = a.mean;
    row.a_se = a.std_error;
    row.r = rr.mean;
    row.r_se = rr.std_error;
    rows.push_back(row);
  }
  return rows;
}

std::vector<Candidate> sample_candidates(const ControlSet& set, std::size_t count, std::uint64_t seed, double horizon,
                                         double radius) {
  require(count >= 1, "empty candidate set");
  const int k = set.dim();
  Vec lo(k), hi(k);
  for (int c = 0; c < k; ++c) {
    lo(c) = std::isfinite(set.lower()(c)) ? set.lower()(c) : -radius;
    hi(c) = std::isfinite(set.upper()(c)) ? set.upper()(c) : radius;
    if (lo(c) > hi(c)) std::swap(lo(c), hi(c));
  }
  Rng rng(seed);
  const auto draw = [&] {
    Vec v(k);
    for (int c = 0; c < k; ++c) v(c) = rng.uniform(lo(c), hi(c));
    return set.project(v);
  };
  std::vector<Candidate> out;
  const std::size_t constants = (count + 1) / 2;
  for (std::size_t i = 0; i < constants; ++i) {
    Vec v(k);
    if (k == 1) {
      const double frac = constants == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(constants - 1);
      v(0) = lo(0) + frac * (hi(0) - lo(0));
      v = set.project(v);
    } else {
      v = draw();
    }
    std::string label = "constant(";
    for (int c = 0; c < k; ++c) label += (c ? "," : "") + format_double(v(c));
    out.push_back({label + ")", ControlProcess::constant(v)});
  }
  constexpr int kPieces = 4;
  for (std::size_t i = constants; i < count; ++i) {
    std::vector<double> times;
    std::vector<Vec> values;
    for (int piece = 0; piece < kPieces; ++piece) {
      times.push_back(horizon * piece / kPieces);
      values.push_back(draw());
    }
    out.push_back({"piecewise#" + std::to_string(i - constants), ControlProcess::open_loop(times, values)});
  }
  return out;
}

MarginReport check_necessary_condition(const ModelSpec& model, const ControlPolicy& u,
                                       const std::vector<Candidate>& candidates, const EnsemblePlan& plan,
                                       const SolverConfig& config, const AdjointProvider& provider) {
  require(!candidates.empty(), "empty candidate set");
  const MarkQuadrature rule = model.jumps.quadrature();
  const std::size_t C = candidates.size();
  std::vector<std::vector<double>> margins(C, std::vector<double>(plan.size));
  parallel_for(plan.size, config.threads, [&](std::size_t i) {
    const PathBundle bundle = plan.bundle(i);
    const ConditionalEnsemble ens = operational_ensemble(bundle, sample_members(bundle, inner_members(model, config)));
    const EnsembleSolution sol = solve_ensemble(model, u(bundle), ens, config);
    AdjointEnsemble adj;
    if (provider) {
      adj = provider(bundle, sol, ens);
    } else {
      const Linearization lin(model, sol);
      adj = solve_adjoint(model, sol, ens, lin, config);
    }
    require(adj.members == sol.members && adj.steps() == sol.steps(), "adjoint does not match the state solution");
    const std::size_t M = sol.members;
    std::vector<double> acc(C, 0.0);
    for (std::size_t s = 0; s < sol.steps(); ++s) {
      const ClockStep st = sol.clock.step(s);
      if (st.dE == 0.0) continue;
      for (std::size_t j = 0; j < M; ++j) {
        const std::size_t at = s * M + j;
        HamiltonianPoint pt{st.t1, st.t2, sol.x[at], sol.y[at], sol.a[at], sol.r_nodes(s, j), sol.v[at],
                            adj.p[at], adj.q[at], adj.k[at], adj.R_nodes(s, j)};
        const Vec hv = hamiltonian_grad_v(model, rule, pt);
        for (std::size_t c = 0; c < C; ++c) {
          const Vec vc = candidates[c].control(st.t1, st.t2, sol.x[at]);
          acc[c] += st.dE * hv.dot(vc - sol.v[at]);
        }
      }
    }
    for (std::size_t c = 0; c < C; ++c) margins[c][i] = acc[c] / static_cast<double>(M);
  });
  MarginReport report;
  bool first = true;
  for (std::size_t c = 0; c < C; ++c) {
    const CostEstimate est = summarize(std::move(margins[c]));
    report.rows.push_back({candidates[c].label, est.mean, est.std_error});
    // Witness: the most negative margin relative to its error bar.
    const double score = est.mean + 3.0 * est.std_error;
    const double best = report.min_margin + 3.0 * report.std_error;
    if (first || score < best) {
      report.min_margin = est.mean;
      report.std_error = est.std_error;
      report.witness = candidates[c].label;
      first = false;
    }
  }
  return report;
}

ConvexityReport check_sufficient_condition_hypotheses(const ModelSpec& model, const SampleCloud& cloud) {
  model.validate();
  const Dims& dm = model.dims;
  const MarkQuadrature rule = model.jumps.quadrature();
  const auto K = static_cast<Eigen::Index>(rule.size());
  Rng rng(cloud.seed);
  const double rad = cloud.radius;
  const auto uvec = [&](int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform(-rad, rad);
    return v;
  };
  const auto umat = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-rad, rad);
    return m;
  };
  const ControlSet& set = model.control_set;
  const auto control = [&] {
    Vec v(dm.k);
    for (int c = 0; c < dm.k; ++c) {
      const double lo = std::isfinite(set.lower()(c)) ? set.lower()(c) : -rad;
      const double hi = std::isfinite(set.upper()(c)) ? set.upper()(c) : rad;
      v(c) = rng.uniform(lo, hi);
    }
    return set.project(v);
  };
  ConvexityReport rep;
  const auto excess = [&](double mid, double left, double right) {
    const double gap = mid - 0.5 * (left + right);
    rep.worst_gap = std::max(rep.worst_gap, gap);
    return gap > 1e-9 * (1.0 + std::abs(left) + std::abs(right));
  };
  for (std::size_t t = 0; t < cloud.count; ++t) {
    ++rep.tests;
    HamiltonianPoint a, b;
    a.t1 = b.t1 = rng.uniform(0.0, cloud.horizon);
    a.t2 = b.t2 = rng.uniform(0.0, cloud.horizon);
    a.p = b.p = uvec(dm.m);
    a.q = b.q = uvec(dm.n);
    a.k = b.k = Mat(umat(dm.n, dm.d));
    a.R = b.R = umat(dm.n, K);
    a.x = uvec(dm.n);
    b.x = uvec(dm.n);
    a.y = uvec(dm.m);
    b.y = uvec(dm.m);
    a.a = Mat(umat(dm.m, dm.d));
    b.a = Mat(umat(dm.m, dm.d));
    a.r = umat(dm.m, K);
    b.r = umat(dm.m, K);
    a.v = control();
    b.v = control();
    HamiltonianPoint mid = a;
    mid.x = 0.5 * (a.x + b.x);
    mid.y = 0.5 * (a.y + b.y);
    mid.a = 0.5 * (a.a + b.a);
    mid.r = 0.5 * (a.r + b.r);
    mid.v = 0.5 * (a.v + b.v);
    if (excess(hamiltonian(model, rule, mid), hamiltonian(model, rule, a), hamiltonian(model, rule, b)))
      ++rep.hamiltonian_violations;
    if (excess(model.h(mid.x), model.h(a.x), model.h(b.x))) ++rep.h_violations;
    if (excess(model.gamma(mid.y), model.gamma(a.y), model.gamma(b.y))) ++rep.gamma_violations;
    if (model.flags.linear_terminal) {
      rep.terminal_checked = true;
      rep.terminal_error = std::max(rep.terminal_error, ((*model.terminal_matrix) * a.x - model.phi(a.x)).cwiseAbs().maxCoeff());
    }
  }
  return rep;
}

}  // namespace tcfbsde
