#include "airship/formation.hpp"

#include <algorithm>
#include <numeric>

namespace airship::formation {

Vec2 instantaneous_wind(const Vec2& groundspeed, double airspeed, double heading) {
  return groundspeed - airspeed * Vec2(std::cos(heading), std::sin(heading));
}

WindEstimate estimate_wind(const WindEstimate& prev, const Vec2& groundspeed, double airspeed,
                           double heading, double turn_rate, double dt,
                           const WindEstimatorConfig& cfg) {
  WindEstimate w = prev;
  w.time_constant = cfg.time_constant;
  if (std::abs(turn_rate) > cfg.turn_gate || !(airspeed >= 0.0) || !(dt > 0.0)) return w;
  const Vec2 sample = instantaneous_wind(groundspeed, airspeed, heading);
  if (!sample.allFinite()) return w;
  if (!w.initialized) {
    w.vector = sample;
    w.initialized = true;
  } else {
    const double alpha = 1.0 - std::exp(-dt / cfg.time_constant);
    w.vector += alpha * (sample - w.vector);
  }
  w.accepted_time += dt;
  w.confidence = 1.0 - std::exp(-w.accepted_time / cfg.time_constant);
  return w;
}

void MpcConfig::validate() const {
  if (horizon < 1 || !(dt > 0.0)) throw ConfigError("mpc horizon and dt must be positive");
  for (double w : {w_cam, w_sep, w_dist, w_u, w_speed, w_penalty}) {
    if (!(w >= 0.0)) throw ConfigError("mpc weights must be non-negative");
  }
  if (horizon * dt < 2.0 * slowest_time_constant) {
    throw ConfigError("mpc horizon must span at least twice the slowest vehicle time constant");
  }
  if (!(r_subject_min > 0.0)) throw ConfigError("mpc r_subject_min must be positive");
  if (!(v_min > 0.0) || !(v_max > v_min)) throw ConfigError("mpc airspeed bounds invalid");
  if (!(standoff_altitude > 0.0)) throw ConfigError("mpc standoff altitude must be positive");
  if (iterations < 1) throw ConfigError("mpc iterations must be >= 1");
  if (!(control_scale.array() > 0.0).all()) throw ConfigError("mpc control scale must be positive");
}

PlantState plant_state(const estimation::NavEstimate& est) {
  return PlantState(est.position.x(), est.position.y(), est.position.z(), est.heading());
}

namespace {

struct Sinc {
  double value;
  double derivative;
};

Sinc sinc(double a) {
  if (std::abs(a) < 1e-4) {
    const double a2 = a * a;
    return {1.0 - a2 / 6.0, -a / 3.0 + a * a2 / 30.0};
  }
  return {std::sin(a) / a, (a * std::cos(a) - std::sin(a)) / (a * a)};
}

using Jx = Eigen::Matrix4d;
using Ju = Eigen::Matrix<double, 4, 3>;

// Step with Jacobians. Heading rate is -turn_rate (turn_rate positive right).
PlantState step_with_jacobian(const PlantState& x, const Control& u, const Vec2& wind, double dt,
                              Jx* fx, Ju* fu) {
  const double v = u(0), r = u(1), c = u(2);
  const double a = -0.5 * r * dt;
  const Sinc s = sinc(a);
  const double chord = v * dt * s.value;
  const double theta = x(3) + a;
  const double ct = std::cos(theta), st = std::sin(theta);

  PlantState y;
  y << x(0) + chord * ct + wind.x() * dt, x(1) + chord * st + wind.y() * dt, x(2) + c * dt,
      x(3) - r * dt;

  if (fx) {
    fx->setIdentity();
    (*fx)(0, 3) = -chord * st;
    (*fx)(1, 3) = chord * ct;
  }
  if (fu) {
    fu->setZero();
    (*fu)(0, 0) = dt * s.value * ct;
    (*fu)(1, 0) = dt * s.value * st;
    const double dchord_dr = v * dt * s.derivative * (-0.5 * dt);
    const double dtheta_dr = -0.5 * dt;
    (*fu)(0, 1) = dchord_dr * ct - chord * st * dtheta_dr;
    (*fu)(1, 1) = dchord_dr * st + chord * ct * dtheta_dr;
    (*fu)(3, 1) = -dt;
    (*fu)(2, 2) = dt;
  }
  return y;
}

int index(const PlanningProblem& p, int vehicle, int step, int channel) {
  return (vehicle * p.cfg.horizon + step) * 3 + channel;
}

Control control_at(const PlanningProblem& p, const ControlVector& u, int vehicle, int step) {
  return u.segment<3>(index(p, vehicle, step, 0));
}

// Shared evaluation; gradient is filled when non-null.
CostBreakdown accumulate(const PlanningProblem& p, const ControlVector& u, ControlVector* grad) {
  const MpcConfig& cfg = p.cfg;
  const int n = p.vehicles();
  const int N = cfg.horizon;
  CostBreakdown cb;
  if (grad) grad->setZero(u.size());

  std::vector<std::vector<PlantState>> traj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& tr = traj[static_cast<std::size_t>(i)];
    tr.resize(static_cast<std::size_t>(N + 1));
    tr[0] = p.initial[static_cast<std::size_t>(i)];
    for (int t = 0; t < N; ++t) {
      tr[static_cast<std::size_t>(t + 1)] =
          step_with_jacobian(tr[static_cast<std::size_t>(t)], control_at(p, u, i, t), p.wind,
                             cfg.dt, nullptr, nullptr);
    }
  }

  // State gradients per vehicle and step.
  std::vector<std::vector<Eigen::Vector4d>> gx(
      static_cast<std::size_t>(n),
      std::vector<Eigen::Vector4d>(static_cast<std::size_t>(N + 1), Eigen::Vector4d::Zero()));
  auto add_u = [&](int i, int t, int c, double v) {
    if (grad) (*grad)(index(p, i, t, c)) += v;
  };

  const double dstar = cfg.standoff_radius();
  const double eps2 = cfg.overflight_smoothing * cfg.overflight_smoothing;
  const double wp = cfg.w_penalty;

  for (int t = 1; t <= N; ++t) {
    const Vec2 s = p.subject + p.subject_velocity * (t * cfg.dt);
    std::vector<double> azimuth(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const PlantState& x = traj[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      Eigen::Vector4d& g = gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      const Control uc = control_at(p, u, i, t - 1);

      // Camera alignment.
      {
        const double e = cfg.camera_depression + cfg.bank_per_accel * uc(0) * uc(1);
        const double hang = x(3) - cfg.camera_azimuth;
        const Vec2 h(std::cos(hang), std::sin(hang));
        const Vec3 b(std::cos(e) * h.x(), std::cos(e) * h.y(), -std::sin(e));
        const Vec3 l(s.x() - x(0), s.y() - x(1), -x(2));
        const double ln = l.norm();
        if (ln > 1e-9) {
          const Vec3 lh = l / ln;
          const double cosphi = std::clamp(b.dot(lh), -1.0, 1.0);
          const double sinphi = b.cross(lh).norm();
          const double phi = std::atan2(sinphi, b.dot(lh));
          cb.camera += cfg.w_cam * phi * phi;
          if (grad) {
            const double k = sinphi > 1e-12 ? phi / sinphi : 1.0;
            const Vec3 dl = -2.0 * cfg.w_cam * k * (b - cosphi * lh) / ln;
            const Vec3 db = -2.0 * cfg.w_cam * k * (lh - cosphi * b);
            g.head<3>() -= dl;
            const Vec3 db_dpsi(-std::cos(e) * h.y(), std::cos(e) * h.x(), 0.0);
            g(3) += db.dot(db_dpsi);
            const Vec3 db_de(-std::sin(e) * h.x(), -std::sin(e) * h.y(), -std::cos(e));
            const double dJ_de = db.dot(db_de);
            add_u(i, t - 1, 0, dJ_de * cfg.bank_per_accel * uc(1));
            add_u(i, t - 1, 1, dJ_de * cfg.bank_per_accel * uc(0));
          }
        }
      }

      const double dx = x(0) - s.x(), dy = x(1) - s.y();
      const double rho2 = dx * dx + dy * dy;
      const double rho = std::sqrt(rho2);
      azimuth[static_cast<std::size_t>(i)] = std::atan2(dy, dx);

      // Standoff distance.
      cb.distance += cfg.w_dist * (rho - dstar) * (rho - dstar);
      if (grad && rho > 1e-9) {
        const double k = 2.0 * cfg.w_dist * (rho - dstar) / rho;
        g(0) += k * dx;
        g(1) += k * dy;
      }

      // No overflight.
      {
        const double rs = std::sqrt(rho2 + eps2);
        const double hinge = cfg.r_subject_min - rs;
        if (hinge > 0.0) {
          cb.subject_penalty += wp * hinge * hinge;
          if (grad) {
            g(0) += -2.0 * wp * hinge * dx / rs;
            g(1) += -2.0 * wp * hinge * dy / rs;
          }
        }
      }

      // Sky-box.
      if (p.skybox) {
        const Vec3 lo = p.skybox->min_corner.array() + cfg.skybox_inset;
        const Vec3 hi = p.skybox->max_corner.array() - cfg.skybox_inset;
        for (int a = 0; a < 3; ++a) {
          if (x(a) < lo(a)) {
            cb.skybox_penalty += wp * (lo(a) - x(a)) * (lo(a) - x(a));
            g(a) += -2.0 * wp * (lo(a) - x(a));
          } else if (x(a) > hi(a)) {
            cb.skybox_penalty += wp * (x(a) - hi(a)) * (x(a) - hi(a));
            g(a) += 2.0 * wp * (x(a) - hi(a));
          }
        }
      }
    }

    // Inter-vehicle distance.
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const Vec3 d = traj[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)].head<3>() -
                       traj[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)].head<3>();
        const double dist = std::sqrt(d.squaredNorm() + eps2);
        const double hinge = cfg.d_vehicle - dist;
        if (hinge > 0.0) {
          cb.vehicle_penalty += wp * hinge * hinge;
          if (grad) {
            const Vec3 gd = -2.0 * wp * hinge * d / dist;
            gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)].head<3>() += gd;
            gx[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)].head<3>() -= gd;
          }
        }
      }
    }

    // Angular separation on sorted azimuths, ties by vehicle id.
    if (n >= 2) {
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double za = azimuth[static_cast<std::size_t>(a)];
        const double zb = azimuth[static_cast<std::size_t>(b)];
        return za != zb ? za < zb : a < b;
      });
      const double target = 2.0 * kPi / n;
      std::vector<double> dJ_daz(static_cast<std::size_t>(n), 0.0);
      for (int k = 0; k < n; ++k) {
        const int a = order[static_cast<std::size_t>(k)];
        const int b = order[static_cast<std::size_t>((k + 1) % n)];
        double gap = azimuth[static_cast<std::size_t>(b)] - azimuth[static_cast<std::size_t>(a)];
        if (k == n - 1) gap += 2.0 * kPi;
        const double err = gap - target;
        cb.separation += cfg.w_sep * err * err;
        dJ_daz[static_cast<std::size_t>(b)] += 2.0 * cfg.w_sep * err;
        dJ_daz[static_cast<std::size_t>(a)] -= 2.0 * cfg.w_sep * err;
      }
      if (grad) {
        for (int i = 0; i < n; ++i) {
          const PlantState& x = traj[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
          const double dx = x(0) - s.x(), dy = x(1) - s.y();
          const double r2 = dx * dx + dy * dy;
          if (r2 < 1e-12) continue;
          gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)](0) +=
              dJ_daz[static_cast<std::size_t>(i)] * (-dy / r2);
          gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)](1) +=
              dJ_daz[static_cast<std::size_t>(i)] * (dx / r2);
        }
      }
    }
  }

  // Control-only terms.
  for (int i = 0; i < n; ++i) {
    Control prev = p.previous[static_cast<std::size_t>(i)];
    for (int t = 0; t < N; ++t) {
      const Control uc = control_at(p, u, i, t);
      const Eigen::Vector3d d = (uc - prev).cwiseQuotient(cfg.control_scale);
      cb.control_rate += cfg.w_u * d.squaredNorm();
      const Eigen::Vector3d gd = 2.0 * cfg.w_u * d.cwiseQuotient(cfg.control_scale);
      for (int c = 0; c < 3; ++c) {
        add_u(i, t, c, gd(c));
        if (t > 0) add_u(i, t - 1, c, -gd(c));
      }
      prev = uc;

      cb.speed += cfg.w_speed * (uc(0) - cfg.v_pref) * (uc(0) - cfg.v_pref);
      add_u(i, t, 0, 2.0 * cfg.w_speed * (uc(0) - cfg.v_pref));
      if (uc(0) < cfg.v_min) {
        cb.airspeed_penalty += wp * (cfg.v_min - uc(0)) * (cfg.v_min - uc(0));
        add_u(i, t, 0, -2.0 * wp * (cfg.v_min - uc(0)));
      } else if (uc(0) > cfg.v_max) {
        cb.airspeed_penalty += wp * (uc(0) - cfg.v_max) * (uc(0) - cfg.v_max);
        add_u(i, t, 0, 2.0 * wp * (uc(0) - cfg.v_max));
      }
    }
  }

  if (grad) {
    // Adjoint sweep per vehicle.
    for (int i = 0; i < n; ++i) {
      const auto& tr = traj[static_cast<std::size_t>(i)];
      Eigen::Vector4d lambda = gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(N)];
      for (int t = N - 1; t >= 0; --t) {
        Jx fx;
        Ju fu;
        step_with_jacobian(tr[static_cast<std::size_t>(t)], control_at(p, u, i, t), p.wind, cfg.dt,
                           &fx, &fu);
        grad->segment<3>(index(p, i, t, 0)) += fu.transpose() * lambda;
        lambda = fx.transpose() * lambda;
        if (t > 0) lambda += gx[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      }
    }
  }
  return cb;
}

}  // namespace

PlantState plant_step(const PlantState& x, const Control& u, const Vec2& wind, double dt) {
  return step_with_jacobian(x, u, wind, dt, nullptr, nullptr);
}

std::vector<PlantState> rollout(const PlantState& initial, const std::vector<Control>& controls,
                                const Vec2& wind, double dt) {
  std::vector<PlantState> out;
  out.reserve(controls.size() + 1);
  out.push_back(initial);
  for (const Control& u : controls) out.push_back(plant_step(out.back(), u, wind, dt));
  return out;
}

std::vector<PlantState> rollout(const estimation::NavEstimate& initial,
                                const std::vector<Control>& controls, const Vec2& wind,
                                const MpcConfig& cfg) {
  return rollout(plant_state(initial), controls, wind, cfg.dt);
}

CostBreakdown evaluate_cost(const PlanningProblem& problem, const ControlVector& u) {
  return accumulate(problem, u, nullptr);
}

double cost_and_gradient(const PlanningProblem& problem, const ControlVector& u,
                         ControlVector& gradient) {
  return accumulate(problem, u, &gradient).total();
}

ControlVector clamp_controls(const PlanningProblem& problem, const ControlVector& u) {
  const MpcConfig& cfg = problem.cfg;
  ControlVector out = u;
  for (Eigen::Index k = 0; k + 2 < out.size(); k += 3) {
    out(k) = std::clamp(out(k), cfg.v_min, cfg.v_max);
    out(k + 1) = std::clamp(out(k + 1), -cfg.max_turn_rate, cfg.max_turn_rate);
    out(k + 2) = std::clamp(out(k + 2), -cfg.max_climb_rate, cfg.max_climb_rate);
  }
  return out;
}

ControlVector solve(const PlanningProblem& problem, const ControlVector& initial,
                    std::vector<double>* cost_history) {
  const MpcConfig& cfg = problem.cfg;
  ControlVector u = clamp_controls(problem, initial);
  ControlVector g(u.size());
  double J = cost_and_gradient(problem, u, g);
  if (cost_history) cost_history->push_back(J);
  if (!std::isfinite(J)) return u;

  ControlVector precond(u.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    const double s = cfg.control_scale(k % 3);
    precond(k) = s * s;
  }

  constexpr double kArmijo = 1e-4;
  double alpha = 1e-2;
  for (int it = 0; it < cfg.iterations; ++it) {
    double step = std::min(alpha * 2.0, 1e3);
    bool accepted = false;
    for (int b = 0; b < 40; ++b, step *= 0.5) {
      const ControlVector cand = clamp_controls(problem, u - step * precond.cwiseProduct(g));
      const double decrease = g.dot(cand - u);
      if (decrease >= 0.0) break;  // projected step is not a descent direction
      const double Jc = evaluate_cost(problem, cand).total();
      if (std::isfinite(Jc) && Jc <= J + kArmijo * decrease) {
        u = cand;
        alpha = step;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    J = cost_and_gradient(problem, u, g);
    if (cost_history) cost_history->push_back(J);
  }
  return u;
}

FormationPlan shift_plan(const FormationPlan& plan) {
  FormationPlan out = plan;
  for (auto& v : out.vehicles) {
    if (v.controls.empty()) continue;
    std::rotate(v.controls.begin(), v.controls.begin() + 1, v.controls.end());
    v.controls.back() = v.controls[v.controls.size() >= 2 ? v.controls.size() - 2 : 0];
  }
  return out;
}

namespace {

ConstraintResiduals residuals_of(const PlanningProblem& p, const FormationPlan& plan) {
  ConstraintResiduals r;
  const MpcConfig& cfg = p.cfg;
  const int n = p.vehicles();
  for (int t = 1; t <= cfg.horizon; ++t) {
    const Vec2 s = p.subject + p.subject_velocity * (t * cfg.dt);
    for (int i = 0; i < n; ++i) {
      const PlantState& x =
          plan.vehicles[static_cast<std::size_t>(i)].trajectory[static_cast<std::size_t>(t)];
      r.subject_distance =
          std::max(r.subject_distance, cfg.r_subject_min - (x.head<2>() - s).norm());
      if (p.skybox) {
        control::SkyBox inner = *p.skybox;
        inner.min_corner.array() += cfg.skybox_inset;
        inner.max_corner.array() -= cfg.skybox_inset;
        r.skybox = std::max(r.skybox, inner.excursion(x.head<3>()));
      }
      for (int j = i + 1; j < n; ++j) {
        const PlantState& y =
            plan.vehicles[static_cast<std::size_t>(j)].trajectory[static_cast<std::size_t>(t)];
        r.vehicle_distance =
            std::max(r.vehicle_distance, cfg.d_vehicle - (x.head<3>() - y.head<3>()).norm());
      }
    }
  }
  for (const auto& v : plan.vehicles) {
    for (const Control& u : v.controls) {
      r.airspeed = std::max({r.airspeed, cfg.v_min - u(0), u(0) - cfg.v_max});
    }
  }
  return r;
}

}  // namespace

FormationPlan plan_formation(const std::vector<estimation::NavEstimate>& states,
                             const perception::SubjectTrack& track, const WindEstimate& wind,
                             const MpcConfig& cfg, const FormationPlan* warm_start,
                             const std::optional<control::SkyBox>& skybox,
                             const std::vector<Control>* previous) {
  FormationPlan plan;
  const int n = static_cast<int>(states.size());
  const int N = cfg.horizon;
  if (n == 0) return plan;

  PlanningProblem p;
  p.cfg = cfg;
  p.skybox = skybox;
  p.wind = wind.initialized ? wind.vector : Vec2::Zero();
  for (const auto& s : states) p.initial.push_back(plant_state(s));

  const double orbit_rate = cfg.v_pref / cfg.standoff_radius();
  const bool warm_ok =
      warm_start && static_cast<int>(warm_start->vehicles.size()) == n &&
      std::all_of(warm_start->vehicles.begin(), warm_start->vehicles.end(),
                  [N](const VehiclePlan& v) { return static_cast<int>(v.controls.size()) == N; });

  for (int i = 0; i < n; ++i) {
    if (previous && static_cast<int>(previous->size()) == n) {
      p.previous.push_back((*previous)[static_cast<std::size_t>(i)]);
    } else if (warm_ok) {
      p.previous.push_back(warm_start->vehicles[static_cast<std::size_t>(i)].controls.front());
    } else {
      p.previous.push_back(Control(cfg.v_pref, orbit_rate, 0.0));
    }
  }

  auto build = [&](const ControlVector& u) {
    plan.vehicles.assign(static_cast<std::size_t>(n), {});
    for (int i = 0; i < n; ++i) {
      auto& v = plan.vehicles[static_cast<std::size_t>(i)];
      for (int t = 0; t < N; ++t) v.controls.push_back(u.segment<3>((i * N + t) * 3));
      v.trajectory = rollout(p.initial[static_cast<std::size_t>(i)], v.controls, p.wind, cfg.dt);
    }
  };

  ControlVector u0(n * N * 3);
  if (warm_ok) {
    const FormationPlan shifted = shift_plan(*warm_start);
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < N; ++t) {
        u0.segment<3>((i * N + t) * 3) =
            shifted.vehicles[static_cast<std::size_t>(i)].controls[static_cast<std::size_t>(t)];
      }
    }
  } else {
    for (int k = 0; k < n * N; ++k) u0.segment<3>(k * 3) = Control(cfg.v_pref, orbit_rate, 0.0);
  }
  u0 = clamp_controls(p, u0);

  if (!track.initialized) {
    // Loiter: slow right-hand circle at the current estimate.
    ControlVector loiter(n * N * 3);
    for (int k = 0; k < n * N; ++k) {
      loiter.segment<3>(k * 3) = Control(cfg.v_min, cfg.v_min / cfg.standoff_radius(), 0.0);
    }
    loiter = clamp_controls(p, loiter);
    build(loiter);
    p.subject = states.front().position.head<2>();
    plan.degraded = true;
    plan.breakdown = evaluate_cost(p, loiter);
    plan.total_cost = plan.breakdown.total();
    plan.residuals = residuals_of(p, plan);
    return plan;
  }

  p.subject = track.position();
  p.subject_velocity = track.velocity();

  std::vector<double> history;
  ControlVector u = solve(p, u0, &history);
  CostBreakdown cb = evaluate_cost(p, u);
  if (!std::isfinite(cb.total()) || !u.allFinite()) {
    plan.fault = true;
    u = u0;
    cb = evaluate_cost(p, u);
  }
  build(u);
  plan.breakdown = cb;
  plan.total_cost = cb.total();
  plan.cost_history = std::move(history);
  plan.iterations = static_cast<int>(plan.cost_history.size()) - 1;
  plan.residuals = residuals_of(p, plan);
  return plan;
}

}  // namespace airship::formation
