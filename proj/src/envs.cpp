#include "hipdreamer/envs.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace hipdreamer {

namespace {

double wrap_angle(double theta) {
  // (-pi, pi]
  double w = std::remainder(theta, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

void append_csv_double(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), ",%.17g", v);
  line += buf;
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::pendulum: return "pendulum";
    case Task::throwing: return "throwing";
    case Task::sorting: return "sorting";
    case Task::pointmass: return "pointmass";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "pendulum") return Task::pendulum;
  if (name == "throwing") return Task::throwing;
  if (name == "sorting") return Task::sorting;
  if (name == "pointmass") return Task::pointmass;
  throw std::invalid_argument("unknown task: " + name);
}

bool OmegaRange::contains(const std::vector<double>& omega) const {
  if (omega.size() != bounds.size()) return false;
  for (size_t i = 0; i < bounds.size(); ++i)
    if (omega[i] < bounds[i][0] || omega[i] > bounds[i][1]) return false;
  return true;
}

HiddenParams sample_omega(const OmegaRange& range, std::mt19937_64& rng) {
  HiddenParams hp;
  hp.omega.reserve(range.bounds.size());
  for (const auto& b : range.bounds) {
    std::uniform_real_distribution<double> uni(b[0], b[1]);
    double v = uni(rng);
    hp.omega.push_back(std::clamp(v, b[0], b[1]));
  }
  return hp;
}

EnvConfig EnvConfig::defaults(Task t) {
  EnvConfig cfg;
  cfg.task = t;
  return cfg;
}

double sorting_goal(double omega) { return omega < 0.6 ? 0.2 : -0.2; }

double task_reward(Task task, const std::vector<double>& state,
                   const std::vector<double>& omega, const EnvConfig& cfg) {
  switch (task) {
    case Task::pendulum:
      return (1.0 + std::cos(state[0])) / 2.0;
    case Task::throwing:
      return std::exp(-std::abs(state[0] - cfg.throw_goal_x));
    case Task::sorting:
      return std::exp(-std::abs(state[0] - sorting_goal(omega[0])));
    case Task::pointmass: {
      double dx = state[0] - cfg.pm_goal_x;
      double dy = state[1] - cfg.pm_goal_y;
      double d = std::sqrt(dx * dx + dy * dy);
      double sum = omega[0] + omega[1];
      return sum < 3.0 ? std::exp(-d) : 1.0 - std::exp(-d);
    }
  }
  return 0.0;
}

Env::Env(EnvConfig cfg) : cfg_(cfg) {
  if (cfg_.dt <= 0.0) throw std::invalid_argument("EnvConfig: dt must be positive");
  if (cfg_.episode_len < 1)
    throw std::invalid_argument("EnvConfig: episode_len must be >= 1");
}

int Env::obs_dim() const {
  switch (cfg_.task) {
    case Task::pendulum: return 2;
    case Task::throwing: return 4;
    case Task::sorting: return 2;
    case Task::pointmass: return 4;
  }
  return 0;
}

int Env::action_dim() const {
  return cfg_.task == Task::pointmass ? 2 : 1;
}

int Env::omega_dim() const {
  return cfg_.task == Task::pointmass ? 2 : 1;
}

OmegaRange Env::omega_range() const {
  switch (cfg_.task) {
    case Task::pendulum: return {{{0.1, 2.0}}};
    case Task::throwing: return {{{0.2, 1.0}}};
    case Task::sorting: return {{{0.2, 1.0}}};
    case Task::pointmass: return {{{1.0, 2.0}, {1.0, 2.0}}};
  }
  return {};
}

std::vector<double> Env::obs_scale() const {
  switch (cfg_.task) {
    case Task::pendulum: return {M_PI, 15.0};
    case Task::throwing: return {2.5, 1.5, 8.0, 8.0};
    case Task::sorting: return {2.5, 2.0};
    case Task::pointmass: return {1.0, 1.0, 2.0, 2.0};
  }
  return {};
}

std::vector<double> Env::reset(std::mt19937_64& rng) {
  omega_ = sample_omega(omega_range(), rng);
  return reset(rng, omega_.omega);
}

std::vector<double> Env::reset(std::mt19937_64& rng,
                               const std::vector<double>& omega_override) {
  OmegaRange range = omega_range();
  if (!range.contains(omega_override))
    throw std::invalid_argument("reset: omega override outside the task range");
  omega_.omega = omega_override;
  steps_ = 0;
  released_ = false;
  landed_ = false;
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  switch (cfg_.task) {
    case Task::pendulum: {
      // hanging near the bottom
      double theta = wrap_angle(M_PI + 0.1 * uni(rng));
      double theta_dot = 0.05 * uni(rng);
      state_ = {theta, theta_dot};
      break;
    }
    case Task::throwing: {
      double phi = -1.5 + 0.05 * uni(rng);
      double phi_dot = 0.0;
      double r = cfg_.throw_arm_length;
      state_ = {r * std::sin(phi), cfg_.throw_pivot_height - r * std::cos(phi),
                0.0, 0.0, phi, phi_dot};
      break;
    }
    case Task::sorting: {
      std::uniform_real_distribution<double> start(cfg_.sort_start_lo,
                                                   cfg_.sort_start_hi);
      state_ = {start(rng), 0.0};
      break;
    }
    case Task::pointmass: {
      state_ = {0.1 * uni(rng), 0.1 * uni(rng), 0.0, 0.0};
      break;
    }
  }
  return observe();
}

std::vector<double> Env::observe() const {
  std::vector<double> obs(state_.begin(), state_.begin() + obs_dim());
  return obs;
}

void Env::integrate(const std::vector<double>& a) {
  double dt = cfg_.dt;
  switch (cfg_.task) {
    case Task::pendulum: {
      double theta = state_[0], theta_dot = state_[1];
      double inertia = omega_.omega[0] * cfg_.pend_mass * cfg_.pend_length *
                       cfg_.pend_length;
      double theta_dd =
          -(cfg_.gravity / cfg_.pend_length) * std::sin(theta - M_PI) +
          (cfg_.pend_torque_max * a[0] - cfg_.pend_damping * theta_dot) /
              inertia;
      theta_dot += theta_dd * dt;
      theta = wrap_angle(theta + theta_dot * dt);
      state_ = {theta, theta_dot};
      break;
    }
    case Task::throwing: {
      double& x = state_[0];
      double& z = state_[1];
      double& vx = state_[2];
      double& vz = state_[3];
      double& phi = state_[4];
      double& phi_dot = state_[5];
      double r = cfg_.throw_arm_length;
      if (!released_) {
        double inertia = cfg_.throw_arm_inertia +
                         omega_.omega[0] * cfg_.throw_ball_mass * r * r;
        double torque = cfg_.throw_kp * (a[0] * cfg_.throw_arm_range - phi) -
                        cfg_.throw_kd * phi_dot;
        torque = std::clamp(torque, -cfg_.throw_torque_max, cfg_.throw_torque_max);
        phi_dot += torque / inertia * dt;
        phi += phi_dot * dt;
        x = r * std::sin(phi);
        z = cfg_.throw_pivot_height - r * std::cos(phi);
        vx = r * phi_dot * std::cos(phi);
        vz = r * phi_dot * std::sin(phi);
        if (phi >= cfg_.throw_release_angle && phi_dot > 0.0) released_ = true;
      } else if (!landed_) {
        vz -= cfg_.gravity * dt;
        x += vx * dt;
        z += vz * dt;
        if (z <= 0.0) {
          z = 0.0;
          vx = 0.0;
          vz = 0.0;
          landed_ = true;
        }
      }
      break;
    }
    case Task::sorting: {
      double mass = omega_.omega[0] * cfg_.sort_mass;
      double acc =
          (cfg_.sort_force_max * a[0] - cfg_.sort_friction * state_[1]) / mass;
      state_[1] += acc * dt;
      state_[0] += state_[1] * dt;
      break;
    }
    case Task::pointmass: {
      for (int i = 0; i < 2; ++i) {
        double acc = omega_.omega[i] * cfg_.pm_motor_gain * a[i] -
                     cfg_.pm_damping * state_[2 + i];
        state_[2 + i] += acc * dt;
        state_[i] += state_[2 + i] * dt;
        if (state_[i] > cfg_.pm_arena) {
          state_[i] = cfg_.pm_arena;
          state_[2 + i] = 0.0;
        } else if (state_[i] < -cfg_.pm_arena) {
          state_[i] = -cfg_.pm_arena;
          state_[2 + i] = 0.0;
        }
      }
      break;
    }
  }
}

StepResult Env::step(const std::vector<double>& action) {
  if (static_cast<int>(action.size()) != action_dim())
    throw std::invalid_argument("step: action has wrong dimension");
  std::vector<double> a(action.size());
  for (size_t i = 0; i < action.size(); ++i) {
    if (!std::isfinite(action[i]))
      throw std::invalid_argument("step: non-finite action");
    a[i] = std::clamp(action[i], -1.0, 1.0);
  }
  for (int k = 0; k < cfg_.action_repeat; ++k) integrate(a);
  ++steps_;
  StepResult out;
  out.obs = observe();
  out.reward = task_reward(cfg_.task, state_, omega_.omega, cfg_);
  out.done = steps_ >= cfg_.episode_len;
  return out;
}

void write_trajectory_header(std::ostream& os, int obs_dim, int action_dim,
                             int omega_dim) {
  os << "step";
  for (int i = 0; i < obs_dim; ++i) os << ",obs_" << i;
  for (int i = 0; i < action_dim; ++i) os << ",action_" << i;
  os << ",reward";
  for (int i = 0; i < omega_dim; ++i) os << ",omega_" << i;
  os << "\n";
}

void write_trajectory_row(std::ostream& os, int step,
                          const std::vector<double>& obs,
                          const std::vector<double>& action, double reward,
                          const std::vector<double>& omega) {
  std::string line = std::to_string(step);
  for (double v : obs) append_csv_double(line, v);
  for (double v : action) append_csv_double(line, v);
  append_csv_double(line, reward);
  for (double v : omega) append_csv_double(line, v);
  line += "\n";
  os << line;
}

}  // namespace hipdreamer
