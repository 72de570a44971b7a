#pragma once

#include <array>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

// ODE-based continuous-control tasks where each episode draws a hidden
// physical parameter vector omega that modulates the dynamics and, for
// sorting and pointmass, the reward itself. Semi-implicit Euler at a fixed
// time step, a fixed action repeat, fixed-length episodes (done is purely
// step-count driven). All rewards lie in [0, 1].
//
// Per-task equations (state layout in brackets; g = gravity):
//
//   pendulum [theta, theta_dot], theta = 0 upright, wrapped to (-pi, pi]:
//     theta_dd = -(g/l) sin(theta - pi)
//                + (u_max a - damping theta_dot) / (omega m0 l^2)
//     reward   = (1 + cos theta) / 2
//
//   throwing [x, z, vx, vz] of the ball. Phase 1: the ball rides the tip of
//   a torque-driven arm (pivot at (0, pivot_h), length R) tracking the
//   commanded angle a*arm_range with a PD controller whose torque is
//   independent of the ball mass:
//     I phi_dd = clamp(kp (a arm_range - phi) - kd phi_dot, +-tau_max),
//     I = I_arm + omega m0 R^2.
//   The ball releases the first time phi crosses release_angle with
//   phi_dot > 0, then flies ballistically (z_dd = -g) and sticks where it
//   lands. reward = exp(-|x - x_goal|) at every step.
//
//   sorting [x, x_dot], a 1-D object pushed by a force actuator with
//   viscous friction:
//     omega m0 x_dd = f_max a - friction x_dot
//     goal = +0.2 if omega < 0.6 else -0.2; reward = exp(-|x - goal|)
//
//   pointmass [x, y, vx, vy], a 2-D double integrator in a box arena:
//     v_dot_i = omega_i motor_gain a_i - damping v_i
//     d = ||pos - goal||; reward = exp(-d) if omega_x + omega_y < 3,
//     else 1 - exp(-d)

namespace hipdreamer {

enum class Task { pendulum, throwing, sorting, pointmass };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct OmegaRange {
  std::vector<std::array<double, 2>> bounds;  // [lo, hi] per dimension
  int dims() const { return static_cast<int>(bounds.size()); }
  bool contains(const std::vector<double>& omega) const;
};

struct HiddenParams {
  std::vector<double> omega;
};

HiddenParams sample_omega(const OmegaRange& range, std::mt19937_64& rng);

struct EnvConfig {
  Task task = Task::pendulum;
  int episode_len = 200;    // control steps
  double dt = 0.02;         // integrator step, seconds
  int action_repeat = 2;    // integrator steps per control step
  double gravity = 9.81;

  // pendulum
  double pend_mass = 1.0;
  double pend_length = 1.0;
  double pend_torque_max = 3.0;
  double pend_damping = 0.1;

  // throwing
  double throw_arm_inertia = 0.05;
  double throw_arm_length = 0.5;
  double throw_pivot_height = 1.0;
  double throw_ball_mass = 1.0;
  double throw_kp = 12.0;
  double throw_kd = 0.6;
  double throw_torque_max = 4.0;
  double throw_arm_range = 2.4;      // rad, commanded angle = a * arm_range
  double throw_release_angle = 0.9;  // rad
  double throw_goal_x = 2.0;

  // sorting
  double sort_mass = 1.0;
  double sort_force_max = 1.5;
  double sort_friction = 1.0;
  double sort_start_lo = -2.2;
  double sort_start_hi = -1.8;

  // pointmass
  double pm_motor_gain = 1.0;
  double pm_damping = 1.0;
  double pm_arena = 1.0;  // positions clamped to [-arena, arena]
  double pm_goal_x = 0.5;
  double pm_goal_y = 0.5;

  static EnvConfig defaults(Task t);
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

// Pure reward functions, exposed for tests. `state` uses the layouts
// documented above; constants come from the default config of each task.
double task_reward(Task task, const std::vector<double>& state,
                   const std::vector<double>& omega, const EnvConfig& cfg);
double sorting_goal(double omega);  // +0.2 if omega < 0.6, else -0.2

// Value-semantic environment; all randomness comes from caller-owned rngs.
class Env {
 public:
  explicit Env(EnvConfig cfg);

  Task task() const { return cfg_.task; }
  const EnvConfig& config() const { return cfg_; }
  int obs_dim() const;
  int action_dim() const;
  int omega_dim() const;
  OmegaRange omega_range() const;
  // Fixed per-dimension scale used to normalize observations for learning.
  std::vector<double> obs_scale() const;

  // Samples a fresh omega (or validates the override) and draws an initial
  // state; returns the first observation.
  std::vector<double> reset(std::mt19937_64& rng);
  std::vector<double> reset(std::mt19937_64& rng,
                            const std::vector<double>& omega_override);

  // Actions are clipped to [-1, 1] per dimension; non-finite entries are
  // rejected. Integrates action_repeat steps and rewards the final state.
  StepResult step(const std::vector<double>& action);

  const std::vector<double>& omega() const { return omega_.omega; }
  const std::vector<double>& state() const { return state_; }
  int steps_done() const { return steps_; }

 private:
  std::vector<double> observe() const;
  void integrate(const std::vector<double>& action);

  EnvConfig cfg_;
  HiddenParams omega_;
  std::vector<double> state_;
  int steps_ = 0;
  bool released_ = false;  // throwing only
  bool landed_ = false;    // throwing only
};

// One row per control step:
// step,obs_0..obs_k,action_0..action_m,reward,omega_0..omega_n
void write_trajectory_header(std::ostream& os, int obs_dim, int action_dim,
                             int omega_dim);
void write_trajectory_row(std::ostream& os, int step,
                          const std::vector<double>& obs,
                          const std::vector<double>& action, double reward,
                          const std::vector<double>& omega);

}  // namespace hipdreamer
