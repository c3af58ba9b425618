#pragma once

// Desk-scale environments, scripted behavior policies and the transition
// dataset file format.
//
// Environments are pure dynamics: step_from(state, action) never depends on
// hidden members, so a rollout is reproducible from its start state and seed.
// Episode bookkeeping (time step, horizon) lives in Episode.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rpexlab/neural.hpp"
#include "rpexlab/rng.hpp"

namespace rpexlab {

using State = std::vector<double>;
using Action = std::vector<double>;

struct Transition {
  State s;
  Action a;
  double r = 0.0;
  State s2;
  bool done = false;

  bool operator==(const Transition& other) const = default;
  bool finite() const;
};

struct TransitionDataset {
  std::string env_id;
  std::string behavior_id;
  std::uint64_t seed = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<Transition> records;

  std::size_t size() const { return records.size(); }
  bool operator==(const TransitionDataset& other) const = default;
};

struct StepResult {
  State next_state;
  double reward = 0.0;
  /// Goal reached. Time-limit truncation is reported separately by Episode.
  bool terminal = false;
};

class InvalidAction : public std::invalid_argument {
 public:
  explicit InvalidAction(const std::string& what) : std::invalid_argument(what) {}
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string id() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual ActionBounds action_bounds() const = 0;
  virtual int horizon() const = 0;

  virtual State reset(Rng& rng) const = 0;
  virtual StepResult step_from(const State& state, const Action& action, Rng& rng) const = 0;
  virtual bool state_in_bounds(const State& state) const = 0;

  /// Near-optimal hand-written controller.
  virtual Action scripted_action(const State& state, Rng& rng) const = 0;
  virtual Action random_action(Rng& rng) const = 0;
  /// The action the dynamics actually execute (snapped or clipped); this is
  /// what transitions record.
  virtual Action canonical_action(const Action& action) const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

/// Time-limited rollout state over an Environment.
class Episode {
 public:
  Episode(const Environment& env, State start) : env_(&env), state_(std::move(start)) {}

  const State& state() const { return state_; }
  int t() const { return t_; }
  bool over() const { return terminal_ || t_ >= env_->horizon(); }
  bool terminal() const { return terminal_; }

  /// Steps the environment; returns the transition with the canonical
  /// action and done = terminal.
  Transition step(const Action& action, Rng& rng);

 private:
  const Environment* env_;
  State state_;
  int t_ = 0;
  bool terminal_ = false;
};

// ---------------------------------------------------------------------------

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell& other) const = default;
};

/// Layout text format:
///   optional line "horizon N"
///   then `height` rows of `width` characters, first row is y = 0:
///   '.' free, '#' wall, 'S' start (free), 'G' goal (free).
/// Lines starting with ';' are comments.
struct MazeLayout {
  int width = 0;
  int height = 0;
  std::vector<bool> wall;  // row-major, index y * width + x
  Cell start;
  Cell goal;
  int horizon = 100;

  bool is_wall(int x, int y) const;
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::string to_text() const;
  static MazeLayout parse(const std::string& text);
  static MazeLayout load(const std::string& path);
  /// 8x8 with a vertical wall at x = 3 spanning y = 0..5; start (0,0), goal (7,7).
  static MazeLayout default_layout();
};

/// Grid maze with continuous coordinate states and eight compass moves.
///
/// Actions are 2-vectors snapped to the nearest compass direction by angle.
/// Moving into a wall or off the grid leaves the agent in place. Reward is
/// minus the Euclidean distance from the resulting position to the goal.
class GridMaze final : public Environment {
 public:
  static constexpr int kNumDirections = 8;

  explicit GridMaze(MazeLayout layout = MazeLayout::default_layout());

  std::string id() const override { return "gridmaze"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  ActionBounds action_bounds() const override { return ActionBounds::symmetric(2, 1.0); }
  int horizon() const override { return layout_.horizon; }

  State reset(Rng& rng) const override;
  StepResult step_from(const State& state, const Action& action, Rng& rng) const override;
  bool state_in_bounds(const State& state) const override;
  Action scripted_action(const State& state, Rng& rng) const override;
  Action random_action(Rng& rng) const override;
  Action canonical_action(const Action& action) const override { return direction(snap(action)); }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<GridMaze>(*this); }

  const MazeLayout& layout() const { return layout_; }
  /// Direction index 0..7 (counter-clockwise from +x) nearest to the action.
  static int snap(const Action& action);
  /// Unit vector of a direction index.
  static Action direction(int index);
  static Cell offset(int index);

  static State cell_state(Cell c) { return {static_cast<double>(c.x), static_cast<double>(c.y)}; }
  static Cell state_cell(const State& s);
  /// Shortest-path length in moves from a cell to the goal, or -1 if unreachable.
  int distance_to_goal(Cell c) const;
  std::vector<Cell> free_cells() const;

 private:
  MazeLayout layout_;
  std::vector<int> dist_;  // BFS distance to goal, row-major
};

struct PointMassParams {
  double dt = 0.1;
  double damping = 0.5;
  double arena = 1.0;       // positions clipped to [-arena, arena]
  double max_speed = 2.0;   // velocities clipped to [-max_speed, max_speed]
  double goal_x = 0.7;
  double goal_y = 0.7;
  double goal_radius = 0.1;
  double start_x = -0.7;
  double start_y = -0.7;
  double start_spread = 0.1;  // start position uniform in a square of this half-width
  double action_cost = 0.01;
  int horizon = 200;
  /// Gains of the scripted proportional-derivative controller.
  double kp = 2.0;
  double kd = 1.5;
};

/// Planar point mass: state (x, y, vx, vy), action = acceleration in [-1,1]^2.
///
/// Explicit Euler: p' = p + dt v, v' = v + dt (a - damping v). Positions
/// leaving the arena are clipped and the offending velocity component zeroed.
/// Reward is -||p' - goal|| - action_cost ||a||^2; the episode terminates
/// inside the goal radius. Out-of-range action components are clipped.
class PointMass final : public Environment {
 public:
  explicit PointMass(PointMassParams params = {});

  std::string id() const override { return "pointmass"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  ActionBounds action_bounds() const override { return ActionBounds::symmetric(2, 1.0); }
  int horizon() const override { return params_.horizon; }

  State reset(Rng& rng) const override;
  StepResult step_from(const State& state, const Action& action, Rng& rng) const override;
  bool state_in_bounds(const State& state) const override;
  Action scripted_action(const State& state, Rng& rng) const override;
  Action random_action(Rng& rng) const override;
  Action canonical_action(const Action& action) const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMass>(*this); }

  const PointMassParams& params() const { return params_; }

 private:
  PointMassParams params_;
};

/// "gridmaze", "gridmaze:<layout path>" or "pointmass".
std::unique_ptr<Environment> make_env(const std::string& id);

// ---------------------------------------------------------------------------

struct BehaviorSpec {
  /// Probability of following the scripted controller at each step;
  /// otherwise a uniform random action is taken.
  double p_opt = 0.5;
  std::string id() const;
};

TransitionDataset collect_dataset(const Environment& env, const BehaviorSpec& behavior,
                                  std::size_t n, std::uint64_t seed);

/// Header line:
///   rpexlab-dataset v1 env=<id> behavior=<id> seed=<u64> n=<N> state_dim=<d> action_dim=<k>
/// followed by N lines "s... a... r s2... done" with doubles printed to 17
/// significant digits and done as 0/1.
void write_dataset(const TransitionDataset& ds, const std::string& path);
TransitionDataset read_dataset(const std::string& path);
std::string format_dataset(const TransitionDataset& ds);
TransitionDataset parse_dataset(const std::string& text);

/// Decimal text with 17 significant digits; parses back to the same double.
std::string format_double(double v);

}  // namespace rpexlab
