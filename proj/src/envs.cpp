#include "rpexlab/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rpexlab {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_action(const Action& a, int dim) {
  if (static_cast<int>(a.size()) != dim) throw InvalidAction("action has wrong dimension");
  if (!all_finite(a)) throw InvalidAction("action is not finite");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

bool Transition::finite() const {
  return all_finite(s) && all_finite(a) && std::isfinite(r) && all_finite(s2);
}

Transition Episode::step(const Action& action, Rng& rng) {
  if (over()) throw std::logic_error("Episode::step called after the episode ended");
  StepResult res = env_->step_from(state_, action, rng);
  Transition t{state_, env_->canonical_action(action), res.reward, res.next_state, res.terminal};
  state_ = std::move(res.next_state);
  terminal_ = res.terminal;
  ++t_;
  return t;
}

// ---------------------------------------------------------------------------
// MazeLayout

bool MazeLayout::is_wall(int x, int y) const {
  return wall[static_cast<std::size_t>(y * width + x)];
}

std::string MazeLayout::to_text() const {
  std::string out = "horizon " + std::to_string(horizon) + "\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (Cell{x, y} == start) {
        out += 'S';
      } else if (Cell{x, y} == goal) {
        out += 'G';
      } else {
        out += is_wall(x, y) ? '#' : '.';
      }
    }
    out += '\n';
  }
  return out;
}

MazeLayout MazeLayout::parse(const std::string& text) {
  MazeLayout m;
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == ';') continue;
    if (line.rfind("horizon", 0) == 0) {
      m.horizon = std::stoi(line.substr(7));
      if (m.horizon <= 0) throw std::invalid_argument("maze horizon must be positive");
      continue;
    }
    rows.push_back(line);
  }
  if (rows.empty()) throw std::invalid_argument("maze layout has no rows");
  m.height = static_cast<int>(rows.size());
  m.width = static_cast<int>(rows.front().size());
  m.wall.assign(static_cast<std::size_t>(m.width * m.height), false);
  bool have_start = false;
  bool have_goal = false;
  for (int y = 0; y < m.height; ++y) {
    if (static_cast<int>(rows[y].size()) != m.width) throw std::invalid_argument("maze rows differ in width");
    for (int x = 0; x < m.width; ++x) {
      const char c = rows[y][x];
      switch (c) {
        case '.':
          break;
        case '#':
          m.wall[static_cast<std::size_t>(y * m.width + x)] = true;
          break;
        case 'S':
          if (have_start) throw std::invalid_argument("maze has more than one start");
          m.start = {x, y};
          have_start = true;
          break;
        case 'G':
          if (have_goal) throw std::invalid_argument("maze has more than one goal");
          m.goal = {x, y};
          have_goal = true;
          break;
        default:
          throw std::invalid_argument(std::string("unknown maze character '") + c + "'");
      }
    }
  }
  if (!have_start || !have_goal) throw std::invalid_argument("maze needs exactly one S and one G");
  return m;
}

MazeLayout MazeLayout::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open maze layout " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

MazeLayout MazeLayout::default_layout() {
  return parse(
      "horizon 100\n"
      "S..#....\n"
      "...#....\n"
      "...#....\n"
      "...#....\n"
      "...#....\n"
      "...#....\n"
      "........\n"
      ".......G\n");
}

// ---------------------------------------------------------------------------
// GridMaze

GridMaze::GridMaze(MazeLayout layout) : layout_(std::move(layout)) {
  if (layout_.width <= 0 || layout_.height <= 0) throw std::invalid_argument("empty maze");
  if (layout_.is_wall(layout_.start.x, layout_.start.y) || layout_.is_wall(layout_.goal.x, layout_.goal.y)) {
    throw std::invalid_argument("maze start/goal on a wall");
  }
  dist_.assign(static_cast<std::size_t>(layout_.width * layout_.height), -1);
  std::deque<Cell> queue{layout_.goal};
  dist_[static_cast<std::size_t>(layout_.goal.y * layout_.width + layout_.goal.x)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    const int d = dist_[static_cast<std::size_t>(c.y * layout_.width + c.x)];
    for (int k = 0; k < kNumDirections; ++k) {
      // Moves are symmetric, so distances from the goal equal distances to it.
      const Cell o = offset(k);
      const Cell n{c.x + o.x, c.y + o.y};
      if (!layout_.inside(n.x, n.y) || layout_.is_wall(n.x, n.y)) continue;
      auto& slot = dist_[static_cast<std::size_t>(n.y * layout_.width + n.x)];
      if (slot >= 0) continue;
      slot = d + 1;
      queue.push_back(n);
    }
  }
  if (distance_to_goal(layout_.start) < 0) throw std::invalid_argument("maze goal unreachable from start");
}

Cell GridMaze::offset(int index) {
  static constexpr std::array<Cell, kNumDirections> kOffsets = {
      Cell{1, 0}, Cell{1, 1}, Cell{0, 1}, Cell{-1, 1}, Cell{-1, 0}, Cell{-1, -1}, Cell{0, -1}, Cell{1, -1}};
  return kOffsets.at(static_cast<std::size_t>(index));
}

Action GridMaze::direction(int index) {
  const Cell o = offset(index);
  const double norm = std::hypot(static_cast<double>(o.x), static_cast<double>(o.y));
  return {o.x / norm, o.y / norm};
}

int GridMaze::snap(const Action& action) {
  check_action(action, 2);
  if (action[0] == 0.0 && action[1] == 0.0) throw InvalidAction("zero action has no direction");
  const double angle = std::atan2(action[1], action[0]);
  const int k = static_cast<int>(std::lround(angle / (std::numbers::pi / 4.0)));
  return ((k % kNumDirections) + kNumDirections) % kNumDirections;
}

Cell GridMaze::state_cell(const State& s) {
  return {static_cast<int>(std::lround(s.at(0))), static_cast<int>(std::lround(s.at(1)))};
}

int GridMaze::distance_to_goal(Cell c) const {
  if (!layout_.inside(c.x, c.y)) return -1;
  return dist_[static_cast<std::size_t>(c.y * layout_.width + c.x)];
}

std::vector<Cell> GridMaze::free_cells() const {
  std::vector<Cell> out;
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      if (!layout_.is_wall(x, y)) out.push_back({x, y});
    }
  }
  return out;
}

State GridMaze::reset(Rng&) const { return cell_state(layout_.start); }

StepResult GridMaze::step_from(const State& state, const Action& action, Rng&) const {
  if (!state_in_bounds(state)) throw std::invalid_argument("GridMaze state is not a free cell");
  const int k = snap(action);
  const Cell c = state_cell(state);
  const Cell o = offset(k);
  Cell n{c.x + o.x, c.y + o.y};
  if (!layout_.inside(n.x, n.y) || layout_.is_wall(n.x, n.y)) n = c;
  StepResult res;
  res.next_state = cell_state(n);
  res.reward = -std::hypot(static_cast<double>(n.x - layout_.goal.x), static_cast<double>(n.y - layout_.goal.y));
  res.terminal = n == layout_.goal;
  return res;
}

bool GridMaze::state_in_bounds(const State& state) const {
  if (state.size() != 2 || !all_finite(state)) return false;
  const Cell c = state_cell(state);
  return layout_.inside(c.x, c.y) && !layout_.is_wall(c.x, c.y) && state[0] == c.x && state[1] == c.y;
}

Action GridMaze::scripted_action(const State& state, Rng&) const {
  const Cell c = state_cell(state);
  int best = 0;
  int best_d = distance_to_goal(c);
  for (int k = 0; k < kNumDirections; ++k) {
    const Cell o = offset(k);
    const int d = distance_to_goal({c.x + o.x, c.y + o.y});
    if (d >= 0 && (best_d < 0 || d < best_d)) {
      best = k;
      best_d = d;
    }
  }
  return direction(best);
}

Action GridMaze::random_action(Rng& rng) const {
  return direction(static_cast<int>(uniform_index(rng, kNumDirections)));
}

// ---------------------------------------------------------------------------
// PointMass

PointMass::PointMass(PointMassParams params) : params_(params) {
  if (!(params_.dt > 0.0) || params_.horizon <= 0 || !(params_.arena > 0.0)) {
    throw std::invalid_argument("invalid point-mass parameters");
  }
}

State PointMass::reset(Rng& rng) const {
  const double s = params_.start_spread;
  return {params_.start_x + uniform(rng, -s, s), params_.start_y + uniform(rng, -s, s), 0.0, 0.0};
}

StepResult PointMass::step_from(const State& state, const Action& action, Rng&) const {
  if (state.size() != 4 || !all_finite(state)) throw std::invalid_argument("PointMass state must be 4 finite values");
  check_action(action, 2);
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const double dt = params_.dt;
  double x = state[0] + dt * state[2];
  double y = state[1] + dt * state[3];
  double vx = state[2] + dt * (ax - params_.damping * state[2]);
  double vy = state[3] + dt * (ay - params_.damping * state[3]);
  vx = std::clamp(vx, -params_.max_speed, params_.max_speed);
  vy = std::clamp(vy, -params_.max_speed, params_.max_speed);
  if (std::abs(x) > params_.arena) {
    x = std::clamp(x, -params_.arena, params_.arena);
    vx = 0.0;
  }
  if (std::abs(y) > params_.arena) {
    y = std::clamp(y, -params_.arena, params_.arena);
    vy = 0.0;
  }
  StepResult res;
  res.next_state = {x, y, vx, vy};
  const double dist = std::hypot(x - params_.goal_x, y - params_.goal_y);
  res.reward = -dist - params_.action_cost * (ax * ax + ay * ay);
  res.terminal = dist < params_.goal_radius;
  return res;
}

bool PointMass::state_in_bounds(const State& state) const {
  if (state.size() != 4 || !all_finite(state)) return false;
  return std::abs(state[0]) <= params_.arena && std::abs(state[1]) <= params_.arena &&
         std::abs(state[2]) <= params_.max_speed && std::abs(state[3]) <= params_.max_speed;
}

Action PointMass::scripted_action(const State& state, Rng&) const {
  const double ax = params_.kp * (params_.goal_x - state[0]) - params_.kd * state[2];
  const double ay = params_.kp * (params_.goal_y - state[1]) - params_.kd * state[3];
  return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
}

Action PointMass::canonical_action(const Action& action) const {
  check_action(action, 2);
  return {std::clamp(action[0], -1.0, 1.0), std::clamp(action[1], -1.0, 1.0)};
}

Action PointMass::random_action(Rng& rng) const { return {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)}; }

std::unique_ptr<Environment> make_env(const std::string& id) {
  if (id == "gridmaze") return std::make_unique<GridMaze>();
  if (id.rfind("gridmaze:", 0) == 0) return std::make_unique<GridMaze>(MazeLayout::load(id.substr(9)));
  if (id == "pointmass") return std::make_unique<PointMass>();
  throw std::invalid_argument("unknown environment id '" + id + "'");
}

// ---------------------------------------------------------------------------
// Datasets

std::string BehaviorSpec::id() const { return "mixture(p_opt=" + format_double(p_opt) + ")"; }

TransitionDataset collect_dataset(const Environment& env, const BehaviorSpec& behavior, std::size_t n,
                                  std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("dataset size must be positive");
  if (!(behavior.p_opt >= 0.0 && behavior.p_opt <= 1.0)) throw std::invalid_argument("p_opt must lie in [0,1]");
  TransitionDataset ds;
  ds.env_id = env.id();
  ds.behavior_id = behavior.id();
  ds.seed = seed;
  ds.state_dim = env.state_dim();
  ds.action_dim = env.action_dim();
  ds.records.reserve(n);
  Rng rng(seed);
  while (ds.records.size() < n) {
    Episode ep(env, env.reset(rng));
    while (!ep.over() && ds.records.size() < n) {
      const bool scripted = uniform01(rng) < behavior.p_opt;
      const Action a = scripted ? env.scripted_action(ep.state(), rng) : env.random_action(rng);
      ds.records.push_back(ep.step(a, rng));
    }
  }
  return ds;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& tok) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw std::invalid_argument("bad number '" + tok + "' in dataset");
  }
  return v;
}

std::string header_field(const std::string& header, const std::string& key) {
  const std::string needle = " " + key + "=";
  const auto pos = header.find(needle);
  if (pos == std::string::npos) throw std::invalid_argument("dataset header lacks " + key);
  const auto start = pos + needle.size();
  const auto end = header.find(' ', start);
  return header.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::string format_dataset(const TransitionDataset& ds) {
  std::string out = "rpexlab-dataset v1 env=" + ds.env_id + " behavior=" + ds.behavior_id +
                    " seed=" + std::to_string(ds.seed) + " n=" + std::to_string(ds.size()) +
                    " state_dim=" + std::to_string(ds.state_dim) + " action_dim=" + std::to_string(ds.action_dim) +
                    "\n";
  for (const auto& t : ds.records) {
    std::string line;
    for (double v : t.s) line += format_double(v) + ' ';
    for (double v : t.a) line += format_double(v) + ' ';
    line += format_double(t.r) + ' ';
    for (double v : t.s2) line += format_double(v) + ' ';
    line += t.done ? '1' : '0';
    out += line;
    out += '\n';
  }
  return out;
}

TransitionDataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header) || header.rfind("rpexlab-dataset v1", 0) != 0) {
    throw std::invalid_argument("not a dataset file (bad header)");
  }
  TransitionDataset ds;
  ds.env_id = header_field(header, "env");
  ds.behavior_id = header_field(header, "behavior");
  ds.seed = std::stoull(header_field(header, "seed"));
  const std::size_t n = std::stoull(header_field(header, "n"));
  ds.state_dim = std::stoi(header_field(header, "state_dim"));
  ds.action_dim = std::stoi(header_field(header, "action_dim"));
  if (ds.state_dim <= 0 || ds.action_dim <= 0) throw std::invalid_argument("dataset dimensions must be positive");
  const std::size_t fields = static_cast<std::size_t>(2 * ds.state_dim + ds.action_dim + 2);
  ds.records.reserve(n);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(tok);
    if (toks.size() != fields) throw std::invalid_argument("dataset record has wrong field count");
    Transition t;
    std::size_t k = 0;
    for (int i = 0; i < ds.state_dim; ++i) t.s.push_back(parse_double(toks[k++]));
    for (int i = 0; i < ds.action_dim; ++i) t.a.push_back(parse_double(toks[k++]));
    t.r = parse_double(toks[k++]);
    for (int i = 0; i < ds.state_dim; ++i) t.s2.push_back(parse_double(toks[k++]));
    const std::string& d = toks[k];
    if (d != "0" && d != "1") throw std::invalid_argument("dataset done flag must be 0 or 1");
    t.done = d == "1";
    ds.records.push_back(std::move(t));
  }
  if (ds.records.size() != n) throw std::invalid_argument("dataset record count disagrees with header");
  return ds;
}

void write_dataset(const TransitionDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << format_dataset(ds);
  if (!out) throw std::runtime_error("write failed for " + path);
}

TransitionDataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace rpexlab
