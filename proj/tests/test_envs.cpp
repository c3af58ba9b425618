#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rpexlab/envs.hpp"

using namespace rpexlab;

namespace {

double rollout_return(const Environment& env, bool scripted, Rng& rng) {
  Episode ep(env, env.reset(rng));
  double total = 0.0;
  while (!ep.over()) {
    const Action a = scripted ? env.scripted_action(ep.state(), rng) : env.random_action(rng);
    total += ep.step(a, rng).r;
  }
  return total;
}

}  // namespace

TEST(GridMaze, ResetAndGoalStep) {
  const GridMaze maze;
  Rng rng(1);
  EXPECT_EQ(maze.reset(rng), (State{0.0, 0.0}));
  const StepResult r = maze.step_from({6.0, 6.0}, {1.0, 1.0}, rng);
  EXPECT_EQ(r.next_state, (State{7.0, 7.0}));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_TRUE(r.terminal);
}

TEST(GridMaze, WallsAndEdgesBlock) {
  const GridMaze maze;
  Rng rng(2);
  const StepResult r = maze.step_from({2.0, 0.0}, {1.0, 0.0}, rng);
  EXPECT_EQ(r.next_state, (State{2.0, 0.0}));
  EXPECT_NEAR(r.reward, -std::hypot(5.0, 7.0), 1e-15);
  EXPECT_FALSE(r.terminal);
  EXPECT_EQ(maze.step_from({0.0, 0.0}, {-1.0, -0.2}, rng).next_state, (State{0.0, 0.0}));
  EXPECT_THROW(maze.step_from({0.0, 0.0}, {0.0, 0.0}, rng), InvalidAction);
  EXPECT_THROW(maze.step_from({0.0, 0.0}, {NAN, 1.0}, rng), InvalidAction);
}

TEST(GridMaze, RewardZeroOnlyAtGoal) {
  const GridMaze maze;
  Rng rng(3);
  for (const Cell c : maze.free_cells()) {
    for (int d = 0; d < GridMaze::kNumDirections; ++d) {
      const StepResult r = maze.step_from(GridMaze::cell_state(c), GridMaze::direction(d), rng);
      if (GridMaze::state_cell(r.next_state) == maze.layout().goal) {
        EXPECT_EQ(r.reward, 0.0);
        EXPECT_TRUE(r.terminal);
      } else {
        EXPECT_LT(r.reward, 0.0);
      }
    }
  }
}

TEST(GridMaze, SnapDirections) {
  for (int d = 0; d < GridMaze::kNumDirections; ++d) {
    EXPECT_EQ(GridMaze::snap(GridMaze::direction(d)), d);
    const Action a = GridMaze::direction(d);
    EXPECT_NEAR(std::hypot(a[0], a[1]), 1.0, 1e-15);
  }
  EXPECT_EQ(GridMaze::snap({1.0, 0.3}), 0);
  EXPECT_EQ(GridMaze::snap({0.1, 0.9}), 2);
  EXPECT_EQ(GridMaze::snap({-0.7, -0.72}), 5);
}

TEST(GridMaze, LayoutParseRoundTripAndValidation) {
  const MazeLayout def = MazeLayout::default_layout();
  const MazeLayout back = MazeLayout::parse(def.to_text());
  EXPECT_EQ(back.to_text(), def.to_text());
  EXPECT_EQ(back.horizon, def.horizon);
  const GridMaze maze(back);
  EXPECT_GT(maze.distance_to_goal(maze.layout().start), 0);
  EXPECT_THROW(GridMaze(MazeLayout::parse("S#.\n##.\n..G\n")), std::invalid_argument);
  EXPECT_THROW(MazeLayout::parse("S..\n...\n"), std::invalid_argument);
  const MazeLayout small = MazeLayout::parse("; tiny\nhorizon 7\nS.\n.G\n");
  EXPECT_EQ(small.horizon, 7);
  EXPECT_EQ(GridMaze(small).distance_to_goal(small.start), 1);
}

TEST(GridMaze, ScriptedDatasetFollowsShortestPaths) {
  const GridMaze maze;
  const int shortest = maze.distance_to_goal(maze.layout().start);
  const TransitionDataset ds = collect_dataset(maze, BehaviorSpec{1.0}, 2000, 4);
  int len = 0, episodes = 0;
  for (const auto& t : ds.records) {
    ++len;
    EXPECT_TRUE(maze.state_in_bounds(t.s));
    if (t.done) {
      EXPECT_EQ(len, shortest);
      len = 0;
      ++episodes;
    }
  }
  EXPECT_GT(episodes, 10);
}

TEST(GridMaze, RandomDatasetActionsUniform) {
  const GridMaze maze;
  const std::size_t n = 100000;
  const TransitionDataset ds = collect_dataset(maze, BehaviorSpec{0.0}, n, 5);
  std::vector<double> counts(GridMaze::kNumDirections, 0.0);
  for (const auto& t : ds.records) counts[static_cast<std::size_t>(GridMaze::snap(t.a))] += 1.0;
  const double p = 1.0 / GridMaze::kNumDirections;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (double c : counts) EXPECT_LT(std::abs(c - n * p), 3.0 * sigma);
}

TEST(GridMaze, ScriptedBeatsRandom) {
  const GridMaze maze;
  Rng rng(6);
  double scripted = 0.0, random = 0.0;
  for (int i = 0; i < 100; ++i) {
    scripted += rollout_return(maze, true, rng);
    random += rollout_return(maze, false, rng);
  }
  EXPECT_GT(scripted, random);
}

TEST(PointMass, ZeroActionFromRest) {
  const PointMass pm;
  Rng rng(7);
  const State s{0.2, -0.4, 0.0, 0.0};
  const StepResult r = pm.step_from(s, {0.0, 0.0}, rng);
  EXPECT_EQ(r.next_state, s);
  EXPECT_NEAR(r.reward, -std::hypot(0.2 - 0.7, -0.4 - 0.7), 1e-15);
}

TEST(PointMass, EulerStepHandValue) {
  const PointMass pm;
  Rng rng(8);
  const State s{0.1, 0.2, 0.5, -0.3};
  const Action a{0.4, -1.0};
  const StepResult r = pm.step_from(s, a, rng);
  const double x = 0.1 + 0.1 * 0.5, y = 0.2 + 0.1 * -0.3;
  const double vx = 0.5 + 0.1 * (0.4 - 0.5 * 0.5), vy = -0.3 + 0.1 * (-1.0 - 0.5 * -0.3);
  EXPECT_NEAR(r.next_state[0], x, 1e-15);
  EXPECT_NEAR(r.next_state[1], y, 1e-15);
  EXPECT_NEAR(r.next_state[2], vx, 1e-15);
  EXPECT_NEAR(r.next_state[3], vy, 1e-15);
  EXPECT_NEAR(r.reward, -std::hypot(x - 0.7, y - 0.7) - 0.01 * (0.16 + 1.0), 1e-15);
}

TEST(PointMass, ArenaClipAndDeterminism) {
  const PointMass pm;
  Rng rng(9);
  const StepResult r = pm.step_from({0.99, 0.0, 1.5, 0.0}, {1.0, 0.0}, rng);
  EXPECT_EQ(r.next_state[0], 1.0);
  EXPECT_EQ(r.next_state[2], 0.0);
  EXPECT_TRUE(pm.state_in_bounds(r.next_state));
  Rng a(10), b(10);
  EXPECT_EQ(rollout_return(pm, false, a), rollout_return(pm, false, b));
  Rng c(11), d(11);
  EXPECT_EQ(pm.reset(c), pm.reset(d));
}

TEST(PointMass, ScriptedBeatsRandom) {
  const PointMass pm;
  Rng rng(12);
  double scripted = 0.0, random = 0.0;
  for (int i = 0; i < 100; ++i) {
    scripted += rollout_return(pm, true, rng);
    random += rollout_return(pm, false, rng);
  }
  EXPECT_GT(scripted, random);
}

TEST(Dataset, FileRoundTripBitExact) {
  for (const char* id : {"gridmaze", "pointmass"}) {
    const auto env = make_env(id);
    const TransitionDataset ds = collect_dataset(*env, BehaviorSpec{0.5}, 500, 13);
    EXPECT_EQ(ds.size(), 500u);
    EXPECT_EQ(parse_dataset(format_dataset(ds)), ds);
    const auto path = std::filesystem::temp_directory_path() / (std::string("rpexlab_ds_") + id + ".txt");
    write_dataset(ds, path.string());
    EXPECT_EQ(read_dataset(path.string()), ds);
    std::filesystem::remove(path);
  }
  for (double v : {0.1, -1e-300, 1.0 / 3.0, 6.02214076e23}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_THROW(parse_dataset("garbage\n"), std::invalid_argument);
}

TEST(Dataset, CollectionDeterministic) {
  const auto env = make_env("pointmass");
  EXPECT_EQ(collect_dataset(*env, BehaviorSpec{0.5}, 300, 14), collect_dataset(*env, BehaviorSpec{0.5}, 300, 14));
  EXPECT_NE(collect_dataset(*env, BehaviorSpec{0.5}, 300, 14), collect_dataset(*env, BehaviorSpec{0.5}, 300, 15));
  EXPECT_THROW(make_env("nope"), std::invalid_argument);
}
