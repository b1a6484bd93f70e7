#pragma once

// Reference policies: Random and Greedy for both benchmarks, an exact GRASP
// oracle for small grids and a shortest-plan MiniGrid planner.

#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gridplan/grasp_env.hpp"
#include "gridplan/minigrid_env.hpp"

namespace gridplan {

struct Unsolvable : Error {
  using Error::Error;
};

struct TooLarge : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Breadth-first path search

struct PathQuery {
  Pos from;
  Pos to;
  int width = 0;
  int height = 0;
  std::function<bool(Pos)> passable;  // may be entered; `to` is always enterable
  std::vector<Pos> directions;        // expansion order decides ties
};

struct PathResult {
  Pos goal;
  std::vector<std::size_t> steps;  // indices into the direction list
  std::vector<Pos> cells;          // visited cells after `from`, ending at goal
};

// First goal reached in BFS order. Goal cells may be entered even when not
// passable; the start cell is tested as a goal at distance 0.
template <typename Passable, typename IsGoal>
std::optional<PathResult> bfs_search(int width, int height, Pos from, const std::vector<Pos>& dirs,
                                     Passable&& passable, IsGoal&& is_goal) {
  const auto idx = [&](Pos p) { return static_cast<std::size_t>(p.row) * width + p.col; };
  std::vector<int> parent_dir(static_cast<std::size_t>(width) * height, -2);
  std::deque<Pos> queue{from};
  parent_dir[idx(from)] = -1;
  while (!queue.empty()) {
    const Pos u = queue.front();
    queue.pop_front();
    if (is_goal(u)) {
      PathResult res;
      res.goal = u;
      for (Pos p = u; parent_dir[idx(p)] >= 0;) {
        const auto d = static_cast<std::size_t>(parent_dir[idx(p)]);
        res.steps.push_back(d);
        res.cells.push_back(p);
        p = {p.row - dirs[d].row, p.col - dirs[d].col};
      }
      std::reverse(res.steps.begin(), res.steps.end());
      std::reverse(res.cells.begin(), res.cells.end());
      return res;
    }
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const Pos q = u + dirs[d];
      if (q.row < 0 || q.col < 0 || q.row >= height || q.col >= width) continue;
      if (parent_dir[idx(q)] != -2) continue;
      if (!passable(q) && !is_goal(q)) continue;
      parent_dir[idx(q)] = static_cast<int>(d);
      queue.push_back(q);
    }
  }
  return std::nullopt;
}

inline std::optional<PathResult> shortest_path(const PathQuery& q) {
  return bfs_search(q.width, q.height, q.from, q.directions, q.passable, [&](Pos p) { return p == q.to; });
}

// ---------------------------------------------------------------------------
// GRASP

inline std::vector<GraspAction> grasp_random_directions(bool diagonals) {
  std::vector<GraspAction> d = {GraspAction::Left, GraspAction::Right, GraspAction::Up, GraspAction::Down};
  if (diagonals)
    d.insert(d.end(), {GraspAction::UpLeft, GraspAction::UpRight, GraspAction::DownLeft, GraspAction::DownRight});
  return d;
}

// Six random moves, each followed by TAKE, then the way back and DROP.
// Directions leading off the grid or onto an obstacle are redrawn.
inline std::vector<GraspAction> grasp_random(const GraspInstance& inst, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const auto dirs = grasp_random_directions(inst.diagonals_allowed);
  std::vector<GraspAction> actions, taken;
  Pos p = inst.start;
  for (int i = 0; i < 6; ++i) {
    std::vector<GraspAction> ok;
    for (auto d : dirs) {
      const Pos q = p + delta(d);
      if (inst.in_bounds(q) && !inst.is_obstacle(q)) ok.push_back(d);
    }
    const GraspAction d = ok.empty() ? rng.pick(dirs) : rng.pick(ok);
    if (!ok.empty()) p = p + delta(d);
    taken.push_back(d);
    actions.push_back(d);
    actions.push_back(GraspAction::Take);
  }
  for (auto it = taken.rbegin(); it != taken.rend(); ++it) actions.push_back(opposite(*it));
  actions.push_back(GraspAction::Drop);
  return actions;
}

inline std::vector<Pos> grasp_greedy_directions(bool diagonals) {
  std::vector<Pos> d = {delta(GraspAction::Up), delta(GraspAction::Right), delta(GraspAction::Down),
                        delta(GraspAction::Left)};
  if (diagonals)
    d.insert(d.end(), {delta(GraspAction::UpRight), delta(GraspAction::DownRight), delta(GraspAction::DownLeft),
                       delta(GraspAction::UpLeft)});
  return d;
}

inline GraspAction grasp_action_for(Pos d) {
  for (auto a : kAllGraspActions)
    if (is_move(a) && delta(a) == d) return a;
  throw std::logic_error("no GRASP action for direction");
}

// Nearest-token BFS walk. Ignores carry limit and step cost; returns along
// the full movement history when the next trip would not fit the budget,
// or when no reachable token is left after at least one TAKE.
inline std::vector<GraspAction> grasp_greedy(const GraspInstance& inst) {
  const auto dirs = grasp_greedy_directions(inst.diagonals_allowed);
  std::vector<int> energy(inst.cell_count(), 0);
  for (const auto& [p, c] : inst.energy) energy[inst.index(p)] = c;
  std::vector<GraspAction> actions;
  std::vector<GraspAction> moves;
  Pos pos = inst.start;
  int remaining = inst.max_actions;
  bool took = false;

  auto go_home = [&] {
    for (auto it = moves.rbegin(); it != moves.rend(); ++it) actions.push_back(opposite(*it));
    actions.push_back(GraspAction::Drop);
  };

  while (remaining > 0) {
    auto found = bfs_search(
        inst.width, inst.height, pos, dirs, [&](Pos q) { return !inst.is_obstacle(q); },
        [&](Pos q) { return energy[inst.index(q)] > 0; });
    if (!found) {
      if (took) go_home();
      return actions;
    }
    const int path_len = static_cast<int>(found->steps.size());
    const int steps_to_return = static_cast<int>(moves.size());
    if (2 * path_len + steps_to_return + 2 > remaining) {
      go_home();
      return actions;
    }
    for (auto d : found->steps) {
      if (remaining <= 0) break;
      const GraspAction a = grasp_action_for(dirs[d]);
      pos = pos + dirs[d];
      actions.push_back(a);
      moves.push_back(a);
      --remaining;
    }
    actions.push_back(GraspAction::Take);
    --remaining;
    energy[inst.index(pos)] = 0;
    took = true;
  }
  return actions;
}

struct OracleResult {
  double score = 0.0;
  std::vector<GraspAction> actions;
};

inline constexpr int kOracleMaxCells = 36;
inline constexpr int kOracleMaxActions = 10;

namespace detail {

class GraspOracleSearch {
 public:
  explicit GraspOracleSearch(const GraspInstance& inst) : inst_(inst), start_idx_(inst.index(inst.start)) {}

  double value(const GraspState& s) {
    const int remaining = inst_.max_actions - s.actions_used;
    const double stop = s.cell_energy[start_idx_];
    if (remaining <= 0) return stop;
    // Banking a token with empty hands takes TAKE, at least one move back and
    // DROP, so with fewer than three actions left stopping is optimal.
    if (s.carried == 0 && (remaining < 3 || s.total_tokens() == s.cell_energy[start_idx_])) return stop;
    const std::string k = key(s);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second.first;
    double best = stop;
    int best_action = -1;
    for (auto a : kAllGraspActions) {
      if (a == GraspAction::Drop && s.carried == 0) continue;
      if (grasp_inadmissible(s, a, inst_)) continue;
      GraspState next = s;
      next.violations.clear();
      grasp_apply(next, a, inst_, StepMode::Strict);
      const double cost = (inst_.cost_basis == CostBasis::PerAction || is_move(a)) ? inst_.cost_per_step : 0.0;
      const double v = value(next) - cost;
      if (v > best + 1e-9) {
        best = v;
        best_action = static_cast<int>(a);
      }
    }
    memo_.emplace(k, std::make_pair(best, best_action));
    return best;
  }

  std::vector<GraspAction> plan(GraspState s) {
    std::vector<GraspAction> out;
    for (;;) {
      value(s);
      auto it = memo_.find(key(s));
      if (it == memo_.end() || it->second.second < 0) break;
      const auto a = static_cast<GraspAction>(it->second.second);
      out.push_back(a);
      grasp_apply(s, a, inst_, StepMode::Strict);
    }
    return out;
  }

 private:
  std::string key(const GraspState& s) const {
    std::string k;
    k.reserve(s.cell_energy.size() + 8);
    k.push_back(static_cast<char>(inst_.index(s.agent)));
    k.push_back(static_cast<char>(std::min(s.carried, 127)));
    k.push_back(static_cast<char>(s.actions_used));
    for (int e : s.cell_energy) k.push_back(static_cast<char>(std::min(e, 127)));
    return k;
  }

  const GraspInstance& inst_;
  std::size_t start_idx_;
  std::unordered_map<std::string, std::pair<double, int>> memo_;
};

}  // namespace detail

// Exact optimum over all action sequences (stopping early is allowed).
// Ties prefer stopping, then the earlier action in enum order.
inline OracleResult grasp_oracle(const GraspInstance& inst) {
  if (inst.width * inst.height > kOracleMaxCells || inst.max_actions > kOracleMaxActions)
    throw TooLarge("oracle limited to " + std::to_string(kOracleMaxCells) + " cells and " +
                   std::to_string(kOracleMaxActions) + " actions");
  inst.validate();
  detail::GraspOracleSearch search(inst);
  OracleResult r;
  const GraspState s0 = initial_state(inst);
  r.score = search.value(s0);
  r.actions = search.plan(s0);
  return r;
}

// ---------------------------------------------------------------------------
// MiniGrid

inline std::vector<MgAction> mg_random(const MgInstance&, std::uint64_t rng_seed, int num_moves = 100) {
  Rng rng(rng_seed);
  std::vector<MgAction> out;
  out.reserve(static_cast<std::size_t>(num_moves));
  for (int i = 0; i < num_moves; ++i) out.push_back(kAllMgActions[rng.below(kAllMgActions.size())]);
  return out;
}

namespace detail {

inline const std::vector<Pos>& mg_dirs() {
  static const std::vector<Pos> d = {delta(Dir::Up), delta(Dir::Right), delta(Dir::Down), delta(Dir::Left)};
  return d;
}

inline void append_turn(std::vector<MgAction>& out, Dir& facing, Dir want) {
  const int diff = (static_cast<int>(want) - static_cast<int>(facing) + 4) % 4;
  if (diff == 1) out.push_back(MgAction::Right);
  if (diff == 3) out.push_back(MgAction::Left);
  if (diff == 2) out.insert(out.end(), {MgAction::Right, MgAction::Right});
  facing = want;
}

struct GreedyWalker {
  CellGrid cells;
  bool door_open = false;
  Pos pos;
  Dir facing;
  std::vector<MgAction> actions;

  bool passable(Pos p) const {
    const CellKind k = cells[p.row][p.col];
    return k == CellKind::Empty || k == CellKind::Goal || (k == CellKind::Door && door_open);
  }

  // Walks the BFS path toward `target`; with `stop_adjacent` the last step
  // is replaced by a turn to face the target.
  void leg(Pos target, bool stop_adjacent, const char* what) {
    const int h = static_cast<int>(cells.size()), w = static_cast<int>(cells[0].size());
    auto path = bfs_search(
        w, h, pos, mg_dirs(), [&](Pos p) { return passable(p); }, [&](Pos p) { return p == target; });
    if (!path || path->steps.empty()) throw Unsolvable(std::string("no path to ") + what);
    const std::size_t walk = stop_adjacent ? path->steps.size() - 1 : path->steps.size();
    for (std::size_t i = 0; i < walk; ++i) {
      append_turn(actions, facing, static_cast<Dir>(path->steps[i]));
      actions.push_back(MgAction::Move);
      pos = pos + mg_dirs()[path->steps[i]];
    }
    if (stop_adjacent) append_turn(actions, facing, static_cast<Dir>(path->steps.back()));
  }
};

}  // namespace detail

// Key, PICKUP, door, UNLOCK; door_key then walks onto the GOAL and
// unlock_pickup walks up to the BOX and swaps the key for it with the turn
// sequence chosen by the last action.
inline std::vector<MgAction> mg_greedy(const MgInstance& inst) {
  const auto key = inst.find(CellKind::Key);
  const auto door = inst.find(CellKind::Door);
  if (!key || !door) throw Unsolvable("instance lacks a KEY or DOOR");
  detail::GreedyWalker w{inst.cells, false, inst.agent, inst.facing, {}};
  w.leg(*key, true, "KEY");
  w.actions.push_back(MgAction::Pickup);
  w.cells[key->row][key->col] = CellKind::Empty;
  w.leg(*door, true, "DOOR");
  w.actions.push_back(MgAction::Unlock);
  w.door_open = true;
  if (inst.task == MgTask::DoorKey) {
    const auto goal = inst.find(CellKind::Goal);
    if (!goal) throw Unsolvable("instance lacks a GOAL");
    w.leg(*goal, false, "GOAL");
  } else if (inst.task == MgTask::UnlockPickup) {
    const auto box = inst.find(CellKind::Box);
    if (!box) throw Unsolvable("instance lacks a BOX");
    w.leg(*box, true, "BOX");
    switch (w.actions.back()) {
      case MgAction::Move:
        w.actions.insert(w.actions.end(), {MgAction::Right, MgAction::Right, MgAction::Drop, MgAction::Right,
                                           MgAction::Right, MgAction::Pickup});
        break;
      case MgAction::Right:
        w.actions.insert(w.actions.end(), {MgAction::Right, MgAction::Drop, MgAction::Left, MgAction::Pickup});
        break;
      case MgAction::Left:
        w.actions.insert(w.actions.end(), {MgAction::Left, MgAction::Drop, MgAction::Right, MgAction::Pickup});
        break;
      default: break;
    }
  }
  return w.actions;
}

// Shortest successful action list by BFS over (agent, facing, holding,
// door, key cell, box cell). Written against its own compact transition
// rules; tests check its plans through mg_run.
inline std::optional<std::vector<MgAction>> mg_optimal(const MgInstance& inst) {
  const int w = inst.width();
  const auto idx = [&](Pos p) { return static_cast<std::uint64_t>(p.row * w + p.col); };
  const auto pos_of = [&](std::uint64_t i) { return Pos{static_cast<int>(i) / w, static_cast<int>(i) % w}; };
  constexpr std::uint64_t kNone = 0x7fff;  // held or absent

  struct S {
    std::uint64_t agent, key, box;
    int facing, holding;
    bool door;
  };
  auto encode = [](const S& s) {
    return s.agent | (s.key << 15) | (s.box << 30) | (static_cast<std::uint64_t>(s.facing) << 45) |
           (static_cast<std::uint64_t>(s.holding) << 47) | (static_cast<std::uint64_t>(s.door) << 49);
  };
  const auto key0 = inst.find(CellKind::Key);
  const auto box0 = inst.find(CellKind::Box);
  const auto goal = inst.find(CellKind::Goal);
  S start{idx(inst.agent), key0 ? idx(*key0) : kNone, box0 ? idx(*box0) : kNone, static_cast<int>(inst.facing), 0,
          false};

  auto static_kind = [&](Pos p) {
    const CellKind k = inst.at(p);
    return (k == CellKind::Key || k == CellKind::Box) ? CellKind::Empty : k;
  };
  auto success = [&](const S& s) {
    switch (inst.task) {
      case MgTask::Unlock: return s.door;
      case MgTask::DoorKey: return goal && s.agent == idx(*goal);
      case MgTask::UnlockPickup: return s.holding == 2;
    }
    return false;
  };

  std::unordered_map<std::uint64_t, std::pair<std::uint64_t, int>> parent;
  std::vector<S> frontier{start};
  parent[encode(start)] = {encode(start), -1};
  std::optional<S> found;
  if (success(start)) found = start;
  for (int depth = 0; !found && !frontier.empty() && depth < inst.max_steps; ++depth) {
    std::vector<S> next_frontier;
    for (const S& s : frontier) {
      for (int ai = 0; ai < 6 && !found; ++ai) {
        S n = s;
        const Pos f = pos_of(s.agent) + delta(static_cast<Dir>(s.facing));
        const std::uint64_t fi = idx(f);
        const CellKind fk = static_kind(f);
        const bool f_has_key = s.key == fi, f_has_box = s.box == fi;
        const bool f_empty = fk == CellKind::Empty && !f_has_key && !f_has_box;
        bool ok = true;
        switch (static_cast<MgAction>(ai)) {
          case MgAction::Left: n.facing = (s.facing + 3) % 4; break;
          case MgAction::Right: n.facing = (s.facing + 1) % 4; break;
          case MgAction::Move:
            ok = f_empty || (fk == CellKind::Goal) || (fk == CellKind::Door && s.door);
            n.agent = fi;
            break;
          case MgAction::Pickup:
            ok = s.holding == 0 && (f_has_key || f_has_box);
            if (f_has_key) n.key = kNone, n.holding = 1;
            if (f_has_box) n.box = kNone, n.holding = 2;
            break;
          case MgAction::Drop:
            ok = s.holding != 0 && f_empty;
            if (s.holding == 1) n.key = fi;
            if (s.holding == 2) n.box = fi;
            n.holding = 0;
            break;
          case MgAction::Unlock:
            ok = fk == CellKind::Door && !s.door && s.holding == 1;
            n.door = true;
            break;
        }
        if (!ok) continue;
        const auto code = encode(n);
        if (parent.count(code)) continue;
        parent[code] = {encode(s), ai};
        if (success(n)) {
          found = n;
          break;
        }
        next_frontier.push_back(n);
      }
      if (found) break;
    }
    frontier = std::move(next_frontier);
  }
  if (!found) return std::nullopt;
  std::vector<MgAction> plan;
  for (auto code = encode(*found);;) {
    const auto& [prev, a] = parent.at(code);
    if (a < 0) break;
    plan.push_back(static_cast<MgAction>(a));
    code = prev;
  }
  std::reverse(plan.begin(), plan.end());
  return plan;
}

}  // namespace gridplan
