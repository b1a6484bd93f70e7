#pragma once

// Seeded two-room MiniGrid instance generation.

#include <string>
#include <vector>

#include "gridplan/baselines.hpp"
#include "gridplan/minigrid_env.hpp"

namespace gridplan {

struct MgDims {
  int height = 0;
  int width = 0;
};

inline MgDims mg_default_dims(MgTask task) {
  switch (task) {
    case MgTask::Unlock: return {6, 11};
    case MgTask::DoorKey: return {8, 8};
    case MgTask::UnlockPickup: return {6, 11};
  }
  return {6, 11};
}

inline constexpr int kMgMaxAttempts = 1000;

// One candidate layout: vertical dividing wall with a single DOOR, agent and
// KEY in the left room, GOAL or BOX in the right room, uniform facing.
inline MgInstance mg_make_layout(MgTask task, MgDims dims, Rng& rng) {
  const int h = dims.height, w = dims.width;
  // Interior columns 1..w-2; the wall column leaves >= 2 interior columns on each side.
  const int wall_lo = 3, wall_hi = w - 4;
  if (h < 3 || wall_hi < wall_lo)
    throw GenError("dims " + std::to_string(h) + "x" + std::to_string(w) + " too small for two rooms");
  MgInstance inst;
  inst.task = task;
  inst.cells.assign(static_cast<std::size_t>(h), std::vector<CellKind>(static_cast<std::size_t>(w), CellKind::Empty));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (r == 0 || c == 0 || r == h - 1 || c == w - 1) inst.cells[r][c] = CellKind::Wall;
  const int wall = wall_lo + static_cast<int>(rng.below(static_cast<std::size_t>(wall_hi - wall_lo + 1)));
  for (int r = 1; r < h - 1; ++r) inst.cells[r][wall] = CellKind::Wall;
  const int door_row = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(h - 2)));
  inst.cells[door_row][wall] = CellKind::Door;

  std::vector<Pos> left, right;
  for (int r = 1; r < h - 1; ++r) {
    for (int c = 1; c < wall; ++c) left.push_back({r, c});
    for (int c = wall + 1; c < w - 1; ++c) right.push_back({r, c});
  }
  inst.agent = rng.pick(left);
  Pos key = inst.agent;
  while (key == inst.agent) key = rng.pick(left);
  inst.cells[key.row][key.col] = CellKind::Key;
  if (task != MgTask::Unlock) {
    const Pos target = rng.pick(right);
    inst.cells[target.row][target.col] = task == MgTask::DoorKey ? CellKind::Goal : CellKind::Box;
  }
  inst.facing = kAllDirs[rng.below(4)];
  inst.max_steps = default_max_steps(w, h);
  return inst;
}

inline std::string mg_instance_id(MgTask task, std::uint64_t seed, int index) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s-%llu-%04d", std::string(to_string(task)).c_str(),
                static_cast<unsigned long long>(seed), index);
  return buf;
}

// Candidates are redrawn until greedy succeeds (unlock, door_key) or the
// optimal planner finds a plan (unlock_pickup, where greedy may fail).
inline std::vector<MgInstance> mg_generate(MgTask task, int count, MgDims dims, std::uint64_t seed) {
  if (count < 0) throw GenError("count must be >= 0");
  std::vector<MgInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t inst_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(inst_seed);
    bool ok = false;
    for (int attempt = 0; attempt < kMgMaxAttempts && !ok; ++attempt) {
      MgInstance inst = mg_make_layout(task, dims, rng);
      inst.id = mg_instance_id(task, seed, i);
      inst.seed = inst_seed;
      inst.validate();
      if (task == MgTask::UnlockPickup) {
        ok = mg_optimal(inst).has_value();
      } else {
        try {
          ok = mg_run(inst, mg_greedy(inst)).success;
        } catch (const Unsolvable&) {
          ok = false;
        }
      }
      if (ok) out.push_back(std::move(inst));
    }
    if (!ok) throw GenError("no solvable layout found for " + mg_instance_id(task, seed, i));
  }
  return out;
}

}  // namespace gridplan
