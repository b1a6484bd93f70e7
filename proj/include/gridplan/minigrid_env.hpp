#pragma once

// Facing-direction two-room world for the Unlock, Door-Key and Unlock-Pickup
// tasks, with the bracketed token-list text format used in the prompts.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridplan/core.hpp"
#include "gridplan/grasp_env.hpp"

namespace gridplan {

enum class CellKind : std::uint8_t { Empty, Wall, Door, Key, Box, Goal };

inline constexpr std::string_view to_token(CellKind k) {
  constexpr std::array<std::string_view, 6> names = {"", "WALL", "DOOR", "KEY", "BOX", "GOAL"};
  return names[static_cast<std::size_t>(k)];
}

// Clockwise order, so a RIGHT turn is +1.
enum class Dir : std::uint8_t { Up, Right, Down, Left };

inline constexpr std::array<Dir, 4> kAllDirs = {Dir::Up, Dir::Right, Dir::Down, Dir::Left};

inline constexpr std::string_view to_string(Dir d) {
  constexpr std::array<std::string_view, 4> names = {"UP", "RIGHT", "DOWN", "LEFT"};
  return names[static_cast<std::size_t>(d)];
}

inline std::optional<Dir> parse_dir(std::string_view s) {
  const std::string upper = to_upper(trim(s));
  for (auto d : kAllDirs)
    if (to_string(d) == upper) return d;
  return std::nullopt;
}

inline constexpr Dir turn_right(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 1) % 4); }
inline constexpr Dir turn_left(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 3) % 4); }

inline constexpr Pos delta(Dir d) {
  switch (d) {
    case Dir::Up: return {-1, 0};
    case Dir::Right: return {0, 1};
    case Dir::Down: return {1, 0};
    default: return {0, -1};
  }
}

enum class MgAction : std::uint8_t { Left, Right, Move, Pickup, Drop, Unlock };

inline constexpr std::array<MgAction, 6> kAllMgActions = {MgAction::Left,   MgAction::Right, MgAction::Move,
                                                          MgAction::Pickup, MgAction::Drop,  MgAction::Unlock};

inline constexpr std::string_view to_string(MgAction a) {
  constexpr std::array<std::string_view, 6> names = {"LEFT", "RIGHT", "MOVE", "PICKUP", "DROP", "UNLOCK"};
  return names[static_cast<std::size_t>(a)];
}

inline std::optional<MgAction> parse_mg_action(std::string_view text) {
  const std::string upper = to_upper(trim(text));
  for (auto a : kAllMgActions)
    if (to_string(a) == upper) return a;
  return std::nullopt;
}

enum class MgTask : std::uint8_t { Unlock, DoorKey, UnlockPickup };

inline constexpr std::array<MgTask, 3> kAllMgTasks = {MgTask::Unlock, MgTask::DoorKey, MgTask::UnlockPickup};

inline constexpr std::string_view to_string(MgTask t) {
  constexpr std::array<std::string_view, 3> names = {"unlock", "door_key", "unlock_pickup"};
  return names[static_cast<std::size_t>(t)];
}

inline MgTask parse_mg_task(std::string_view s) {
  for (auto t : kAllMgTasks)
    if (to_string(t) == s) return t;
  throw std::invalid_argument("unknown MiniGrid task '" + std::string(s) + "'");
}

enum class Holding : std::uint8_t { Nothing, Key, Box };

inline constexpr std::string_view to_string(Holding h) {
  constexpr std::array<std::string_view, 3> names = {"nothing", "KEY", "BOX"};
  return names[static_cast<std::size_t>(h)];
}

using CellGrid = std::vector<std::vector<CellKind>>;

struct MgInstance {
  std::string id;
  CellGrid cells;  // [row][col]
  Pos agent;
  Dir facing = Dir::Up;
  MgTask task = MgTask::Unlock;
  int max_steps = 0;
  std::uint64_t seed = 0;

  int height() const { return static_cast<int>(cells.size()); }
  int width() const { return cells.empty() ? 0 : static_cast<int>(cells[0].size()); }
  bool in_bounds(Pos p) const { return p.row >= 0 && p.col >= 0 && p.row < height() && p.col < width(); }
  CellKind at(Pos p) const { return cells[static_cast<std::size_t>(p.row)][static_cast<std::size_t>(p.col)]; }

  std::optional<Pos> find(CellKind k) const {
    for (int r = 0; r < height(); ++r)
      for (int c = 0; c < width(); ++c)
        if (at({r, c}) == k) return Pos{r, c};
    return std::nullopt;
  }

  int count(CellKind k) const {
    int n = 0;
    for (const auto& row : cells)
      for (auto c : row) n += c == k;
    return n;
  }

  void validate() const {
    auto fail = [&](const std::string& why) { throw InvalidInstance("MiniGrid instance '" + id + "': " + why); };
    if (height() < 3 || width() < 3) fail("grid too small");
    for (const auto& row : cells)
      if (static_cast<int>(row.size()) != width()) fail("ragged grid");
    for (int r = 0; r < height(); ++r)
      for (int c = 0; c < width(); ++c)
        if ((r == 0 || c == 0 || r == height() - 1 || c == width() - 1) && at({r, c}) != CellKind::Wall)
          fail("outer border must be WALL");
    if (!in_bounds(agent) || at(agent) != CellKind::Empty) fail("agent must stand on an empty cell");
    if (count(CellKind::Door) != 1) fail("exactly one DOOR required");
    if (count(CellKind::Key) != 1) fail("exactly one KEY required");
    const int goals = count(CellKind::Goal), boxes = count(CellKind::Box);
    switch (task) {
      case MgTask::Unlock:
        if (goals || boxes) fail("unlock has no GOAL or BOX");
        break;
      case MgTask::DoorKey:
        if (goals != 1 || boxes) fail("door_key needs exactly one GOAL and no BOX");
        break;
      case MgTask::UnlockPickup:
        if (boxes != 1 || goals) fail("unlock_pickup needs exactly one BOX and no GOAL");
        break;
    }
    if (max_steps < 1) fail("max_steps must be >= 1");
  }
};

inline int default_max_steps(int width, int height) { return 8 * width * height; }

enum class MgViolationReason : std::uint8_t {
  Blocked,
  NothingToPickup,
  HandsFull,
  NothingHeld,
  DropBlocked,
  NoDoor,
  NoKey,
  DoorAlreadyOpen
};

inline constexpr std::string_view to_string(MgViolationReason r) {
  constexpr std::array<std::string_view, 8> names = {"blocked",     "nothing_to_pickup", "hands_full",
                                                     "nothing_held", "drop_blocked",     "no_door",
                                                     "no_key",       "door_already_open"};
  return names[static_cast<std::size_t>(r)];
}

struct MgViolation {
  int step = 0;
  MgViolationReason reason{};
  friend bool operator==(const MgViolation&, const MgViolation&) = default;
};

struct MgState {
  Pos agent;
  Dir facing = Dir::Up;
  Holding holding = Holding::Nothing;
  bool door_open = false;
  CellGrid cells;  // KEY/BOX vanish while held and reappear where dropped
  int steps_used = 0;
  std::vector<MgViolation> violations;

  CellKind at(Pos p) const { return cells[static_cast<std::size_t>(p.row)][static_cast<std::size_t>(p.col)]; }
  CellKind& at(Pos p) { return cells[static_cast<std::size_t>(p.row)][static_cast<std::size_t>(p.col)]; }
  Pos front() const { return agent + delta(facing); }
};

inline MgState initial_state(const MgInstance& inst) {
  MgState s;
  s.agent = inst.agent;
  s.facing = inst.facing;
  s.cells = inst.cells;
  return s;
}

inline bool mg_success(const MgState& s, const MgInstance& inst) {
  switch (inst.task) {
    case MgTask::Unlock: return s.door_open;
    case MgTask::DoorKey: return s.at(s.agent) == CellKind::Goal;
    case MgTask::UnlockPickup: return s.holding == Holding::Box;
  }
  return false;
}

struct EpisodeFinished : Error {
  using Error::Error;
};

inline std::optional<MgViolationReason> mg_inadmissible(const MgState& s, MgAction a) {
  const Pos f = s.front();
  const CellKind fk = s.at(f);  // the border is all WALL, so the front cell is always in bounds
  switch (a) {
    case MgAction::Left:
    case MgAction::Right: return std::nullopt;
    case MgAction::Move:
      if (fk == CellKind::Empty || fk == CellKind::Goal || (fk == CellKind::Door && s.door_open)) return std::nullopt;
      return MgViolationReason::Blocked;
    case MgAction::Pickup:
      if (fk != CellKind::Key && fk != CellKind::Box) return MgViolationReason::NothingToPickup;
      if (s.holding != Holding::Nothing) return MgViolationReason::HandsFull;
      return std::nullopt;
    case MgAction::Drop:
      if (s.holding == Holding::Nothing) return MgViolationReason::NothingHeld;
      if (fk != CellKind::Empty) return MgViolationReason::DropBlocked;
      return std::nullopt;
    case MgAction::Unlock:
      if (fk != CellKind::Door) return MgViolationReason::NoDoor;
      if (s.door_open) return MgViolationReason::DoorAlreadyOpen;
      if (s.holding != Holding::Key) return MgViolationReason::NoKey;
      return std::nullopt;
  }
  return std::nullopt;
}

inline void mg_apply(MgState& s, MgAction a, const MgInstance& inst, StepMode mode) {
  if (s.steps_used >= inst.max_steps)
    throw BudgetExhausted("step budget of " + std::to_string(inst.max_steps) + " exhausted");
  if (mg_success(s, inst)) throw EpisodeFinished("episode already succeeded");
  const int step = s.steps_used;
  if (auto bad = mg_inadmissible(s, a)) {
    if (mode == StepMode::Strict) throw StrictViolation(step, std::string(to_string(*bad)));
    s.violations.push_back({step, *bad});
    ++s.steps_used;
    return;
  }
  ++s.steps_used;
  const Pos f = s.front();
  switch (a) {
    case MgAction::Left: s.facing = turn_left(s.facing); break;
    case MgAction::Right: s.facing = turn_right(s.facing); break;
    case MgAction::Move: s.agent = f; break;
    case MgAction::Pickup:
      s.holding = s.at(f) == CellKind::Key ? Holding::Key : Holding::Box;
      s.at(f) = CellKind::Empty;
      break;
    case MgAction::Drop:
      s.at(f) = s.holding == Holding::Key ? CellKind::Key : CellKind::Box;
      s.holding = Holding::Nothing;
      break;
    case MgAction::Unlock: s.door_open = true; break;
  }
}

inline MgState mg_step(MgState s, MgAction a, const MgInstance& inst, StepMode mode) {
  mg_apply(s, a, inst, mode);
  return s;
}

inline double mg_reward(int steps, int max_steps) { return 1.0 - 0.9 * static_cast<double>(steps) / max_steps; }

struct MgOutcome {
  bool success = false;
  int steps = 0;
  double reward = 0.0;
  Termination terminated_by = Termination::ActionsConsumed;
  std::vector<MgAction> trace;
  std::vector<MgViolation> violations;
  MgState final_state;
  std::string strict_reason;
};

// Stops at the first success, a strict violation, the end of the list or
// max_steps.
inline MgOutcome mg_run(const MgInstance& inst, const std::vector<MgAction>& actions,
                        StepMode mode = StepMode::Lenient) {
  MgState s = initial_state(inst);
  MgOutcome out;
  for (auto a : actions) {
    if (mg_success(s, inst) || s.steps_used >= inst.max_steps) break;
    try {
      mg_apply(s, a, inst, mode);
    } catch (const StrictViolation& v) {
      s.violations.push_back({v.step, *mg_inadmissible(s, a)});
      out.terminated_by = Termination::StrictViolation;
      out.strict_reason = v.reason;
      break;
    }
    out.trace.push_back(a);
  }
  out.success = mg_success(s, inst);
  out.steps = s.steps_used;
  out.reward = out.success ? mg_reward(out.steps, inst.max_steps) : 0.0;
  if (out.terminated_by != Termination::StrictViolation) {
    if (out.success)
      out.terminated_by = Termination::Success;
    else if (s.steps_used >= inst.max_steps)
      out.terminated_by = Termination::ExhaustedBudget;
  }
  out.violations = s.violations;
  out.final_state = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Text format

// Expanded puts the brackets on their own lines; Compact opens with "[[".
enum class MgGridStyle : std::uint8_t { Expanded, Compact };

namespace detail {

inline std::string mg_render_rows(const std::vector<std::vector<std::string_view>>& rows, MgGridStyle style) {
  std::string out = style == MgGridStyle::Expanded ? "[\n" : "[";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += '[';
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) out += ',';
      out += '"';
      out += rows[r][c];
      out += '"';
    }
    out += ']';
    if (r + 1 < rows.size()) out += ",\n";
  }
  out += style == MgGridStyle::Expanded ? "\n]" : "]";
  return out;
}

}  // namespace detail

inline std::string mg_render(const MgInstance& inst, MgGridStyle style = MgGridStyle::Expanded) {
  std::vector<std::vector<std::string_view>> rows(inst.cells.size());
  for (int r = 0; r < inst.height(); ++r)
    for (int c = 0; c < inst.width(); ++c)
      rows[r].push_back(Pos{r, c} == inst.agent ? std::string_view("AGENT") : to_token(inst.at({r, c})));
  return detail::mg_render_rows(rows, style);
}

// Mid-episode grid: the agent at its current cell, held objects removed and
// an opened DOOR shown as "".
inline std::string mg_render(const MgState& s, MgGridStyle style = MgGridStyle::Expanded) {
  std::vector<std::vector<std::string_view>> rows(s.cells.size());
  for (std::size_t r = 0; r < s.cells.size(); ++r)
    for (std::size_t c = 0; c < s.cells[r].size(); ++c) {
      const Pos p{static_cast<int>(r), static_cast<int>(c)};
      const CellKind k = s.at(p);
      if (p == s.agent)
        rows[r].push_back("AGENT");
      else if (k == CellKind::Door && s.door_open)
        rows[r].push_back("");
      else
        rows[r].push_back(to_token(k));
    }
  return detail::mg_render_rows(rows, style);
}

struct MgGridFragment {
  CellGrid cells;  // AGENT cell stored as Empty
  Pos agent;
  MgGridStyle style = MgGridStyle::Expanded;
  int height() const { return static_cast<int>(cells.size()); }
  int width() const { return cells.empty() ? 0 : static_cast<int>(cells[0].size()); }
};

// Accepts any whitespace layout. Syntax errors report the text line/column;
// content errors report the grid row/column (0-based) in line/column.
inline MgGridFragment mg_parse(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min(e.byte > 0 ? e.byte - 1 : 0, text.size());
    int line = 1, col = 1;
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError("malformed grid list", line, col);
  }
  if (!j.is_array() || j.empty()) throw ParseError("grid must be a non-empty list of rows", 0, 0);
  MgGridFragment frag;
  const auto first = trim(text);
  frag.style = first.size() >= 2 && first[0] == '[' && first[1] == '[' ? MgGridStyle::Compact : MgGridStyle::Expanded;
  bool have_agent = false;
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    const int ri = static_cast<int>(r);
    if (!row.is_array()) throw ParseError("row " + std::to_string(r) + " is not a list", ri, 0);
    if (r > 0 && row.size() != j[0].size()) throw ParseError("row " + std::to_string(r) + " has a different width", ri, 0);
    if (row.empty()) throw ParseError("row " + std::to_string(r) + " is empty", ri, 0);
    std::vector<CellKind> cells;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const int ci = static_cast<int>(c);
      if (!row[c].is_string()) throw ParseError("row " + std::to_string(r) + ": cell is not a string", ri, ci);
      const auto tok = row[c].get<std::string>();
      if (tok == "AGENT") {
        if (have_agent) throw ParseError("row " + std::to_string(r) + ": second AGENT", ri, ci);
        have_agent = true;
        frag.agent = {ri, ci};
        cells.push_back(CellKind::Empty);
        continue;
      }
      bool known = false;
      for (int k = 0; k < 6; ++k)
        if (to_token(static_cast<CellKind>(k)) == tok) {
          cells.push_back(static_cast<CellKind>(k));
          known = true;
          break;
        }
      if (!known) throw ParseError("row " + std::to_string(r) + ": unknown token \"" + tok + "\"", ri, ci);
    }
    frag.cells.push_back(std::move(cells));
  }
  if (!have_agent) throw ParseError("grid has no AGENT", 0, 0);
  return frag;
}

// Renders a fragment back in its detected style.
inline std::string mg_render(const MgGridFragment& frag) {
  MgInstance tmp;
  tmp.cells = frag.cells;
  tmp.agent = frag.agent;
  return mg_render(tmp, frag.style);
}

inline std::vector<std::vector<std::string>> mg_token_rows(const MgInstance& inst) {
  std::vector<std::vector<std::string>> rows(inst.cells.size());
  for (int r = 0; r < inst.height(); ++r)
    for (int c = 0; c < inst.width(); ++c)
      rows[r].emplace_back(Pos{r, c} == inst.agent ? std::string("AGENT") : std::string(to_token(inst.at({r, c}))));
  return rows;
}

inline json to_json(const MgInstance& inst) {
  return json{{"id", inst.id},
              {"task", std::string(to_string(inst.task))},
              {"width", inst.width()},
              {"height", inst.height()},
              {"grid", mg_token_rows(inst)},
              {"start_direction", std::string(to_string(inst.facing))},
              {"max_steps", inst.max_steps},
              {"seed", inst.seed}};
}

inline MgInstance mg_from_json(const json& j) {
  MgInstance inst;
  try {
    inst.id = j.at("id").get<std::string>();
    inst.task = parse_mg_task(j.at("task").get<std::string>());
    auto frag = mg_parse(j.at("grid").dump());
    inst.cells = std::move(frag.cells);
    inst.agent = frag.agent;
    auto dir = parse_dir(j.at("start_direction").get<std::string>());
    if (!dir) throw InvalidInstance("bad start_direction");
    inst.facing = *dir;
    inst.max_steps = j.at("max_steps").get<int>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    if (j.at("width").get<int>() != inst.width() || j.at("height").get<int>() != inst.height())
      throw InvalidInstance("width/height disagree with grid");
  } catch (const json::exception& e) {
    throw InvalidInstance(std::string("malformed MiniGrid instance JSON: ") + e.what());
  } catch (const ParseError& e) {
    throw InvalidInstance(std::string("malformed MiniGrid grid: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidInstance(std::string("malformed MiniGrid instance JSON: ") + e.what());
  }
  inst.validate();
  return inst;
}

inline std::string serialize(const MgInstance& inst) { return to_json(inst).dump(); }

}  // namespace gridplan
