#pragma once

// GRASP energy-collection environment: instance model, deterministic
// transition function, episode scoring, canonical JSON and the bordered text
// grid used in prompts.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gridplan/core.hpp"

namespace gridplan {

enum class GraspAction : std::uint8_t { Up, Down, Left, Right, UpLeft, UpRight, DownLeft, DownRight, Take, Drop };

inline constexpr std::array<GraspAction, 10> kAllGraspActions = {
    GraspAction::Up,      GraspAction::Down,     GraspAction::Left,      GraspAction::Right, GraspAction::UpLeft,
    GraspAction::UpRight, GraspAction::DownLeft, GraspAction::DownRight, GraspAction::Take,  GraspAction::Drop};

inline constexpr std::string_view to_string(GraspAction a) {
  constexpr std::array<std::string_view, 10> names = {"UP",      "DOWN",     "LEFT",      "RIGHT", "UPLEFT",
                                                      "UPRIGHT", "DOWNLEFT", "DOWNRIGHT", "TAKE",  "DROP"};
  return names[static_cast<std::size_t>(a)];
}

// Case-insensitive; surrounding whitespace ignored.
inline std::optional<GraspAction> parse_grasp_action(std::string_view text) {
  const std::string upper = to_upper(trim(text));
  for (auto a : kAllGraspActions)
    if (to_string(a) == upper) return a;
  return std::nullopt;
}

inline constexpr bool is_move(GraspAction a) { return a != GraspAction::Take && a != GraspAction::Drop; }

inline constexpr bool is_diagonal(GraspAction a) {
  return a == GraspAction::UpLeft || a == GraspAction::UpRight || a == GraspAction::DownLeft ||
         a == GraspAction::DownRight;
}

inline constexpr Pos delta(GraspAction a) {
  switch (a) {
    case GraspAction::Up: return {-1, 0};
    case GraspAction::Down: return {1, 0};
    case GraspAction::Left: return {0, -1};
    case GraspAction::Right: return {0, 1};
    case GraspAction::UpLeft: return {-1, -1};
    case GraspAction::UpRight: return {-1, 1};
    case GraspAction::DownLeft: return {1, -1};
    case GraspAction::DownRight: return {1, 1};
    default: return {0, 0};
  }
}

inline constexpr GraspAction opposite(GraspAction a) {
  switch (a) {
    case GraspAction::Up: return GraspAction::Down;
    case GraspAction::Down: return GraspAction::Up;
    case GraspAction::Left: return GraspAction::Right;
    case GraspAction::Right: return GraspAction::Left;
    case GraspAction::UpLeft: return GraspAction::DownRight;
    case GraspAction::UpRight: return GraspAction::DownLeft;
    case GraspAction::DownLeft: return GraspAction::UpRight;
    case GraspAction::DownRight: return GraspAction::UpLeft;
    default: return a;
  }
}

enum class EnergyDistribution : std::uint8_t { Random, VSkewed, HSkewed, Cluster, Spiral };

inline constexpr std::array<EnergyDistribution, 5> kAllDistributions = {
    EnergyDistribution::Random, EnergyDistribution::VSkewed, EnergyDistribution::HSkewed,
    EnergyDistribution::Cluster, EnergyDistribution::Spiral};

inline constexpr std::string_view to_string(EnergyDistribution d) {
  constexpr std::array<std::string_view, 5> names = {"random", "v_skewed", "h_skewed", "cluster", "spiral"};
  return names[static_cast<std::size_t>(d)];
}

inline EnergyDistribution parse_distribution(std::string_view s) {
  for (auto d : kAllDistributions)
    if (to_string(d) == s) return d;
  throw std::invalid_argument("unknown energy distribution '" + std::string(s) + "'");
}

// What the per-step cost is charged on. The benchmark numbers are reproduced
// with PerAction; PerMove charges movement actions only.
enum class CostBasis : std::uint8_t { PerAction, PerMove };

inline constexpr std::string_view to_string(CostBasis b) { return b == CostBasis::PerAction ? "action" : "move"; }

inline CostBasis parse_cost_basis(std::string_view s) {
  if (s == "action") return CostBasis::PerAction;
  if (s == "move") return CostBasis::PerMove;
  throw std::invalid_argument("unknown cost basis '" + std::string(s) + "'");
}

enum class StepMode : std::uint8_t { Lenient, Strict };

inline constexpr int kUnlimitedCarry = std::numeric_limits<std::int32_t>::max();
inline constexpr int kMaxGridSide = 100;

struct GraspInstance {
  std::string id;
  int width = 11;
  int height = 11;
  Pos start;
  std::vector<Pos> obstacles;  // sorted, unique
  std::map<Pos, int> energy;   // token count per cell
  int carry_limit = 2;
  double cost_per_step = 0.3;
  bool diagonals_allowed = true;
  int max_actions = 20;
  EnergyDistribution distribution = EnergyDistribution::Random;
  std::uint64_t seed = 0;
  CostBasis cost_basis = CostBasis::PerAction;

  bool in_bounds(Pos p) const { return p.row >= 0 && p.col >= 0 && p.row < height && p.col < width; }
  bool is_obstacle(Pos p) const { return std::binary_search(obstacles.begin(), obstacles.end(), p); }
  std::size_t index(Pos p) const { return static_cast<std::size_t>(p.row) * width + p.col; }
  Pos pos_of(std::size_t i) const { return {static_cast<int>(i / width), static_cast<int>(i % width)}; }
  std::size_t cell_count() const { return static_cast<std::size_t>(width) * height; }

  int total_tokens() const {
    int n = 0;
    for (const auto& [p, c] : energy) n += c;
    return n;
  }

  int start_energy() const {
    auto it = energy.find(start);
    return it == energy.end() ? 0 : it->second;
  }

  // Throws InvalidInstance. Initial cells holding exactly one token is a
  // generator property, not a validity requirement: states re-serialized
  // after a DROP may stack tokens.
  void validate() const {
    auto fail = [&](const std::string& why) { throw InvalidInstance("GRASP instance '" + id + "': " + why); };
    if (width < 1 || height < 1 || width > kMaxGridSide || height > kMaxGridSide) fail("dimensions out of range");
    if (!in_bounds(start)) fail("start out of bounds");
    if (!std::is_sorted(obstacles.begin(), obstacles.end()) ||
        std::adjacent_find(obstacles.begin(), obstacles.end()) != obstacles.end())
      fail("obstacles must be sorted and unique");
    for (auto p : obstacles)
      if (!in_bounds(p)) fail("obstacle out of bounds");
    if (is_obstacle(start)) fail("start is an obstacle");
    for (const auto& [p, c] : energy) {
      if (!in_bounds(p)) fail("energy out of bounds");
      if (is_obstacle(p)) fail("energy on obstacle");
      if (c < 1) fail("energy cell with count < 1");
    }
    if (carry_limit < 1) fail("carry_limit must be >= 1");
    if (!(cost_per_step >= 0.0) || !std::isfinite(cost_per_step)) fail("cost_per_step must be >= 0");
    if (max_actions < 0) fail("max_actions must be >= 0");
  }
};

enum class GraspViolationReason : std::uint8_t { OutOfBounds, Obstacle, DiagonalNotAllowed, EmptyCell, CarryLimit };

inline constexpr std::string_view to_string(GraspViolationReason r) {
  constexpr std::array<std::string_view, 5> names = {"out_of_bounds", "obstacle", "diagonal_not_allowed",
                                                     "empty_cell", "carry_limit"};
  return names[static_cast<std::size_t>(r)];
}

struct GraspViolation {
  int step = 0;  // index of the offending action
  GraspViolationReason reason{};
  friend bool operator==(const GraspViolation&, const GraspViolation&) = default;
};

struct StrictViolation : Error {
  StrictViolation(int step_, std::string reason_)
      : Error("strict violation at step " + std::to_string(step_) + ": " + reason_),
        step(step_), reason(std::move(reason_)) {}
  int step;
  std::string reason;
};

struct GraspState {
  Pos agent;
  int carried = 0;
  std::vector<int> cell_energy;  // row-major, width*height
  int actions_used = 0;
  int moves_used = 0;
  std::vector<GraspViolation> violations;

  int energy_at(const GraspInstance& inst, Pos p) const { return cell_energy[inst.index(p)]; }
  int total_tokens() const {
    int n = carried;
    for (int c : cell_energy) n += c;
    return n;
  }
};

inline GraspState initial_state(const GraspInstance& inst) {
  GraspState s;
  s.agent = inst.start;
  s.cell_energy.assign(inst.cell_count(), 0);
  for (const auto& [p, c] : inst.energy) s.cell_energy[inst.index(p)] = c;
  return s;
}

// Checks whether `action` is admissible in `state`; returns the reason if not.
inline std::optional<GraspViolationReason> grasp_inadmissible(const GraspState& state, GraspAction action,
                                                              const GraspInstance& inst) {
  if (is_move(action)) {
    if (is_diagonal(action) && !inst.diagonals_allowed) return GraspViolationReason::DiagonalNotAllowed;
    const Pos target = state.agent + delta(action);
    if (!inst.in_bounds(target)) return GraspViolationReason::OutOfBounds;
    if (inst.is_obstacle(target)) return GraspViolationReason::Obstacle;
    return std::nullopt;
  }
  if (action == GraspAction::Take) {
    if (state.cell_energy[inst.index(state.agent)] < 1) return GraspViolationReason::EmptyCell;
    if (state.carried >= inst.carry_limit) return GraspViolationReason::CarryLimit;
  }
  return std::nullopt;
}

// In-place transition. Lenient mode turns an inadmissible action into a
// logged no-op that still consumes budget; strict mode throws.
inline void grasp_apply(GraspState& state, GraspAction action, const GraspInstance& inst, StepMode mode) {
  if (state.actions_used >= inst.max_actions)
    throw BudgetExhausted("action budget of " + std::to_string(inst.max_actions) + " exhausted");
  const int step = state.actions_used;
  if (auto bad = grasp_inadmissible(state, action, inst)) {
    if (mode == StepMode::Strict) throw StrictViolation(step, std::string(to_string(*bad)));
    state.violations.push_back({step, *bad});
    ++state.actions_used;
    return;
  }
  ++state.actions_used;
  switch (action) {
    case GraspAction::Take:
      --state.cell_energy[inst.index(state.agent)];
      ++state.carried;
      break;
    case GraspAction::Drop:
      state.cell_energy[inst.index(state.agent)] += state.carried;
      state.carried = 0;
      break;
    default:
      state.agent = state.agent + delta(action);
      ++state.moves_used;
      break;
  }
}

inline GraspState grasp_step(GraspState state, GraspAction action, const GraspInstance& inst, StepMode mode) {
  grasp_apply(state, action, inst, mode);
  return state;
}

inline double charged_cost(const GraspState& s, const GraspInstance& inst) {
  const int charged = inst.cost_basis == CostBasis::PerAction ? s.actions_used : s.moves_used;
  return charged * inst.cost_per_step;
}

// Success is only produced by the MiniGrid tasks.
enum class Termination : std::uint8_t { ExhaustedBudget, ActionsConsumed, StrictViolation, PolicyFailure, Success };

inline constexpr std::string_view to_string(Termination t) {
  constexpr std::array<std::string_view, 5> names = {"exhausted_budget", "actions_consumed", "strict_violation",
                                                     "policy_failure", "success"};
  return names[static_cast<std::size_t>(t)];
}

struct EpisodeOutcome {
  double score = 0.0;
  int tokens_at_start = 0;     // tokens lying on the start cell at the end
  double movement_cost = 0.0;  // charged steps x cost_per_step
  Termination terminated_by = Termination::ActionsConsumed;
  std::vector<GraspAction> trace;
  std::vector<GraspViolation> violations;
  int actions_used = 0;
  int moves_used = 0;
  std::string strict_reason;
};

inline EpisodeOutcome grasp_outcome(const GraspState& s, const GraspInstance& inst) {
  EpisodeOutcome out;
  out.tokens_at_start = s.energy_at(inst, inst.start);
  out.movement_cost = charged_cost(s, inst);
  out.score = out.tokens_at_start - out.movement_cost;
  out.violations = s.violations;
  out.actions_used = s.actions_used;
  out.moves_used = s.moves_used;
  out.terminated_by = s.actions_used >= inst.max_actions ? Termination::ExhaustedBudget : Termination::ActionsConsumed;
  return out;
}

// Folds grasp_step over `actions`, truncated at max_actions. A strict
// violation ends the episode and is reported through terminated_by with the
// partial trace; carried tokens never count.
inline EpisodeOutcome grasp_run(const GraspInstance& inst, const std::vector<GraspAction>& actions,
                                StepMode mode = StepMode::Lenient) {
  GraspState s = initial_state(inst);
  std::vector<GraspAction> trace;
  trace.reserve(std::min<std::size_t>(actions.size(), static_cast<std::size_t>(inst.max_actions)));
  for (auto a : actions) {
    if (s.actions_used >= inst.max_actions) break;
    try {
      grasp_apply(s, a, inst, mode);
    } catch (const StrictViolation& v) {
      EpisodeOutcome out = grasp_outcome(s, inst);
      out.trace = std::move(trace);
      out.terminated_by = Termination::StrictViolation;
      out.violations.push_back({v.step, *grasp_inadmissible(s, a, inst)});
      out.strict_reason = v.reason;
      return out;
    }
    trace.push_back(a);
  }
  EpisodeOutcome out = grasp_outcome(s, inst);
  out.trace = std::move(trace);
  return out;
}

// ---------------------------------------------------------------------------
// Canonical JSON. nlohmann's object type is ordered, so dump() emits sorted keys.

inline json to_json(const GraspInstance& inst) {
  json obstacles = json::array();
  for (auto p : inst.obstacles) obstacles.push_back(pos_to_json(p));
  json energy = json::array();
  for (const auto& [p, c] : inst.energy) energy.push_back({{"pos", pos_to_json(p)}, {"count", c}});
  return json{{"id", inst.id},
              {"width", inst.width},
              {"height", inst.height},
              {"start", pos_to_json(inst.start)},
              {"obstacles", std::move(obstacles)},
              {"energy", std::move(energy)},
              {"carry_limit", inst.carry_limit},
              {"cost_per_step", inst.cost_per_step},
              {"cost_basis", std::string(to_string(inst.cost_basis))},
              {"diagonals_allowed", inst.diagonals_allowed},
              {"max_actions", inst.max_actions},
              {"distribution", std::string(to_string(inst.distribution))},
              {"seed", inst.seed}};
}

inline GraspInstance grasp_from_json(const json& j) {
  GraspInstance inst;
  try {
    inst.id = j.at("id").get<std::string>();
    inst.width = j.at("width").get<int>();
    inst.height = j.at("height").get<int>();
    inst.start = pos_from_json(j.at("start"));
    for (const auto& o : j.at("obstacles")) inst.obstacles.push_back(pos_from_json(o));
    std::sort(inst.obstacles.begin(), inst.obstacles.end());
    for (const auto& e : j.at("energy")) inst.energy[pos_from_json(e.at("pos"))] += e.at("count").get<int>();
    inst.carry_limit = j.at("carry_limit").get<int>();
    inst.cost_per_step = j.at("cost_per_step").get<double>();
    inst.cost_basis = parse_cost_basis(j.value("cost_basis", std::string("action")));
    inst.diagonals_allowed = j.at("diagonals_allowed").get<bool>();
    inst.max_actions = j.at("max_actions").get<int>();
    inst.distribution = parse_distribution(j.at("distribution").get<std::string>());
    inst.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw InvalidInstance(std::string("malformed GRASP instance JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidInstance(std::string("malformed GRASP instance JSON: ") + e.what());
  }
  inst.validate();
  return inst;
}

inline std::string serialize(const GraspInstance& inst) { return to_json(inst).dump(); }

// ---------------------------------------------------------------------------
// Bordered text grid:
//
//       0   1   2
//     +---+---+---+
//   0 |   | E | A |
//     +---+---+---+
//
// Cell counts collapse to 'E'; the structured serialization keeps them.

namespace detail {

inline std::string grasp_header(int width) {
  std::string s = " ";
  char buf[16];
  for (int c = 0; c < width; ++c) {
    std::snprintf(buf, sizeof buf, "%4d", c);
    s += buf;
  }
  return s;
}

inline std::string grasp_border(int width) {
  std::string s = "  +";
  for (int c = 0; c < width; ++c) s += "---+";
  return s;
}

inline std::string grasp_row_label(int row) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%-2d|", row);
  return buf;
}

inline std::string render_grasp_cells(int width, int height, Pos agent, const auto& glyph_at) {
  std::string out = grasp_header(width) + '\n';
  const std::string border = grasp_border(width);
  out += border + '\n';
  for (int r = 0; r < height; ++r) {
    out += grasp_row_label(r);
    for (int c = 0; c < width; ++c) {
      const Pos p{r, c};
      out += ' ';
      out += p == agent ? 'A' : glyph_at(p);
      out += " |";
    }
    out += '\n';
    out += border + '\n';
  }
  return out;
}

}  // namespace detail

inline std::string grasp_render(const GraspInstance& inst) {
  return detail::render_grasp_cells(inst.width, inst.height, inst.start, [&](Pos p) {
    if (inst.is_obstacle(p)) return 'O';
    auto it = inst.energy.find(p);
    return it != inst.energy.end() && it->second > 0 ? 'E' : ' ';
  });
}

// Renders a mid-episode state: agent at its current cell, taken tokens gone.
inline std::string grasp_render(const GraspState& state, const GraspInstance& inst) {
  return detail::render_grasp_cells(inst.width, inst.height, state.agent, [&](Pos p) {
    if (inst.is_obstacle(p)) return 'O';
    return state.energy_at(inst, p) > 0 ? 'E' : ' ';
  });
}

struct GraspGridFragment {
  int width = 0;
  int height = 0;
  Pos agent;
  std::vector<Pos> energy;     // sorted
  std::vector<Pos> obstacles;  // sorted
};

inline GraspGridFragment grasp_parse(std::string_view text) {
  auto lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 4) throw ParseError("grid needs a header, borders and at least one row", static_cast<int>(lines.size()) + 1, 1);

  const std::string& border_line = lines[1];
  if (border_line.size() < 7 || border_line.rfind("  +", 0) != 0 || (border_line.size() - 3) % 4 != 0)
    throw ParseError("malformed border", 2, 1);
  GraspGridFragment frag;
  frag.width = static_cast<int>((border_line.size() - 3) / 4);
  if ((lines.size() - 2) % 2 != 0) throw ParseError("row without closing border", static_cast<int>(lines.size()), 1);
  frag.height = static_cast<int>((lines.size() - 2) / 2);
  if (frag.width > kMaxGridSide || frag.height > kMaxGridSide) throw ParseError("grid too large", 1, 1);

  auto expect_exact = [](const std::string& got, const std::string& want, int line, const char* what) {
    if (got == want) return;
    std::size_t i = 0;
    while (i < got.size() && i < want.size() && got[i] == want[i]) ++i;
    throw ParseError(what, line, static_cast<int>(i) + 1);
  };
  expect_exact(lines[0], detail::grasp_header(frag.width), 1, "malformed column header");
  const std::string border = detail::grasp_border(frag.width);
  expect_exact(lines[1], border, 2, "malformed border");

  bool have_agent = false;
  for (int r = 0; r < frag.height; ++r) {
    const int line_no = 3 + 2 * r;
    const std::string& row = lines[static_cast<std::size_t>(line_no - 1)];
    expect_exact(lines[static_cast<std::size_t>(line_no)], border, line_no + 1, "malformed border");
    const std::string label = detail::grasp_row_label(r);
    if (row.rfind(label, 0) != 0) expect_exact(row.substr(0, std::min(row.size(), label.size())), label, line_no, "malformed row label");
    const std::size_t expected_len = label.size() + 4 * static_cast<std::size_t>(frag.width);
    if (row.size() != expected_len)
      throw ParseError("row has wrong length", line_no, static_cast<int>(std::min(row.size(), expected_len)) + 1);
    for (int c = 0; c < frag.width; ++c) {
      const std::size_t base = label.size() + 4 * static_cast<std::size_t>(c);
      if (row[base] != ' ' || row[base + 2] != ' ' || row[base + 3] != '|')
        throw ParseError("malformed cell border", line_no, static_cast<int>(base) + 1);
      const char g = row[base + 1];
      const Pos p{r, c};
      switch (g) {
        case ' ': break;
        case 'E': frag.energy.push_back(p); break;
        case 'O': frag.obstacles.push_back(p); break;
        case 'A':
          if (have_agent) throw ParseError("second agent", line_no, static_cast<int>(base) + 2);
          have_agent = true;
          frag.agent = p;
          break;
        default: throw ParseError(std::string("unknown cell glyph '") + g + "'", line_no, static_cast<int>(base) + 2);
      }
    }
  }
  if (!have_agent) throw ParseError("grid has no agent", 1, 1);
  return frag;
}

}  // namespace gridplan
