#pragma once

// Prompt templates for every strategy and task, slot filling, and the
// mid-episode re-render used by the two-step strategy.
//
// Templates live in data/prompts and are compiled in (prompt_data.hpp is
// generated at build time). A slot is written {{name}}.

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gridplan/grasp_env.hpp"
#include "gridplan/minigrid_env.hpp"
#include "gridplan/policy_protocol.hpp"
#include "gridplan/prompt_data.hpp"

namespace gridplan {

struct MissingSlot : Error {
  using Error::Error;
};
struct UnsupportedPrompt : Error {
  using Error::Error;
};

enum class Strategy : std::uint8_t { DirectGen, PseudocodeExt, StepByStep, IterRefine, DirectAnswer, Cot, TwoStepCot };

inline constexpr std::array<Strategy, 7> kAllStrategies = {Strategy::DirectGen,  Strategy::PseudocodeExt,
                                                           Strategy::StepByStep, Strategy::IterRefine,
                                                           Strategy::DirectAnswer, Strategy::Cot,
                                                           Strategy::TwoStepCot};

inline constexpr std::string_view to_string(Strategy s) {
  constexpr std::array<std::string_view, 7> names = {"direct_gen",    "pseudocode_ext", "step_by_step", "iter_refine",
                                                     "direct_answer", "cot",            "two_step_cot"};
  return names[static_cast<std::size_t>(s)];
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto x : kAllStrategies)
    if (to_string(x) == s) return x;
  throw std::invalid_argument("unknown strategy '" + std::string(s) + "'");
}

// Program strategies synthesize code; the rest ask for actions directly.
inline bool is_program_strategy(Strategy s) {
  return s == Strategy::DirectGen || s == Strategy::PseudocodeExt || s == Strategy::StepByStep ||
         s == Strategy::IterRefine;
}

enum class PromptTask : std::uint8_t { Grasp, Unlock, DoorKey, UnlockPickup };

inline constexpr std::array<PromptTask, 4> kAllPromptTasks = {PromptTask::Grasp, PromptTask::Unlock,
                                                              PromptTask::DoorKey, PromptTask::UnlockPickup};

inline constexpr std::string_view to_string(PromptTask t) {
  constexpr std::array<std::string_view, 4> names = {"grasp", "unlock", "door_key", "unlock_pickup"};
  return names[static_cast<std::size_t>(t)];
}

inline PromptTask parse_prompt_task(std::string_view s) {
  for (auto x : kAllPromptTasks)
    if (to_string(x) == s) return x;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

inline PromptTask prompt_task_of(MgTask t) {
  switch (t) {
    case MgTask::Unlock: return PromptTask::Unlock;
    case MgTask::DoorKey: return PromptTask::DoorKey;
    case MgTask::UnlockPickup: return PromptTask::UnlockPickup;
  }
  return PromptTask::Unlock;
}

inline PromptTask prompt_task_of(const AnyInstance& inst) {
  if (const auto* m = std::get_if<MgInstance>(&inst)) return prompt_task_of(m->task);
  return PromptTask::Grasp;
}

struct PromptTemplate {
  PromptTask task;
  Strategy strategy;
  std::vector<std::string> stages;
  std::string golden;  // FNV-1a 64 over every stage followed by a NUL byte
};

namespace detail {

inline std::optional<std::string_view> embedded_file(std::string_view path) {
  for (const auto& f : embedded::kPromptFiles)
    if (path == f.path) return std::string_view(reinterpret_cast<const char*>(f.data), f.size);
  return std::nullopt;
}

inline std::vector<PromptTemplate> load_templates() {
  const auto manifest_text = embedded_file("manifest.json");
  if (!manifest_text) throw Error("prompt manifest missing from build");
  const json manifest = json::parse(*manifest_text);
  std::vector<PromptTemplate> out;
  for (const auto& t : manifest.at("templates")) {
    PromptTemplate pt{parse_prompt_task(t.at("task").get<std::string>()),
                      parse_strategy(t.at("strategy").get<std::string>()),
                      {},
                      t.at("golden_fnv1a64").get<std::string>()};
    for (const auto& f : t.at("files")) {
      const auto text = embedded_file(f.get<std::string>());
      if (!text) throw Error("prompt file " + f.get<std::string>() + " missing from build");
      pt.stages.emplace_back(*text);
    }
    if (static_cast<int>(pt.stages.size()) != t.at("stages").get<int>()) throw Error("prompt manifest stage count");
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace detail

inline const std::vector<PromptTemplate>& prompt_templates() {
  static const std::vector<PromptTemplate> all = detail::load_templates();
  return all;
}

inline const PromptTemplate& prompt_template(Strategy s, PromptTask t) {
  for (const auto& pt : prompt_templates())
    if (pt.strategy == s && pt.task == t) return pt;
  throw UnsupportedPrompt("no " + std::string(to_string(s)) + " prompt for " + std::string(to_string(t)));
}

inline std::string template_hash(const PromptTemplate& t) {
  std::string all;
  for (const auto& s : t.stages) {
    all += s;
    all.push_back('\0');
  }
  return hex64(fnv1a64(all));
}

// Templates whose text no longer matches the manifest hash.
inline std::vector<std::string> verify_templates() {
  std::vector<std::string> bad;
  for (const auto& t : prompt_templates())
    if (template_hash(t) != t.golden)
      bad.push_back(std::string(to_string(t.task)) + "/" + std::string(to_string(t.strategy)));
  return bad;
}

inline std::string greedy_pseudocode() {
  auto text = detail::embedded_file("grasp/greedy_pseudocode.txt");
  if (!text) throw Error("greedy pseudocode missing from build");
  std::string s(*text);
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

// Names of the {{slots}} in `text`, in order of appearance.
inline std::vector<std::string> template_slots(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = text.find("{{"); i != std::string_view::npos; i = text.find("{{", i + 2)) {
    const auto end = text.find("}}", i + 2);
    if (end == std::string_view::npos) break;
    out.emplace_back(text.substr(i + 2, end - i - 2));
  }
  return out;
}

using Slots = std::map<std::string, std::string>;

inline std::string fill_slots(std::string_view text, const Slots& slots) {
  std::string out;
  std::size_t pos = 0;
  for (std::size_t i = text.find("{{"); i != std::string_view::npos; i = text.find("{{", pos)) {
    const auto end = text.find("}}", i + 2);
    if (end == std::string_view::npos) break;
    const std::string name(text.substr(i + 2, end - i - 2));
    auto it = slots.find(name);
    if (it == slots.end()) throw MissingSlot("prompt slot {{" + name + "}} has no value");
    out.append(text.substr(pos, i - pos));
    out += it->second;
    pos = end + 2;
  }
  out.append(text.substr(pos));
  return out;
}

struct PromptContext {
  Slots slots;
  std::optional<int> stage;  // render only this stage
};

struct PromptBundle {
  Strategy strategy;
  PromptTask task;
  std::vector<std::string> stages;  // rendered user messages, in order
  std::vector<int> stage_indices;
  Slots slots;
};

inline PromptBundle build_prompt(Strategy strategy, PromptTask task, const PromptContext& ctx) {
  const auto& t = prompt_template(strategy, task);
  PromptBundle b{strategy, task, {}, {}, ctx.slots};
  if (strategy == Strategy::PseudocodeExt && !b.slots.count("greedy_pseudocode"))
    b.slots["greedy_pseudocode"] = greedy_pseudocode();
  const int n = static_cast<int>(t.stages.size());
  if (ctx.stage && (*ctx.stage < 0 || *ctx.stage >= n))
    throw UnsupportedPrompt(std::string(to_string(strategy)) + " has " + std::to_string(n) + " stages, asked for " +
                            std::to_string(*ctx.stage));
  for (int i = ctx.stage.value_or(0); i < (ctx.stage ? *ctx.stage + 1 : n); ++i) {
    b.stages.push_back(fill_slots(t.stages[static_cast<std::size_t>(i)], b.slots));
    b.stage_indices.push_back(i);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Slot values from instances

inline std::string grid_text(const GraspInstance& inst) {
  std::string s = grasp_render(inst);
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

inline std::string grid_text(const MgInstance& inst) { return mg_render(inst, MgGridStyle::Expanded); }

inline Slots instance_slots(const AnyInstance& inst) {
  if (const auto* g = std::get_if<GraspInstance>(&inst)) return {{"grid", grid_text(*g)}};
  const auto& m = std::get<MgInstance>(inst);
  return {{"grid", grid_text(m)}, {"start_direction", std::string(to_string(m.facing))}};
}

inline std::string_view sample_separator(PromptTask t) {
  return t == PromptTask::Grasp ? "---------" : "--------------";
}

// The iter_refine <sample_grids> body. MiniGrid samples carry their start
// direction in the prompt's own tag.
inline std::string format_sample_grids(const std::vector<AnyInstance>& worst) {
  std::string out;
  for (std::size_t i = 0; i < worst.size(); ++i) {
    if (i) out += "\n" + std::string(sample_separator(prompt_task_of(worst[i]))) + "\n";
    if (const auto* g = std::get_if<GraspInstance>(&worst[i])) {
      out += grid_text(*g);
    } else {
      const auto& m = std::get<MgInstance>(worst[i]);
      out += grid_text(m) + "\n<start_direction>\n" + std::string(to_string(m.facing)) + "\n</start_direction>";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-step re-render

inline constexpr int kGraspTwoStepPrefix = 10;

struct MidState {
  std::string updated_grid;
  std::string status_line;
  Slots slots;  // fills the second two_step_cot stage
};

namespace detail {

inline std::string status_line_of(Strategy s, PromptTask t, const Slots& slots) {
  const auto& tpl = prompt_template(s, t);
  const auto text = fill_slots(tpl.stages.back(), slots);
  const auto lines = split_lines(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it)
    if (!trim(*it).empty()) return *it;
  return {};
}

}  // namespace detail

// Runs the prefix leniently and renders what the agent sees next. GRASP
// "collected" counts tokens carried plus tokens added to the start cell.
inline MidState rerender_midstate(const AnyInstance& inst, const std::vector<std::string>& partial_actions) {
  MidState m;
  if (const auto* g = std::get_if<GraspInstance>(&inst)) {
    GraspState s = initial_state(*g);
    for (const auto& name : partial_actions) {
      if (s.actions_used >= g->max_actions) break;
      if (auto a = parse_grasp_action(name)) grasp_apply(s, *a, *g, StepMode::Lenient);
    }
    m.updated_grid = grasp_render(s, *g);
    if (!m.updated_grid.empty() && m.updated_grid.back() == '\n') m.updated_grid.pop_back();
    const int collected = s.carried + (s.energy_at(*g, g->start) - g->start_energy());
    m.slots = {{"updated_grid", m.updated_grid},
               {"collected", std::to_string(collected)},
               {"cost_so_far", format_decimal(charged_cost(s, *g))},
               {"actions_so_far", std::to_string(s.actions_used)}};
  } else {
    const auto& mi = std::get<MgInstance>(inst);
    MgState s = initial_state(mi);
    for (const auto& name : partial_actions) {
      if (mg_success(s, mi) || s.steps_used >= mi.max_steps) break;
      if (auto a = parse_mg_action(name)) mg_apply(s, *a, mi, StepMode::Lenient);
    }
    m.updated_grid = mg_render(s, MgGridStyle::Expanded);
    m.slots = {{"updated_grid", m.updated_grid},
               {"facing", std::string(to_string(s.facing))},
               {"holding_clause", s.holding == Holding::Nothing
                                      ? std::string()
                                      : " while holding " + std::string(to_string(s.holding))}};
  }
  m.status_line = detail::status_line_of(Strategy::TwoStepCot, prompt_task_of(inst), m.slots);
  return m;
}

}  // namespace gridplan
