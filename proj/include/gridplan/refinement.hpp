#pragma once

// Iterative refinement: evaluate a program, stop when the mean score does
// not improve, otherwise send the worst-k training instances and the current
// source back to the model for a revision.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gridplan/llm_gateway.hpp"
#include "gridplan/policy_protocol.hpp"
#include "gridplan/prompt_kit.hpp"

namespace gridplan {

struct LLMFailure : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Evaluation reports

struct InstanceResult {
  std::string id;
  double j = 0.0;
  std::string outcome;  // ok | crash | timeout | bad_output | policy_failure | llm_failure
  bool success = false;
  double cost_usd = 0.0;  // per-instance chat cost (action-elicitation strategies)
  std::map<std::string, std::string> tags;  // grouping keys
};

struct EvalReport {
  std::vector<InstanceResult> per_instance;  // sorted by id
  double aggregate = 0.0;                    // arithmetic mean of j
  double std = 0.0;                          // population
  std::vector<std::string> worst_k;
  double synthesis_cost_usd = 0.0;  // program strategies: cost of producing the program

  std::size_t n() const { return per_instance.size(); }
  double completion() const {
    if (per_instance.empty()) return 0.0;
    double s = 0;
    for (const auto& r : per_instance) s += r.success;
    return s / static_cast<double>(per_instance.size());
  }
  double cost_per_instance() const {
    if (per_instance.empty()) return 0.0;
    double s = synthesis_cost_usd;
    for (const auto& r : per_instance) s += r.cost_usd;
    return s / static_cast<double>(per_instance.size());
  }
};

inline double mean_of(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double m = mean_of(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

// k lowest scores; ties go to the smaller id.
inline std::vector<std::string> select_worst(const EvalReport& report, int k) {
  if (k < 1) throw std::invalid_argument("select_worst: k must be >= 1");
  std::vector<const InstanceResult*> order;
  for (const auto& r : report.per_instance) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    if (a->j != b->j) return a->j < b->j;
    return a->id < b->id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < order.size() && i < static_cast<std::size_t>(k); ++i) out.push_back(order[i]->id);
  return out;
}

inline EvalReport make_report(std::vector<InstanceResult> results, int k = 3) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  EvalReport r;
  r.per_instance = std::move(results);
  std::vector<double> js;
  for (const auto& x : r.per_instance) js.push_back(x.j);
  r.aggregate = mean_of(js);
  r.std = population_std(js);
  if (!r.per_instance.empty()) r.worst_k = select_worst(r, k);
  return r;
}

inline json to_json(const InstanceResult& r) {
  json j = {{"id", r.id}, {"j", r.j}, {"outcome", r.outcome}, {"success", r.success}, {"tags", r.tags}};
  if (r.cost_usd != 0.0) j["cost_usd"] = r.cost_usd;
  return j;
}

inline json to_json(const EvalReport& r) {
  json per = json::array();
  for (const auto& x : r.per_instance) per.push_back(to_json(x));
  return {{"aggregate", r.aggregate},
          {"std", r.std},
          {"n", r.n()},
          {"completion", r.completion()},
          {"worst_k", r.worst_k},
          {"synthesis_cost_usd", r.synthesis_cost_usd},
          {"cost_usd_per_instance", r.cost_per_instance()},
          {"per_instance", per}};
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  for (const auto& x : j.at("per_instance")) {
    InstanceResult ir;
    ir.id = x.at("id").get<std::string>();
    ir.j = x.at("j").get<double>();
    ir.outcome = x.value("outcome", std::string("ok"));
    ir.success = x.value("success", false);
    ir.cost_usd = x.value("cost_usd", 0.0);
    if (x.contains("tags")) ir.tags = x["tags"].get<std::map<std::string, std::string>>();
    r.per_instance.push_back(std::move(ir));
  }
  r.aggregate = j.value("aggregate", 0.0);
  r.std = j.value("std", 0.0);
  r.synthesis_cost_usd = j.value("synthesis_cost_usd", 0.0);
  if (j.contains("worst_k")) r.worst_k = j["worst_k"].get<std::vector<std::string>>();
  return r;
}

// ---------------------------------------------------------------------------
// Programs

struct CandidateProgram {
  std::string source;
  std::string entry;  // signature tag
  int iteration = 0;
  std::string model;
  std::string strategy;
  std::vector<std::string> exchange_keys;
  std::string extract_rule;
};

inline json to_json(const CandidateProgram& p) {
  return {{"entry", p.entry},         {"iteration", p.iteration},     {"model", p.model},
          {"strategy", p.strategy},   {"exchanges", p.exchange_keys}, {"extract_rule", p.extract_rule}};
}

inline std::string_view entry_for(PromptTask t) { return t == PromptTask::Grasp ? kGraspEntry : kMinigridEntry; }

namespace detail {

inline ChatExchange chat_or_fail(const ChatFn& chat, const std::string& model, const std::vector<Message>& msgs) {
  try {
    return chat(model, msgs);
  } catch (const Error& e) {
    throw LLMFailure(e.what());
  }
}

inline ExtractedCode extract_or_fail(const std::string& text) {
  try {
    return extract_code(text);
  } catch (const NoCode& e) {
    throw LLMFailure(e.what());
  }
}

}  // namespace detail

// Multi-stage program synthesis (direct_gen, pseudocode_ext, step_by_step):
// every stage is a user turn in one conversation and the code comes from the
// final reply. With `split`, each stage is sent as an independent one-message
// conversation instead.
inline CandidateProgram synthesize_program(Strategy strategy, PromptTask task, const std::string& model,
                                           const ChatFn& chat, bool split = false) {
  if (strategy == Strategy::IterRefine || !is_program_strategy(strategy))
    throw UnsupportedPrompt(std::string(to_string(strategy)) + " does not synthesize an initial program");
  const auto bundle = build_prompt(strategy, task, {});
  CandidateProgram p;
  p.entry = std::string(entry_for(task));
  p.model = model;
  p.strategy = std::string(to_string(strategy));
  std::vector<Message> msgs;
  std::string last;
  for (const auto& stage : bundle.stages) {
    if (split) msgs.clear();
    msgs.push_back({"user", stage});
    const auto ex = detail::chat_or_fail(chat, model, msgs);
    p.exchange_keys.push_back(ex.cache_key);
    msgs.push_back({"assistant", ex.response_text});
    last = ex.response_text;
  }
  const auto code = detail::extract_or_fail(last);
  p.source = code.source;
  p.extract_rule = std::string(to_string(code.rule));
  return p;
}

inline CandidateProgram direct_generation(PromptTask task, const std::string& model, const ChatFn& chat,
                                          bool split = false) {
  return synthesize_program(Strategy::DirectGen, task, model, chat, split);
}

using InstanceLookup = std::map<std::string, AnyInstance>;

inline InstanceLookup make_lookup(const std::vector<AnyInstance>& instances) {
  InstanceLookup out;
  for (const auto& i : instances) out.emplace(instance_id(i), i);
  return out;
}

// The refine prompt for `program` given the instances in report.worst_k.
inline PromptBundle refine_prompt(const CandidateProgram& program, const EvalReport& report,
                                  const InstanceLookup& instances, PromptTask task) {
  if (report.worst_k.empty()) throw std::invalid_argument("refine_prompt: report has no worst-k instances");
  std::vector<AnyInstance> worst;
  for (const auto& id : report.worst_k) {
    auto it = instances.find(id);
    if (it == instances.end()) throw std::invalid_argument("refine_prompt: unknown instance " + id);
    worst.push_back(it->second);
  }
  std::string code = program.source;
  while (!code.empty() && code.back() == '\n') code.pop_back();
  return build_prompt(Strategy::IterRefine, task, {{{"your_code", code}, {"sample_grids", format_sample_grids(worst)}}, {}});
}

inline CandidateProgram refine_once(const CandidateProgram& program, const EvalReport& report,
                                    const InstanceLookup& instances, const std::string& model, PromptTask task,
                                    const ChatFn& chat) {
  const auto bundle = refine_prompt(program, report, instances, task);
  const auto ex = detail::chat_or_fail(chat, model, {{"user", bundle.stages.at(0)}});
  const auto code = detail::extract_or_fail(ex.response_text);
  CandidateProgram next;
  next.source = code.source;
  next.extract_rule = std::string(to_string(code.rule));
  next.entry = program.entry;
  next.iteration = program.iteration + 1;
  next.model = model;
  next.strategy = std::string(to_string(Strategy::IterRefine));
  next.exchange_keys = {ex.cache_key};
  return next;
}

// ---------------------------------------------------------------------------
// The loop

enum class StopReason : std::uint8_t { NoImprovement, MaxIters, LlmFailure };

inline constexpr std::string_view to_string(StopReason r) {
  constexpr std::array<std::string_view, 3> names = {"no_improvement", "max_iters", "llm_failure"};
  return names[static_cast<std::size_t>(r)];
}

struct RefinementStep {
  CandidateProgram program;
  EvalReport report;
};

struct RefinementRun {
  std::vector<RefinementStep> history;
  StopReason stop_reason = StopReason::MaxIters;
  int best_index = -1;
  int returned_index = -1;
  std::string failure;  // LLMFailure message

  const CandidateProgram& returned() const { return history.at(static_cast<std::size_t>(returned_index)).program; }
};

struct RefinementConfig {
  PromptTask task = PromptTask::Grasp;
  std::string model;
  int k = 3;
  int max_iters = 5;            // refinements after the initial program
  bool return_literal = false;  // return the last evaluated program instead of the best
  bool split_conversation = false;
  Strategy initial_strategy = Strategy::DirectGen;
};

using Evaluator = std::function<EvalReport(const CandidateProgram&)>;

// `initial` skips synthesis when given.
inline RefinementRun run_refinement(const RefinementConfig& cfg, const std::vector<AnyInstance>& train_set,
                                    const Evaluator& evaluate, const ChatFn& chat,
                                    std::optional<CandidateProgram> initial = std::nullopt) {
  if (train_set.empty()) throw std::invalid_argument("run_refinement: empty training set");
  if (cfg.max_iters < 1) throw std::invalid_argument("run_refinement: max_iters must be >= 1");
  if (cfg.k < 1) throw std::invalid_argument("run_refinement: k must be >= 1");
  const auto lookup = make_lookup(train_set);

  RefinementRun run;
  CandidateProgram current;
  try {
    current = initial ? *initial
                      : synthesize_program(cfg.initial_strategy, cfg.task, cfg.model, chat, cfg.split_conversation);
  } catch (const LLMFailure& e) {
    run.stop_reason = StopReason::LlmFailure;
    run.failure = e.what();
    return run;
  }

  double j_prev = -std::numeric_limits<double>::infinity();
  for (int t = 0;; ++t) {
    EvalReport report = evaluate(current);
    report.worst_k = select_worst(report, cfg.k);
    const double j_curr = report.aggregate;
    run.history.push_back({current, report});
    if (run.best_index < 0 || j_curr > run.history[static_cast<std::size_t>(run.best_index)].report.aggregate)
      run.best_index = t;
    if (j_curr <= j_prev) {
      run.stop_reason = StopReason::NoImprovement;
      break;
    }
    if (t >= cfg.max_iters) {
      run.stop_reason = StopReason::MaxIters;
      break;
    }
    j_prev = j_curr;
    try {
      current = refine_once(current, report, lookup, cfg.model, cfg.task, chat);
    } catch (const LLMFailure& e) {
      run.stop_reason = StopReason::LlmFailure;
      run.failure = e.what();
      break;
    }
  }
  run.returned_index = cfg.return_literal ? static_cast<int>(run.history.size()) - 1 : run.best_index;
  return run;
}

// ---------------------------------------------------------------------------
// Persistence: program_<t>.src, report_<t>.json and run.json in `dir`.

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json run_manifest(const RefinementRun& run, const RefinementConfig& cfg) {
  json iters = json::array();
  for (std::size_t t = 0; t < run.history.size(); ++t) {
    const auto& step = run.history[t];
    iters.push_back({{"iteration", static_cast<int>(t)},
                     {"aggregate", step.report.aggregate},
                     {"std", step.report.std},
                     {"n", step.report.n()},
                     {"worst_k", step.report.worst_k},
                     {"program", "program_" + std::to_string(t) + ".src"},
                     {"report", "report_" + std::to_string(t) + ".json"},
                     {"provenance", to_json(step.program)}});
  }
  return {{"schema", 1},
          {"kind", "refinement"},
          {"task", to_string(cfg.task)},
          {"model", cfg.model},
          {"k", cfg.k},
          {"max_iters", cfg.max_iters},
          {"return_policy", cfg.return_literal ? "literal" : "best"},
          {"stop_reason", to_string(run.stop_reason)},
          {"failure", run.failure},
          {"best_index", run.best_index},
          {"returned_index", run.returned_index},
          {"iterations", iters}};
}

// `extra` is merged into run.json (cost, invocation, corpus).
inline void save_run(const RefinementRun& run, const RefinementConfig& cfg, const std::filesystem::path& dir,
                     const json& extra = json::object()) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < run.history.size(); ++t) {
    write_text(dir / ("program_" + std::to_string(t) + ".src"), run.history[t].program.source);
    write_text(dir / ("report_" + std::to_string(t) + ".json"), to_json(run.history[t].report).dump(2) + "\n");
  }
  json manifest = run_manifest(run, cfg);
  for (const auto& [k, v] : extra.items()) manifest[k] = v;
  write_text(dir / "run.json", manifest.dump(2) + "\n");
}

}  // namespace gridplan
