#pragma once

// Corpora on disk, corpus evaluation for native baselines, sandboxed
// programs and per-instance chat strategies, and aggregation into tables.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "gridplan/baselines.hpp"
#include "gridplan/grasp_generate.hpp"
#include "gridplan/minigrid_generate.hpp"
#include "gridplan/refinement.hpp"

namespace gridplan {

struct EmptyGroup : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Corpora

struct Corpus {
  Benchmark benchmark = Benchmark::Grasp;
  std::string profile;  // lattice name (GRASP) or task (MiniGrid)
  std::uint64_t seed = 0;
  std::vector<AnyInstance> instances;  // sorted by id
};

inline Corpus make_grasp_corpus(const GraspLattice& lattice, std::uint64_t seed) {
  Corpus c{Benchmark::Grasp, lattice.name, seed, {}};
  for (auto& inst : grasp_generate(lattice, seed)) c.instances.emplace_back(std::move(inst));
  return c;
}

inline Corpus make_mg_corpus(MgTask task, int count, std::uint64_t seed) {
  Corpus c{Benchmark::Minigrid, std::string(to_string(task)), seed, {}};
  for (auto& inst : mg_generate(task, count, mg_default_dims(task), seed)) c.instances.emplace_back(std::move(inst));
  std::sort(c.instances.begin(), c.instances.end(),
            [](const auto& a, const auto& b) { return instance_id(a) < instance_id(b); });
  return c;
}

inline json corpus_manifest(const Corpus& c) {
  json ids = json::array();
  for (const auto& i : c.instances) ids.push_back(instance_id(i));
  return {{"benchmark", to_string(c.benchmark)},
          {"lattice", c.profile},
          {"seed", c.seed},
          {"count", c.instances.size()},
          {"ids", ids}};
}

// One <id>.json per instance plus manifest.json.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& inst : c.instances)
    write_text(dir / (instance_id(inst) + ".json"), to_json(inst).dump() + "\n");
  write_text(dir / "manifest.json", corpus_manifest(c).dump(2) + "\n");
}

// Accepts the corpus directory or its manifest.json.
inline Corpus read_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("corpus not found: " + path.string());
  const auto dir = std::filesystem::is_directory(path) ? path : path.parent_path();
  const json m = json::parse(read_text(dir / "manifest.json"));
  Corpus c;
  c.benchmark = parse_benchmark(m.at("benchmark").get<std::string>());
  c.profile = m.value("lattice", std::string());
  c.seed = m.value("seed", std::uint64_t{0});
  for (const auto& id : m.at("ids")) {
    const auto file = dir / (id.get<std::string>() + ".json");
    try {
      c.instances.push_back(instance_from_json(c.benchmark, json::parse(read_text(file))));
    } catch (const json::exception& e) {
      throw Error(file.string() + ": " + e.what());
    }
  }
  return c;
}

// Grouping keys carried by every result.
inline std::map<std::string, std::string> instance_tags(const AnyInstance& inst) {
  if (const auto* g = std::get_if<GraspInstance>(&inst))
    return {{"distribution", std::string(to_string(g->distribution))},
            {"obstacles", g->obstacles.empty() ? "without" : "with"},
            {"movement", g->diagonals_allowed ? "d8" : "d4"},
            {"cost", format_decimal(g->cost_per_step)},
            {"carry", g->carry_limit == kUnlimitedCarry ? "inf" : std::to_string(g->carry_limit)}};
  return {{"task", std::string(to_string(std::get<MgInstance>(inst).task))}};
}

// ---------------------------------------------------------------------------
// Policy sources

inline const std::vector<std::string>& native_policy_names() {
  static const std::vector<std::string> names = {"grasp_greedy", "grasp_random", "grasp_oracle",
                                                 "mg_greedy",    "mg_random",    "mg_optimal"};
  return names;
}

// Action names produced by a native baseline. Throws std::invalid_argument
// on an unknown name or benchmark mismatch, and Unsolvable/TooLarge from
// the planners.
inline std::vector<std::string> native_actions(const std::string& name, const AnyInstance& inst, std::uint64_t seed) {
  std::vector<std::string> out;
  auto names = [&](const auto& acts) {
    for (auto a : acts) out.emplace_back(to_string(a));
  };
  if (name.rfind("grasp_", 0) == 0) {
    const auto* g = std::get_if<GraspInstance>(&inst);
    if (!g) throw std::invalid_argument(name + " needs a GRASP instance");
    if (name == "grasp_greedy")
      names(grasp_greedy(*g));
    else if (name == "grasp_random")
      names(grasp_random(*g, mix_seed(seed, fnv1a64(g->id))));
    else if (name == "grasp_oracle")
      names(grasp_oracle(*g).actions);
    else
      throw std::invalid_argument("unknown baseline " + name);
  } else if (name.rfind("mg_", 0) == 0) {
    const auto* m = std::get_if<MgInstance>(&inst);
    if (!m) throw std::invalid_argument(name + " needs a MiniGrid instance");
    if (name == "mg_greedy")
      names(mg_greedy(*m));
    else if (name == "mg_random")
      names(mg_random(*m, mix_seed(seed, fnv1a64(m->id))));
    else if (name == "mg_optimal") {
      auto plan = mg_optimal(*m);
      if (!plan) throw Unsolvable("no plan for " + m->id);
      names(*plan);
    } else
      throw std::invalid_argument("unknown baseline " + name);
  } else {
    throw std::invalid_argument("unknown baseline " + name);
  }
  return out;
}

struct NativeSource {
  std::string name;
  std::uint64_t seed = 0;
};

struct ProgramSource {
  std::vector<std::string> command;  // protocol executable and its arguments
  std::optional<std::string> source;  // delivered in the request
  PolicyLimits limits;
};

struct ElicitationSource {
  Strategy strategy = Strategy::DirectAnswer;  // direct_answer | cot | two_step_cot
  std::string model;
  ChatFn chat;
};

using PolicySource = std::variant<NativeSource, ProgramSource, ElicitationSource>;

inline InstanceResult score_actions(const AnyInstance& inst, const std::vector<std::string>& actions,
                                    std::string outcome) {
  PolicyResponse r;
  r.actions = actions;
  r.exit = outcome == "ok" ? PolicyExit::Ok : PolicyExit::BadOutput;
  const auto s = score_detail(r, inst);
  return {instance_id(inst), s.j, std::move(outcome), s.success, 0.0, instance_tags(inst)};
}

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int parallelism, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, parallelism)), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::string_view answer_tag(const AnyInstance& inst) {
  return std::holds_alternative<GraspInstance>(inst) ? "final_answer" : "actions";
}

inline InstanceResult elicit(const ElicitationSource& src, const AnyInstance& inst) {
  const auto task = prompt_task_of(inst);
  double cost = 0.0;
  auto finish = [&](InstanceResult r) {
    r.cost_usd = cost;
    return r;
  };
  std::vector<Message> msgs;
  auto ask = [&](const std::string& text) {
    msgs.push_back({"user", text});
    const auto ex = src.chat(src.model, msgs);
    cost += ex.cost_usd;
    msgs.push_back({"assistant", ex.response_text});
    return ex.response_text;
  };
  try {
    if (src.strategy == Strategy::TwoStepCot) {
      const auto first = ask(build_prompt(Strategy::TwoStepCot, task, {instance_slots(inst), 0}).stages[0]);
      auto prefix = extract_tagged(first, answer_tag(inst));
      if (task == PromptTask::Grasp && prefix.size() > static_cast<std::size_t>(kGraspTwoStepPrefix))
        prefix.resize(static_cast<std::size_t>(kGraspTwoStepPrefix));
      const auto mid = rerender_midstate(inst, prefix);
      const auto second = ask(build_prompt(Strategy::TwoStepCot, task, {mid.slots, 1}).stages[0]);
      return finish(score_actions(inst, extract_tagged(second, answer_tag(inst)), "ok"));
    }
    if (src.strategy != Strategy::DirectAnswer && src.strategy != Strategy::Cot)
      throw UnsupportedPrompt(std::string(to_string(src.strategy)) + " is not an action-elicitation strategy");
    const auto reply = ask(build_prompt(src.strategy, task, {instance_slots(inst), {}}).stages[0]);
    return finish(score_actions(inst, extract_tagged(reply, answer_tag(inst)), "ok"));
  } catch (const NoTag&) {
    return finish(score_actions(inst, {}, "bad_output"));
  } catch (const BadList&) {
    return finish(score_actions(inst, {}, "bad_output"));
  } catch (const TransportError&) {
    return finish(score_actions(inst, {}, "llm_failure"));
  } catch (const ReplayMiss&) {
    return finish(score_actions(inst, {}, "llm_failure"));
  }
}

}  // namespace detail

// Never aborts on a single instance: planner failures, crashes and bad
// replies become failure scores. Output is ordered by instance id and does
// not depend on `parallelism`.
inline EvalReport evaluate_corpus(const PolicySource& source, const std::vector<AnyInstance>& corpus,
                                  int parallelism = 1, int k = 3) {
  if (corpus.empty()) throw std::invalid_argument("evaluate_corpus: empty corpus");
  std::vector<InstanceResult> results(corpus.size());
  if (const auto* native = std::get_if<NativeSource>(&source)) {
    detail::parallel_for(corpus.size(), parallelism, [&](std::size_t i) {
      try {
        results[i] = score_actions(corpus[i], native_actions(native->name, corpus[i], native->seed), "ok");
      } catch (const Unsolvable&) {
        results[i] = score_actions(corpus[i], {}, "policy_failure");
      } catch (const TooLarge&) {
        results[i] = score_actions(corpus[i], {}, "policy_failure");
      }
    });
  } else if (const auto* prog = std::get_if<ProgramSource>(&source)) {
    std::vector<PolicyRequest> reqs;
    for (const auto& inst : corpus) reqs.push_back(make_request(inst, prog->limits, prog->source));
    const auto resps = run_policies(prog->command, reqs, parallelism);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto s = score_detail(resps[i], corpus[i]);
      results[i] = {instance_id(corpus[i]), s.j, s.outcome, s.success, 0.0, instance_tags(corpus[i])};
    }
  } else {
    const auto& el = std::get<ElicitationSource>(source);
    detail::parallel_for(corpus.size(), parallelism, [&](std::size_t i) { results[i] = detail::elicit(el, corpus[i]); });
  }
  return make_report(std::move(results), k);
}

// ---------------------------------------------------------------------------
// Labeled reports and the aggregate matrix

struct LabeledReport {
  std::string model;     // "native" for baselines
  std::string strategy;  // strategy or baseline name
  Benchmark benchmark = Benchmark::Grasp;
  std::string profile;
  EvalReport report;
};

inline constexpr int kReportSchema = 1;

inline json to_json(const LabeledReport& r) {
  json j = to_json(r.report);
  j["schema"] = kReportSchema;
  j["kind"] = "eval";
  j["model"] = r.model;
  j["strategy"] = r.strategy;
  j["benchmark"] = to_string(r.benchmark);
  j["profile"] = r.profile;
  j["std_kind"] = "population";
  return j;
}

inline LabeledReport labeled_report_from_json(const json& j) {
  LabeledReport r;
  r.model = j.value("model", std::string());
  r.strategy = j.value("strategy", std::string());
  r.benchmark = parse_benchmark(j.value("benchmark", std::string("grasp")));
  r.profile = j.value("profile", std::string());
  r.report = report_from_json(j);
  return r;
}

struct MatrixRow {
  std::string model;
  std::string strategy;
  std::string benchmark;
  std::map<std::string, std::string> group;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  std::optional<double> completion;  // MiniGrid only
  double cost_usd_per_instance = 0.0;
  std::string delta;  // filled by add_delta
};

struct EvalMatrix {
  std::vector<std::string> group_keys;
  std::vector<MatrixRow> rows;
};

inline std::string group_label(const std::map<std::string, std::string>& g) {
  std::string s;
  for (const auto& [k, v] : g) s += (s.empty() ? "" : ";") + k + "=" + v;
  return s;
}

// Rows per (model, strategy, benchmark, group values). Synthesis cost is
// amortized over the whole report before grouping.
inline EvalMatrix aggregate(const std::vector<LabeledReport>& reports, const std::vector<std::string>& group_keys) {
  if (reports.empty()) throw EmptyGroup("no reports to aggregate");
  EvalMatrix m{group_keys, {}};
  for (const auto& lr : reports) {
    if (lr.report.per_instance.empty())
      throw EmptyGroup("report " + lr.model + "/" + lr.strategy + " has no instances");
    const double amortized = lr.report.synthesis_cost_usd / static_cast<double>(lr.report.n());
    std::map<std::map<std::string, std::string>, std::vector<const InstanceResult*>> groups;
    for (const auto& r : lr.report.per_instance) {
      std::map<std::string, std::string> key;
      for (const auto& g : group_keys) {
        auto it = r.tags.find(g);
        key[g] = it == r.tags.end() ? "-" : it->second;
      }
      groups[key].push_back(&r);
    }
    for (const auto& [key, rs] : groups) {
      MatrixRow row{lr.model, lr.strategy, std::string(to_string(lr.benchmark)), key, 0, 0, rs.size(), {}, 0, {}};
      std::vector<double> js;
      double succ = 0, cost = 0;
      for (const auto* r : rs) {
        js.push_back(r->j);
        succ += r->success;
        cost += r->cost_usd;
      }
      row.mean = mean_of(js);
      row.std = population_std(js);
      if (lr.benchmark == Benchmark::Minigrid) row.completion = succ / static_cast<double>(rs.size());
      row.cost_usd_per_instance = amortized + cost / static_cast<double>(rs.size());
      m.rows.push_back(std::move(row));
    }
  }
  return m;
}

// (target - base) / |base| as a whole percentage; a zero base gives "∞%".
inline std::string format_delta(double base, double target) {
  if (base == 0.0) {
    if (target == 0.0) return "0%";
    return target > 0 ? "∞%" : "-∞%";
  }
  const long pct = std::lround((target - base) / std::abs(base) * 100.0);
  if (pct == 0) return "0%";
  return (pct > 0 ? "+" : "") + std::to_string(pct) + "%";
}

// Annotates rows of `target_strategy` with their delta against the row of
// `base_strategy` sharing model, benchmark and group.
inline void add_delta(EvalMatrix& m, const std::string& base_strategy, const std::string& target_strategy) {
  bool any = false;
  for (auto& row : m.rows) {
    if (row.strategy != target_strategy) continue;
    const MatrixRow* base = nullptr;
    for (const auto& b : m.rows)
      if (b.strategy == base_strategy && b.model == row.model && b.benchmark == row.benchmark && b.group == row.group)
        base = &b;
    if (!base) throw EmptyGroup("no " + base_strategy + " row for " + row.model + " " + group_label(row.group));
    row.delta = format_delta(base->mean, row.mean);
    any = true;
  }
  if (!any) throw EmptyGroup("no rows for strategy " + target_strategy);
}

namespace detail {

inline std::string num(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

inline json to_json(const EvalMatrix& m) {
  json rows = json::array();
  for (const auto& r : m.rows) {
    json j = {{"model", r.model},
              {"strategy", r.strategy},
              {"benchmark", r.benchmark},
              {"group", r.group},
              {"mean", r.mean},
              {"std", r.std},
              {"n", r.n},
              {"cost_usd_per_instance", r.cost_usd_per_instance}};
    j["completion"] = r.completion ? json(*r.completion) : json(nullptr);
    if (!r.delta.empty()) j["delta"] = r.delta;
    rows.push_back(std::move(j));
  }
  return {{"schema", kReportSchema}, {"kind", "matrix"}, {"std_kind", "population"}, {"group_keys", m.group_keys},
          {"rows", rows}};
}

// Fixed column order.
inline constexpr std::string_view kCsvHeader =
    "model,strategy,benchmark,group,mean,std,n,completion,cost_usd_per_instance,delta";

inline std::string to_csv(const EvalMatrix& m) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& r : m.rows) {
    out << detail::csv_field(r.model) << ',' << detail::csv_field(r.strategy) << ',' << r.benchmark << ','
        << detail::csv_field(group_label(r.group)) << ',' << detail::num(r.mean) << ',' << detail::num(r.std) << ','
        << r.n << ',' << (r.completion ? detail::num(*r.completion) : "") << ','
        << detail::num(r.cost_usd_per_instance, 10) << ',' << r.delta << "\n";
  }
  return out.str();
}

// Plot data for score over refinement iterations: one row per iteration.
inline std::string curves_tsv(const json& run_manifest) {
  std::ostringstream out;
  out << "iteration\tmean\tstd\n";
  for (const auto& it : run_manifest.at("iterations"))
    out << it.at("iteration").get<int>() << '\t' << detail::num(it.at("aggregate").get<double>()) << '\t'
        << detail::num(it.at("std").get<double>()) << "\n";
  return out.str();
}

}  // namespace gridplan
