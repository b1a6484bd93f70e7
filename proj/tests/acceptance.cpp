// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "gridplan/cli.hpp"
#include "gridplan/harness.hpp"
#include "gridplan/minigrid_generate.hpp"
#include "support/reference_grasp.hpp"
#include "support/test_util.hpp"

using namespace gridplan;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

// Runs `body`, turning an escaped exception into a FAIL line.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(name, ok, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gridplan_accept_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_text(e.path());
  return out;
}

refsim::Spec to_spec(const GraspInstance& inst) {
  refsim::Spec spec{inst.width, inst.height, inst.start.row, inst.start.col, {}, {}, inst.carry_limit,
                    inst.diagonals_allowed, inst.max_actions};
  for (auto p : inst.obstacles) spec.obstacles.push_back({p.row, p.col});
  for (const auto& [p, c] : inst.energy) spec.energy[{p.row, p.col}] = c;
  return spec;
}

// Exhaustive search over every action sequence up to max_actions using the
// reference stepper, merging states that differ only in charged steps.
double enumerate_best(const GraspInstance& inst) {
  const auto spec = to_spec(inst);
  const bool per_action = inst.cost_basis == CostBasis::PerAction;
  using Key = std::tuple<int, int, int, std::map<std::pair<int, int>, int>>;
  auto at_start = [&](const refsim::Result& r) {
    auto it = r.energy.find({spec.start_row, spec.start_col});
    return it == r.energy.end() ? 0 : it->second;
  };
  auto charged = [&](const refsim::Result& r) { return per_action ? r.actions : r.moves; };

  refsim::Result r0;
  r0.row = spec.start_row;
  r0.col = spec.start_col;
  r0.energy = spec.energy;
  std::map<Key, refsim::Result> frontier{{Key{r0.row, r0.col, r0.carried, r0.energy}, r0}};
  double best = at_start(r0);
  for (int depth = 0; depth < inst.max_actions; ++depth) {
    std::map<Key, refsim::Result> next;
    for (const auto& [key, r] : frontier)
      for (auto a : kAllGraspActions) {
        refsim::Result s = r;
        s.violations.clear();
        refsim::step(spec, s, std::string(to_string(a)));
        best = std::max(best, at_start(s) - charged(s) * inst.cost_per_step);
        Key k{s.row, s.col, s.carried, s.energy};
        auto it = next.find(k);
        if (it == next.end() || charged(s) < charged(it->second)) next[k] = std::move(s);
      }
    frontier = std::move(next);
  }
  return best;
}

std::pair<bool, std::string> grasp_baselines() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = make_grasp_corpus(grasp_lattice_by_name("eval100"), 1);
  const auto greedy = evaluate_corpus(NativeSource{"grasp_greedy", 0}, corpus.instances, 4);
  const auto random = evaluate_corpus(NativeSource{"grasp_random", 0}, corpus.instances, 4);
  const double secs = seconds_since(t0);
  const bool ok = corpus.instances.size() == 100 && std::abs(greedy.aggregate - (-3.61)) <= 0.6 &&
                  std::abs(random.aggregate - (-4.55)) <= 0.6 && secs < 10.0;
  return {ok, "n=" + std::to_string(corpus.instances.size()) + " greedy " + fmt(greedy.aggregate) + " +- " +
                  fmt(greedy.std) + ", random " + fmt(random.aggregate) + " +- " + fmt(random.std) + ", " +
                  fmt(secs, 2) + "s"};
}

std::pair<bool, std::string> minigrid_baselines() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (auto task : kAllMgTasks) {
    const auto corpus = make_mg_corpus(task, 100, 1);
    const auto greedy = evaluate_corpus(NativeSource{"mg_greedy", 0}, corpus.instances, 4);
    const auto random = evaluate_corpus(NativeSource{"mg_random", 0}, corpus.instances, 4);
    const bool pickup = task == MgTask::UnlockPickup;
    ok = ok && (pickup ? greedy.completion() >= 0.5 : greedy.completion() == 1.0);
    ok = ok && (pickup || greedy.aggregate >= 0.90);
    ok = ok && random.completion() <= 0.05 && random.aggregate <= 0.05;
    detail += std::string(to_string(task)) + " greedy " + fmt(greedy.completion(), 2) + "/" + fmt(greedy.aggregate) +
              " random " + fmt(random.completion(), 2) + "/" + fmt(random.aggregate) + "; ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 10.0;
  return {ok, detail + fmt(secs, 2) + "s"};
}

std::pair<bool, std::string> oracle() {
  Rng rng(2024);
  int dominated = 0, enumerated = 0, agreed = 0;
  double worst_gap = 0.0;
  for (int i = 0; i < 200; ++i) {
    GraspGridSpec spec;
    spec.width = spec.height = 5;
    spec.energy_tokens = 3 + static_cast<int>(rng.below(8));
    spec.obstacle_fraction = 0.1;
    auto inst = grasp_make_layout(kAllDistributions[rng.below(5)], rng.below(2) == 1, spec, rng.next());
    inst.max_actions = 1 + static_cast<int>(rng.below(8));
    inst.cost_per_step = rng.below(2) ? 0.3 : 0.0;
    inst.cost_basis = rng.below(2) ? CostBasis::PerAction : CostBasis::PerMove;
    inst.carry_limit = 1 + static_cast<int>(rng.below(2));
    inst.diagonals_allowed = rng.below(3) == 0;
    const auto r = grasp_oracle(inst);
    const bool own = std::abs(grasp_run(inst, r.actions, StepMode::Strict).score - r.score) < 1e-9;
    if (own && r.score + 1e-9 >= grasp_run(inst, grasp_greedy(inst)).score) ++dominated;
    if (inst.max_actions <= 6) {
      ++enumerated;
      const double gap = std::abs(enumerate_best(inst) - r.score);
      worst_gap = std::max(worst_gap, gap);
      if (gap < 1e-9) ++agreed;
    }
  }
  return {dominated == 200 && agreed == enumerated && enumerated > 0,
          "oracle >= greedy on " + std::to_string(dominated) + "/200, exhaustive agreement " +
              std::to_string(agreed) + "/" + std::to_string(enumerated) + " (max gap " + fmt(worst_gap, 9) + ")"};
}

std::pair<bool, std::string> reference_stepper() {
  Rng rng(31337);
  int pairs = 0, mismatches = 0;
  while (pairs < 10000) {
    const auto inst = testutil::random_grasp(rng);
    const auto actions = testutil::random_grasp_actions(rng, 1 + rng.below(40));
    const auto spec = to_spec(inst);
    refsim::Result ref;
    ref.row = spec.start_row;
    ref.col = spec.start_col;
    ref.energy = spec.energy;
    GraspState s = initial_state(inst);
    for (auto a : actions) {
      if (s.actions_used >= inst.max_actions) break;
      grasp_apply(s, a, inst, StepMode::Lenient);
      refsim::step(spec, ref, std::string(to_string(a)));
      ++pairs;
      bool same = s.agent == Pos{ref.row, ref.col} && s.carried == ref.carried && s.actions_used == ref.actions &&
                  s.moves_used == ref.moves && s.violations.size() == ref.violations.size();
      for (std::size_t i = 0; same && i < ref.violations.size(); ++i)
        same = s.violations[i].step == ref.violations[i].first &&
               to_string(s.violations[i].reason) == ref.violations[i].second;
      for (std::size_t i = 0; same && i < s.cell_energy.size(); ++i) {
        const Pos p = inst.pos_of(i);
        auto it = ref.energy.find({p.row, p.col});
        same = s.cell_energy[i] == (it == ref.energy.end() ? 0 : it->second);
      }
      if (!same) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(pairs) + " (instance, action) pairs, " + std::to_string(mismatches) +
                               " disagreements"};
}

GraspInstance from_fragment(const GraspGridFragment& frag) {
  GraspInstance inst;
  inst.width = frag.width;
  inst.height = frag.height;
  inst.start = frag.agent;
  inst.obstacles = frag.obstacles;
  for (auto p : frag.energy) inst.energy[p] = 1;
  return inst;
}

std::pair<bool, std::string> round_trips() {
  Rng rng(5);
  int grasp_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    auto inst = testutil::random_grasp(rng, 14);
    for (auto& [p, c] : inst.energy) c = 1;
    const auto text = grasp_render(inst);
    const auto frag = grasp_parse(text);
    std::vector<Pos> energy;
    for (const auto& [p, c] : inst.energy) energy.push_back(p);
    if (frag.width == inst.width && frag.height == inst.height && frag.agent == inst.start &&
        frag.obstacles == inst.obstacles && frag.energy == energy && grasp_render(from_fragment(frag)) == text)
      ++grasp_ok;
  }

  int mg_ok = 0, mg_total = 0;
  for (auto task : kAllMgTasks)
    for (const auto& inst : mg_generate(task, 167, mg_default_dims(task), 9)) {
      if (mg_total == 1000) break;
      const auto style = mg_total % 2 ? MgGridStyle::Compact : MgGridStyle::Expanded;
      const auto text = mg_render(inst, style);
      ++mg_total;
      if (mg_render(mg_parse(text)) == text) ++mg_ok;
    }
  for (; mg_total < 1000; ++mg_total) {
    // Arbitrary cell soup on random shapes, both styles.
    const int h = 1 + static_cast<int>(rng.below(9)), w = 1 + static_cast<int>(rng.below(9));
    MgGridFragment frag;
    frag.cells.assign(static_cast<std::size_t>(h), std::vector<CellKind>(static_cast<std::size_t>(w)));
    for (auto& row : frag.cells)
      for (auto& c : row) c = static_cast<CellKind>(rng.below(6));
    frag.agent = {static_cast<int>(rng.below(static_cast<std::size_t>(h))),
                  static_cast<int>(rng.below(static_cast<std::size_t>(w)))};
    frag.cells[static_cast<std::size_t>(frag.agent.row)][static_cast<std::size_t>(frag.agent.col)] = CellKind::Empty;
    frag.style = rng.below(2) ? MgGridStyle::Compact : MgGridStyle::Expanded;
    const auto text = mg_render(frag);
    if (mg_render(mg_parse(text)) == text) ++mg_ok;
  }

  int fixtures_ok = 0;
  const auto sample = testutil::fixture("grasp_sample.txt");
  if (grasp_render(from_fragment(grasp_parse(sample))) == sample) ++fixtures_ok;
  for (const char* name : {"unlock_sample.txt", "door_key_sample.txt", "unlock_pickup_sample.txt"}) {
    const auto text = testutil::strip_final_newline(testutil::fixture(name));
    if (mg_render(mg_parse(text)) == text) ++fixtures_ok;
  }
  return {grasp_ok == 1000 && mg_ok == 1000 && fixtures_ok == 4,
          "grasp " + std::to_string(grasp_ok) + "/1000, minigrid " + std::to_string(mg_ok) + "/1000, samples " +
              std::to_string(fixtures_ok) + "/4 byte-exact"};
}

std::vector<AnyInstance> small_train() {
  Rng rng(11);
  std::vector<AnyInstance> out;
  for (int i = 0; i < 6; ++i) {
    auto g = testutil::random_grasp(rng, 6);
    g.id = "inst" + std::to_string(i);
    out.emplace_back(g);
  }
  return out;
}

Evaluator scripted(const std::vector<AnyInstance>& train, std::vector<double> aggregates, int* evals) {
  return [=](const CandidateProgram&) {
    const double agg = aggregates.at(static_cast<std::size_t>((*evals)++));
    std::vector<InstanceResult> rs;
    const double n = static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
      rs.push_back({instance_id(train[i]), agg + static_cast<double>(i) - (n - 1) / 2.0, "ok", false, 0.0, {}});
    return make_report(rs);
  };
}

ChatFn program_chat(int* calls) {
  return [calls](const std::string& model, const std::vector<Message>& msgs) {
    ChatExchange e;
    e.model = model;
    e.messages = msgs;
    e.cache_key = cache_key(model, msgs);
    e.response_text = "```python\ndef solve(grid):\n    return " + std::to_string(++*calls) + "\n```\n";
    return e;
  };
}

std::pair<bool, std::string> refinement_semantics() {
  const auto train = small_train();
  RefinementConfig cfg;
  cfg.task = PromptTask::Grasp;
  cfg.model = "mock";
  bool ok = true;
  std::string detail;
  for (bool literal : {false, true}) {
    int evals = 0, calls = 0;
    cfg.return_literal = literal;
    const auto run = run_refinement(cfg, train, scripted(train, {2.82, 2.90, 1.41}, &evals), program_chat(&calls));
    ok = ok && evals == 3 && run.best_index == 1 && run.returned_index == (literal ? 2 : 1) &&
         run.stop_reason == StopReason::NoImprovement;
    detail += std::string(literal ? "literal" : "best") + ": evals " + std::to_string(evals) + " best " +
              std::to_string(run.best_index) + " returned " + std::to_string(run.returned_index) + "; ";
  }
  int evals = 0, calls = 0;
  cfg.return_literal = false;
  const auto flat = run_refinement(cfg, train, scripted(train, {0.97, 0.97}, &evals), program_chat(&calls));
  ok = ok && flat.history.size() == 2 && flat.stop_reason == StopReason::NoImprovement && flat.returned_index == 0;
  detail += "equal aggregates stop at iteration " + std::to_string(flat.history.size() - 1);
  return {ok, detail};
}

// Provider stand-in: every reply is a fenced program with fixed token usage.
class FakeTransport : public HttpTransport {
 public:
  HttpReply post(const std::string&, const std::string&, const std::string&, int) override {
    ++posts;
    const std::string text = "```python\ndef solve(grid):\n    return " + std::to_string(posts) + "\n```\n";
    json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                  {"usage", {{"prompt_tokens", 10000}, {"completion_tokens", 2500}}}};
    return {200, reply.dump(), ""};
  }
  int posts = 0;
};

std::pair<bool, std::string> cost_ledger() {
  const auto train = small_train();
  const auto archive = scratch("ledger.jsonl").string();
  RefinementConfig cfg;
  cfg.task = PromptTask::Grasp;
  cfg.model = "m";
  const auto rates = RateTable::from_json(json::parse(R"({"m": {"prompt": 1.0, "completion": 4.0}})"));

  GatewayConfig live_cfg;
  live_cfg.api_key = "k";
  live_cfg.archive_path = archive;
  live_cfg.rates = rates;
  auto transport = std::make_shared<FakeTransport>();
  Gateway live(live_cfg, transport);
  int evals = 0;
  const auto live_run = run_refinement(cfg, train, scripted(train, {1.0, 2.0, 1.5}, &evals), live.as_chat_fn());

  GatewayConfig replay_cfg;
  replay_cfg.mode = GatewayMode::Replay;
  replay_cfg.archive_path = archive;
  replay_cfg.rates = rates;
  auto idle = std::make_shared<FakeTransport>();
  Gateway replay(replay_cfg, idle);
  evals = 0;
  const auto replay_run = run_refinement(cfg, train, scripted(train, {1.0, 2.0, 1.5}, &evals), replay.as_chat_fn());

  const bool ok = transport->posts == 4 && std::abs(live.ledger().spent_usd() - 0.08) < 1e-12 &&
                  std::abs(live.ledger().per_instance(100) - 8.0e-4) < 1e-15 && idle->posts == 0 &&
                  replay.ledger().spent_usd() == 0.0 &&
                  std::abs(replay.ledger().attributed_usd() - 0.08) < 1e-12 &&
                  std::abs(replay.ledger().per_instance(100) - 8.0e-4) < 1e-15 &&
                  replay_run.returned().source == live_run.returned().source;
  return {ok, "live calls " + std::to_string(transport->posts) + " spent $" + fmt(live.ledger().spent_usd(), 4) +
                  "; replay calls " + std::to_string(idle->posts) + " spent $" +
                  fmt(replay.ledger().spent_usd(), 4) + " attributed $" + fmt(replay.ledger().attributed_usd(), 4) +
                  " per instance $" + fmt(replay.ledger().per_instance(100), 6)};
}

std::pair<bool, std::string> determinism() {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  std::istringstream in;
  std::ostringstream out, err;
  for (const auto& d : {a, b})
    if (run_cli({"gen", "--benchmark", "grasp", "--lattice", "eval100", "--seed", "7", "--out", d.string()}, in, out,
                err) != 0)
      return {false, "gen failed: " + err.str()};
  const bool same_gen = dir_contents(a) == dir_contents(b);

  const auto corpus = make_grasp_corpus(grasp_lattice_by_name("eval100"), 7);
  std::vector<AnyInstance> first(corpus.instances.begin(), corpus.instances.begin() + 50);
  bool same_eval = true;
  for (const char* name : {"grasp_greedy", "grasp_random"})
    same_eval = same_eval && to_json(evaluate_corpus(NativeSource{name, 3}, first, 1)).dump() ==
                                 to_json(evaluate_corpus(NativeSource{name, 3}, first, 4)).dump();
  return {same_gen && same_eval, std::string("gen --seed 7 twice ") + (same_gen ? "identical" : "differs") +
                                     " (" + std::to_string(dir_contents(a).size()) + " files); 50-instance eval " +
                                     (same_eval ? "identical" : "differs") + " at parallelism 1 vs 4"};
}

}  // namespace

int main() {
  criterion("grasp_baselines", grasp_baselines);
  criterion("minigrid_baselines", minigrid_baselines);
  criterion("oracle_exact", oracle);
  criterion("reference_stepper", reference_stepper);
  criterion("render_round_trip", round_trips);
  criterion("refinement_stopping", refinement_semantics);
  criterion("cost_ledger", cost_ledger);
  criterion("determinism", determinism);
  fs::remove_all(fs::temp_directory_path() / ("gridplan_accept_" + std::to_string(::getpid())));
  return failures == 0 ? 0 : 1;
}
