#pragma once

// Command-line surface: gen, baseline, eval, refine, report, replay, policy.
// Exit codes: 0 success, 1 operational failure, 2 usage error.

#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "gridplan/harness.hpp"

namespace gridplan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace cli_detail {

inline std::vector<std::string> split_command(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct LlmFlags {
  std::string archive;
  bool replay = false;
  std::string rates;
  std::string api_url;
  int max_retries = 4;

  void add(CLI::App* app) {
    app->add_option("--archive", archive, "JSONL chat archive (appended to; read in replay mode)");
    app->add_flag("--replay", replay, "serve chats from the archive only");
    app->add_option("--rates", rates, "model rate table (JSON, USD per million tokens)");
    app->add_option("--api-url", api_url, "chat-completions endpoint (default GRIDPLAN_API_URL)");
    app->add_option("--max-retries", max_retries, "retries on transport errors and 429")->check(CLI::NonNegativeNumber);
  }

  std::unique_ptr<Gateway> make() const {
    auto cfg = GatewayConfig::from_env();
    if (!api_url.empty()) cfg.api_url = api_url;
    cfg.mode = replay ? GatewayMode::Replay : GatewayMode::Live;
    cfg.archive_path = archive;
    if (replay && archive.empty()) throw Error("--replay needs --archive");
    if (!rates.empty()) cfg.rates = RateTable::load(rates);
    return std::make_unique<Gateway>(std::move(cfg));
  }

  ChatOptions options() const {
    ChatOptions o;
    o.max_retries = max_retries;
    return o;
  }
};

inline json cost_json(const Gateway& gw, std::size_t n) {
  return {{"attributed_usd", gw.ledger().attributed_usd()},
          {"spent_usd", gw.ledger().spent_usd()},
          {"calls", gw.ledger().calls()},
          {"instances", n},
          {"per_instance_usd", n ? gw.ledger().per_instance(n) : 0.0}};
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    write_text(path, text);
}

inline std::string summary(const EvalReport& r) {
  std::ostringstream s;
  s << "mean " << detail::num(r.aggregate, 4) << " +- " << detail::num(r.std, 3) << " over " << r.n() << " instances";
  return s.str();
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args, std::istream& in, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> invocation = args;
  CLI::App app{"gridplan: grid planning environments, baselines and a code-as-policy harness"};
  app.set_config("--config", "", "TOML/INI config file, given before the subcommand; [subcommand] sections, flags take precedence");
  app.require_subcommand(1);
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  // gen
  auto* gen = app.add_subcommand("gen", "generate a seeded corpus");
  std::string gen_bench = "grasp", gen_lattice = "default", gen_out;
  std::uint64_t gen_seed = 0;
  int gen_count = 100;
  gen->add_option("--benchmark", gen_bench, "grasp or a MiniGrid task")
      ->check(CLI::IsMember({"grasp", "unlock", "door_key", "unlock_pickup"}));
  gen->add_option("--lattice", gen_lattice, "GRASP lattice profile")->check(CLI::IsMember({"default", "eval100"}));
  gen->add_option("--count", gen_count, "MiniGrid instance count")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "score a native baseline over a corpus");
  std::string base_name, base_corpus, base_report;
  std::uint64_t base_seed = 0;
  int base_parallel = hw;
  base->add_option("--name", base_name, "baseline")->required()->check(CLI::IsMember(native_policy_names()));
  base->add_option("--corpus", base_corpus, "corpus directory")->required();
  base->add_option("--report", base_report, "report JSON path")->required();
  base->add_option("--seed", base_seed, "seed for randomized baselines");
  base->add_option("--parallel", base_parallel, "worker threads")->check(CLI::PositiveNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "score a program or an action-elicitation strategy over a corpus");
  std::string ev_corpus, ev_report, ev_cmd, ev_program, ev_run, ev_strategy, ev_model, ev_label_model, ev_label_strategy;
  int ev_parallel = hw, ev_wall = PolicyLimits{}.wall_ms, ev_mem = PolicyLimits{}.mem_mb;
  cli_detail::LlmFlags ev_llm;
  ev->add_option("--corpus", ev_corpus, "corpus directory")->required();
  ev->add_option("--report", ev_report, "report JSON path")->required();
  ev->add_option("--cmd", ev_cmd, "protocol executable and arguments (programs)");
  ev->add_option("--program", ev_program, "program source delivered in each request");
  ev->add_option("--from-run", ev_run, "refinement run directory; uses its returned program and cost");
  ev->add_option("--strategy", ev_strategy, "action-elicitation strategy")
      ->check(CLI::IsMember({"direct_answer", "cot", "two_step_cot"}));
  ev->add_option("--model", ev_model, "model for --strategy");
  ev->add_option("--label-model", ev_label_model, "model label for program reports");
  ev->add_option("--label-strategy", ev_label_strategy, "strategy label for program reports");
  ev->add_option("--parallel", ev_parallel, "concurrent instances")->check(CLI::PositiveNumber);
  ev->add_option("--wall-ms", ev_wall, "per-instance wall clock limit")->check(CLI::PositiveNumber);
  ev->add_option("--mem-mb", ev_mem, "per-instance address space limit")->check(CLI::PositiveNumber);
  ev_llm.add(ev);

  // refine
  auto* rf = app.add_subcommand("refine", "run iterative refinement on a training corpus");
  std::string rf_task = "grasp", rf_model, rf_train, rf_cmd, rf_out, rf_initial = "direct_gen", rf_initial_program;
  int rf_k = 3, rf_iters = 5, rf_parallel = hw, rf_wall = PolicyLimits{}.wall_ms, rf_mem = PolicyLimits{}.mem_mb;
  bool rf_literal = false, rf_split = false;
  cli_detail::LlmFlags rf_llm;
  rf->add_option("--task", rf_task, "task")->check(CLI::IsMember({"grasp", "unlock", "door_key", "unlock_pickup"}));
  rf->add_option("--model", rf_model, "model identifier")->required();
  rf->add_option("--train", rf_train, "training corpus directory")->required();
  rf->add_option("--cmd", rf_cmd, "protocol executable that runs program sources")->required();
  rf->add_option("--out", rf_out, "run directory")->required();
  rf->add_option("--k", rf_k, "worst cases per refinement")->check(CLI::PositiveNumber);
  rf->add_option("--max-iters", rf_iters, "maximum refinements")->check(CLI::PositiveNumber);
  rf->add_option("--initial-strategy", rf_initial, "strategy for the first program")
      ->check(CLI::IsMember({"direct_gen", "pseudocode_ext", "step_by_step"}));
  rf->add_option("--initial-program", rf_initial_program, "start from this source instead of asking the model");
  rf->add_flag("--return-literal", rf_literal, "return the last evaluated program instead of the best");
  rf->add_flag("--split-conversation", rf_split, "send each synthesis stage as its own conversation");
  rf->add_option("--parallel", rf_parallel, "concurrent instances")->check(CLI::PositiveNumber);
  rf->add_option("--wall-ms", rf_wall, "per-instance wall clock limit")->check(CLI::PositiveNumber);
  rf->add_option("--mem-mb", rf_mem, "per-instance address space limit")->check(CLI::PositiveNumber);
  rf_llm.add(rf);

  // report
  auto* rp = app.add_subcommand("report", "aggregate reports into a table, or emit refinement curves");
  std::vector<std::string> rp_in;
  std::string rp_group, rp_delta, rp_format = "csv", rp_out;
  bool rp_curves = false;
  rp->add_option("--in", rp_in, "eval report(s) or run.json")->required();
  rp->add_flag("--curves", rp_curves, "iteration, mean, std series from a run.json");
  rp->add_option("--group", rp_group, "comma-separated grouping keys");
  rp->add_option("--delta", rp_delta, "BASE:TARGET strategies for the percentage column");
  rp->add_option("--format", rp_format, "output format")->check(CLI::IsMember({"csv", "json", "tsv"}));
  rp->add_option("--out", rp_out, "output path (default stdout)");

  // replay
  auto* rl = app.add_subcommand("replay", "re-run a recorded eval or refine from its chat archive");
  std::string rl_from, rl_out, rl_archive;
  rl->add_option("--from", rl_from, "run.json or eval report")->required()->check(CLI::ExistingFile);
  rl->add_option("--out", rl_out, "new output path")->required();
  rl->add_option("--archive", rl_archive, "archive to replay (default: the recorded one)");

  // policy
  auto* pol = app.add_subcommand("policy", "answer one protocol request on stdin with a native baseline");
  std::string pol_name;
  std::uint64_t pol_seed = 0;
  pol->add_option("--name", pol_name, "baseline")->required()->check(CLI::IsMember(native_policy_names()));
  pol->add_option("--seed", pol_seed, "seed for randomized baselines");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const json invocation_json = invocation;
  try {
    if (*gen) {
      Corpus c;
      if (gen_bench == "grasp")
        c = make_grasp_corpus(grasp_lattice_by_name(gen_lattice), gen_seed);
      else
        c = make_mg_corpus(parse_mg_task(gen_bench), gen_count, gen_seed);
      write_corpus(c, gen_out);
      out << "wrote " << c.instances.size() << " instances to " << gen_out << "\n";
      return kExitOk;
    }

    if (*base) {
      const auto corpus = read_corpus(base_corpus);
      LabeledReport lr{"native", base_name, corpus.benchmark, corpus.profile,
                       evaluate_corpus(NativeSource{base_name, base_seed}, corpus.instances, base_parallel)};
      json j = to_json(lr);
      j["invocation"] = invocation_json;
      write_text(base_report, j.dump(2) + "\n");
      out << base_name << ": " << cli_detail::summary(lr.report) << "\n";
      return kExitOk;
    }

    if (*ev) {
      const auto corpus = read_corpus(ev_corpus);
      LabeledReport lr{ev_label_model, ev_label_strategy, corpus.benchmark, corpus.profile, {}};
      json extra = json::object();
      if (!ev_strategy.empty()) {
        if (ev_model.empty()) throw CLI::RequiredError("--model");
        auto gw = ev_llm.make();
        ElicitationSource src{parse_strategy(ev_strategy), ev_model, gw->as_chat_fn(ev_llm.options())};
        lr.report = evaluate_corpus(src, corpus.instances, ev_parallel);
        lr.model = ev_model;
        lr.strategy = ev_strategy;
        extra["cost"] = cli_detail::cost_json(*gw, corpus.instances.size());
      } else {
        if (ev_cmd.empty()) throw CLI::RequiredError("--cmd (or --strategy)");
        ProgramSource src{cli_detail::split_command(ev_cmd), std::nullopt, {ev_wall, ev_mem}};
        double synthesis = 0.0;
        if (!ev_run.empty()) {
          const json run = json::parse(read_text(std::filesystem::path(ev_run) / "run.json"));
          const int idx = run.at("returned_index").get<int>();
          if (idx < 0) throw Error("run in " + ev_run + " has no returned program");
          src.source = read_text(std::filesystem::path(ev_run) / ("program_" + std::to_string(idx) + ".src"));
          synthesis = run.contains("cost") ? run["cost"].value("attributed_usd", 0.0) : 0.0;
          if (lr.model.empty()) lr.model = run.value("model", std::string());
          if (lr.strategy.empty()) lr.strategy = idx == 0 ? "direct_gen" : "iter_refine";
        } else if (!ev_program.empty()) {
          src.source = read_text(ev_program);
        }
        lr.report = evaluate_corpus(src, corpus.instances, ev_parallel);
        lr.report.synthesis_cost_usd = synthesis;
        if (lr.model.empty()) lr.model = "program";
        if (lr.strategy.empty()) lr.strategy = "program";
      }
      json j = to_json(lr);
      for (const auto& [k, v] : extra.items()) j[k] = v;
      j["invocation"] = invocation_json;
      write_text(ev_report, j.dump(2) + "\n");
      out << lr.strategy << ": " << cli_detail::summary(lr.report) << "\n";
      return kExitOk;
    }

    if (*rf) {
      const auto train = read_corpus(rf_train);
      RefinementConfig cfg;
      cfg.task = parse_prompt_task(rf_task);
      cfg.model = rf_model;
      cfg.k = rf_k;
      cfg.max_iters = rf_iters;
      cfg.return_literal = rf_literal;
      cfg.split_conversation = rf_split;
      cfg.initial_strategy = parse_strategy(rf_initial);
      for (const auto& inst : train.instances)
        if (prompt_task_of(inst) != cfg.task) throw Error("training corpus does not match --task " + rf_task);
      auto gw = rf_llm.make();
      const auto cmd = cli_detail::split_command(rf_cmd);
      Evaluator evaluate = [&](const CandidateProgram& p) {
        return evaluate_corpus(ProgramSource{cmd, p.source, {rf_wall, rf_mem}}, train.instances, rf_parallel, cfg.k);
      };
      std::optional<CandidateProgram> initial;
      if (!rf_initial_program.empty()) {
        initial = CandidateProgram{read_text(rf_initial_program), std::string(entry_for(cfg.task)), 0, rf_model,
                                   "given", {}, ""};
      }
      const auto run = run_refinement(cfg, train.instances, evaluate, gw->as_chat_fn(rf_llm.options()), initial);
      json extra = {{"cost", cli_detail::cost_json(*gw, train.instances.size())},
                    {"train", {{"path", rf_train}, {"profile", train.profile}, {"seed", train.seed}}},
                    {"archive", rf_llm.archive},
                    {"invocation", invocation_json}};
      save_run(run, cfg, rf_out, extra);
      if (run.history.empty()) {
        err << "error: no program was produced: " << run.failure << "\n";
        return kExitFailure;
      }
      for (std::size_t t = 0; t < run.history.size(); ++t)
        out << "iteration " << t << ": " << cli_detail::summary(run.history[t].report) << "\n";
      out << "stopped: " << to_string(run.stop_reason) << "; best " << run.best_index << ", returned "
          << run.returned_index << "\n";
      if (!run.failure.empty()) err << "warning: " << run.failure << "\n";
      return kExitOk;
    }

    if (*rp) {
      if (rp_curves) {
        if (rp_in.size() != 1) throw CLI::ValidationError("--curves", "takes exactly one run.json");
        auto path = std::filesystem::path(rp_in[0]);
        if (std::filesystem::is_directory(path)) path /= "run.json";
        const json run = json::parse(read_text(path));
        if (rp_format == "json") {
          json series = json::array();
          for (const auto& it : run.at("iterations"))
            series.push_back({{"iteration", it.at("iteration")}, {"mean", it.at("aggregate")}, {"std", it.at("std")}});
          cli_detail::write_output(rp_out, json{{"model", run.value("model", "")}, {"task", run.value("task", "")},
                                                {"series", series}}
                                                   .dump(2) +
                                               "\n",
                                   out);
        } else {
          cli_detail::write_output(rp_out, curves_tsv(run), out);
        }
        return kExitOk;
      }
      std::vector<LabeledReport> reports;
      for (const auto& p : rp_in) reports.push_back(labeled_report_from_json(json::parse(read_text(p))));
      std::vector<std::string> keys = cli_detail::split_csv(rp_group);
      if (rp_group.empty())
        keys = reports.front().benchmark == Benchmark::Grasp ? std::vector<std::string>{"distribution", "obstacles"}
                                                             : std::vector<std::string>{"task"};
      auto matrix = aggregate(reports, keys);
      if (!rp_delta.empty()) {
        const auto colon = rp_delta.find(':');
        if (colon == std::string::npos) throw CLI::ValidationError("--delta", "expected BASE:TARGET");
        add_delta(matrix, rp_delta.substr(0, colon), rp_delta.substr(colon + 1));
      }
      if (rp_format == "json")
        cli_detail::write_output(rp_out, to_json(matrix).dump(2) + "\n", out);
      else if (rp_format == "csv")
        cli_detail::write_output(rp_out, to_csv(matrix), out);
      else
        throw CLI::ValidationError("--format", "tsv is only produced with --curves");
      return kExitOk;
    }

    if (*rl) {
      auto path = std::filesystem::path(rl_from);
      const json rec = json::parse(read_text(path));
      if (!rec.contains("invocation")) throw Error(rl_from + " records no invocation");
      auto argv = rec["invocation"].get<std::vector<std::string>>();
      if (argv.empty() || (argv[0] != "refine" && argv[0] != "eval"))
        throw Error("only refine and eval runs can be replayed");
      const std::string out_flag = argv[0] == "refine" ? "--out" : "--report";
      std::string archive = rl_archive.empty() ? rec.value("archive", std::string()) : rl_archive;
      std::vector<std::string> next;
      for (std::size_t i = 0; i < argv.size(); ++i) {
        if (argv[i] == out_flag || argv[i] == "--archive") {
          if (argv[i] == "--archive" && archive.empty() && i + 1 < argv.size()) archive = argv[i + 1];
          ++i;
          continue;
        }
        if (argv[i] == "--replay") continue;
        next.push_back(argv[i]);
      }
      if (archive.empty()) throw Error("no archive recorded; pass --archive");
      for (auto s : {out_flag, rl_out}) next.push_back(s);
      for (auto s : {std::string("--archive"), archive, std::string("--replay")}) next.push_back(s);
      return run_cli(next, in, out, err);
    }

    if (*pol) {
      std::string line;
      std::getline(in, line);
      json req = json::parse(line, nullptr, false);
      try {
        if (req.is_discarded()) throw std::invalid_argument("request is not JSON");
        const auto r = request_from_json(req);
        const auto inst = instance_from_json(r.benchmark, r.instance);
        out << response_line(native_actions(pol_name, inst, pol_seed)) << "\n";
      } catch (const std::exception& e) {
        out << error_line(e.what()) << "\n";
      }
      out.flush();
      return kExitOk;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

inline int run_cli(int argc, char** argv, std::istream& in = std::cin, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), in, out, err);
}

}  // namespace gridplan
