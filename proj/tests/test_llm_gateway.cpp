#include <gtest/gtest.h>

#include <filesystem>

#include "gridplan/llm_gateway.hpp"
#include "support/mock_provider.hpp"
#include "support/test_util.hpp"

using namespace gridplan;

namespace {

using testutil::MockProvider;

RateTable synthetic_rates() { return RateTable::from_json(json::parse(R"({"m": {"prompt": 2.0, "completion": 8.0}})")); }

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gridplan_gw_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::filesystem::remove(p);
  return p.string();
}

GatewayConfig live_config(const MockProvider& mock, const std::string& archive = "") {
  GatewayConfig c;
  c.api_url = mock.url();
  c.api_key = "test-key";
  c.archive_path = archive;
  c.rates = synthetic_rates();
  return c;
}

}  // namespace

TEST(LlmGateway, CacheKeyIsStableAndSensitive) {
  const std::vector<Message> a = {{"user", "hi"}};
  const std::vector<Message> b = {{"user", "hi!"}};
  EXPECT_EQ(cache_key("m", a), cache_key("m", a));
  EXPECT_NE(cache_key("m", a), cache_key("m", b));
  EXPECT_NE(cache_key("m", a), cache_key("n", a));
  EXPECT_EQ(cache_key("m", a).size(), 64u);
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(LlmGateway, RetriesThrough429) {
  MockProvider mock(2);
  Gateway gw(live_config(mock));
  std::vector<int> waits;
  gw.sleep = [&](int ms) { waits.push_back(ms); };
  const auto e = gw.chat("m", {{"user", "hello"}});
  EXPECT_EQ(e.response_text, "echo: hello");
  EXPECT_EQ(e.retries, 2);
  EXPECT_EQ(mock.hits(), 3);
  EXPECT_EQ(waits, (std::vector<int>{1000, 2000}));
  EXPECT_EQ(mock.last_auth(), "Bearer test-key");
  EXPECT_EQ(gw.archive().size(), 1u);
  EXPECT_EQ(e.prompt_tokens, 1000);
  EXPECT_EQ(e.completion_tokens, 500);
  EXPECT_DOUBLE_EQ(e.cost_usd, (1000 * 2.0 + 500 * 8.0) / 1e6);
}

TEST(LlmGateway, RetryBudgetExhaustedIsTransportError) {
  MockProvider mock(10);
  Gateway gw(live_config(mock));
  gw.sleep = [](int) {};
  ChatOptions o;
  o.max_retries = 2;
  EXPECT_THROW(gw.chat("m", {{"user", "x"}}, o), TransportError);
  EXPECT_EQ(mock.hits(), 3);
  EXPECT_EQ(gw.archive().size(), 0u);
}

TEST(LlmGateway, UnreachableHostIsTransportError) {
  GatewayConfig c;
  c.api_url = "http://127.0.0.1:1/v1/chat/completions";
  c.api_key = "k";
  Gateway gw(c);
  gw.sleep = [](int) {};
  ChatOptions o;
  o.max_retries = 1;
  EXPECT_THROW(gw.chat("m", {{"user", "x"}}, o), TransportError);
}

TEST(LlmGateway, MissingKeyIsTransportError) {
  GatewayConfig c;
  c.api_url = "http://127.0.0.1:1/";
  Gateway gw(c);
  EXPECT_THROW(gw.chat("m", {{"user", "x"}}), TransportError);
}

TEST(LlmGateway, OptionsReachTheWire) {
  MockProvider mock(0);
  Gateway gw(live_config(mock));
  ChatOptions o;
  o.temperature = 0.25;
  o.max_tokens = 77;
  const auto e = gw.chat("m", {{"system", "s"}, {"user", "u"}}, o);
  const auto body = json::parse(mock.last_body());
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"].size(), 2u);
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.25);
  EXPECT_EQ(body["max_tokens"], 77);
  EXPECT_DOUBLE_EQ(e.options["temperature"].get<double>(), 0.25);
}

TEST(LlmGateway, ReplayIsByteIdenticalAndFree) {
  const auto archive = temp_path("replay.jsonl");
  std::string live_text;
  {
    MockProvider mock(0);
    Gateway gw(live_config(mock, archive));
    live_text = gw.chat("m", {{"user", "plan \"quoted\"\n\ttabs"}}).response_text;
    EXPECT_GT(gw.ledger().spent_usd(), 0.0);
  }
  GatewayConfig c;
  c.mode = GatewayMode::Replay;
  c.archive_path = archive;
  Gateway replay(c);
  const auto e = replay.chat("m", {{"user", "plan \"quoted\"\n\ttabs"}});
  EXPECT_TRUE(e.replayed);
  EXPECT_EQ(e.response_text, live_text);
  EXPECT_EQ(replay.ledger().spent_usd(), 0.0);
  EXPECT_DOUBLE_EQ(replay.ledger().attributed_usd(), e.cost_usd);
  EXPECT_THROW(replay.chat("m", {{"user", "something else"}}), ReplayMiss);
}

TEST(LlmGateway, ReplayServesRepeatsInOrder) {
  ChatExchange a, b;
  a.model = b.model = "m";
  a.messages = b.messages = {{"user", "same"}};
  a.cache_key = b.cache_key = cache_key("m", a.messages);
  a.response_text = "first";
  b.response_text = "second";
  const auto path = temp_path("order.jsonl");
  {
    ChatArchive w(path);
    w.append(a);
    w.append(b);
  }
  GatewayConfig c;
  c.mode = GatewayMode::Replay;
  c.archive_path = path;
  Gateway gw(c);
  EXPECT_EQ(gw.chat("m", a.messages).response_text, "first");
  EXPECT_EQ(gw.chat("m", a.messages).response_text, "second");
  EXPECT_EQ(gw.chat("m", a.messages).response_text, "second");
}

TEST(LlmGateway, ReplayOrLiveFallsThrough) {
  MockProvider mock(0);
  auto c = live_config(mock, temp_path("rol.jsonl"));
  c.mode = GatewayMode::ReplayOrLive;
  Gateway gw(c);
  gw.chat("m", {{"user", "q"}});
  gw.chat("m", {{"user", "q"}});
  EXPECT_EQ(mock.hits(), 1);
  EXPECT_EQ(gw.ledger().calls(), 2);
  EXPECT_DOUBLE_EQ(gw.ledger().attributed_usd(), 2 * gw.ledger().spent_usd());
}

TEST(LlmGateway, ExchangeJsonRoundTrip) {
  ChatExchange e;
  e.model = "m";
  e.messages = {{"user", "u"}, {"assistant", "a"}};
  e.response_text = "r";
  e.prompt_tokens = 3;
  e.completion_tokens = 4;
  e.cost_usd = 0.125;
  e.timestamp = "2025-01-01T00:00:00Z";
  e.cache_key = cache_key(e.model, e.messages);
  e.retries = 1;
  const auto back = exchange_from_json(json::parse(to_json(e).dump()));
  EXPECT_EQ(to_json(back), to_json(e));
}

TEST(LlmGateway, LedgerIsAdditive) {
  const auto rates = synthetic_rates();
  CostLedger ledger;
  Rng rng(5);
  double sum = 0;
  for (int i = 0; i < 50; ++i) {
    ChatExchange e;
    e.prompt_tokens = static_cast<long>(rng.below(5000));
    e.completion_tokens = static_cast<long>(rng.below(5000));
    e.cost_usd = rates.cost("m", e.prompt_tokens, e.completion_tokens);
    e.replayed = i % 3 == 0;
    sum += e.cost_usd;
    ledger.record(e);
  }
  EXPECT_NEAR(ledger.attributed_usd(), sum, 1e-12);
  EXPECT_EQ(ledger.calls(), 50);
  EXPECT_LT(ledger.spent_usd(), ledger.attributed_usd());
  EXPECT_EQ(rates.cost("unknown", 1000, 1000), 0.0);
  EXPECT_THROW(ledger.per_instance(0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Extraction

TEST(ExtractCode, SingleFencedBlock) {
  const auto r = extract_code("Here you go:\n```python\ndef solve(g):\n    return []\n```\nDone.");
  EXPECT_EQ(r.source, "def solve(g):\n    return []\n");
  EXPECT_EQ(r.rule, ExtractRule::FencedBlock);
}

TEST(ExtractCode, LastBlockWins) {
  const auto r = extract_code("Old:\n```python\ndef solve(g):\n    return [1]\n```\nFixed:\n```\ndef solve(g):\n    return [2]\n```\n");
  EXPECT_EQ(r.source, "def solve(g):\n    return [2]\n");
}

TEST(ExtractCode, DefinitionScanWithoutFences) {
  const std::string text =
      "Sure. The idea is to walk greedily.\n\nimport math\n\ndef solve(grid):\n    x = 1\n\n    return [x]\n\nThis works because...\n";
  const auto r = extract_code(text);
  EXPECT_EQ(r.rule, ExtractRule::DefinitionScan);
  EXPECT_EQ(r.source, "import math\n\ndef solve(grid):\n    x = 1\n\n    return [x]\n");
}

TEST(ExtractCode, NoCodeThrows) {
  EXPECT_THROW(extract_code("I cannot help with that."), NoCode);
  EXPECT_THROW(extract_code("```\nunterminated"), NoCode);
  EXPECT_THROW(extract_code("import os\nprint(1)\n"), NoCode);
}

TEST(ExtractCode, Idempotent) {
  for (const char* text : {"```python\ndef solve(g):\n    return []\n```", "def solve(g):\n    return []\n"}) {
    const auto once = extract_code(text).source;
    const auto twice = extract_code("```python\n" + once + "```\n").source;
    EXPECT_EQ(once, twice);
    EXPECT_EQ(extract_code(once).source, once);
  }
}

TEST(ExtractCode, FixtureListingsDefineTheirSolver) {
  const std::pair<const char*, const char*> cases[] = {{"grasp_dg.py", "def solve_energy_game("},
                                                       {"grasp_ir.py", "def solve_grid("},
                                                       {"unlock_pickup_dg.py", "def solve("},
                                                       {"unlock_pickup_ir.py", "def solve("}};
  for (const auto& [file, def] : cases) {
    const auto src = testutil::fixture(std::string("programs/") + file);
    const auto fenced = extract_code("Here is my solution.\n\n```python\n" + src + "```\nIt should work.");
    EXPECT_EQ(fenced.source, src) << file;
    const auto bare = extract_code("Here is my solution.\n\n" + src + "\nIt should work.");
    EXPECT_EQ(bare.rule, ExtractRule::DefinitionScan);
    EXPECT_NE(bare.source.find(def), std::string::npos) << file;
  }
}

TEST(ExtractTagged, Examples) {
  EXPECT_EQ(extract_tagged(R"(<final_answer>["RIGHT","TAKE"]</final_answer>)", "final_answer"),
            (std::vector<std::string>{"RIGHT", "TAKE"}));
  EXPECT_EQ(extract_tagged(R"(<actions>["LEFT", "MOVE"]</actions>)", "actions"),
            (std::vector<std::string>{"LEFT", "MOVE"}));
  EXPECT_EQ(extract_tagged("<actions>\n[ 'LEFT',\n  'MOVE' ]\n</actions>", "actions"),
            (std::vector<std::string>{"LEFT", "MOVE"}));
  EXPECT_EQ(extract_tagged("<actions>[LEFT, MOVE PICKUP]</actions>", "actions"),
            (std::vector<std::string>{"LEFT", "MOVE", "PICKUP"}));
  EXPECT_EQ(extract_tagged("<actions>[\"LEFT\"  # turn\n \"MOVE\"]</actions>", "actions"),
            (std::vector<std::string>{"LEFT", "MOVE"}));
  EXPECT_TRUE(extract_tagged("<actions>[]</actions>", "actions").empty());
}

TEST(ExtractTagged, LastPairWins) {
  const std::string text = R"(Format: <final_answer>["A"]</final_answer> ... <final_answer>["UP","DROP"]</final_answer>)";
  EXPECT_EQ(extract_tagged(text, "final_answer"), (std::vector<std::string>{"UP", "DROP"}));
}

TEST(ExtractTagged, Errors) {
  EXPECT_THROW(extract_tagged(R"(<final_answer>["RIGHT"])", "final_answer"), NoTag);
  EXPECT_THROW(extract_tagged(R"(["RIGHT"]</final_answer>)", "final_answer"), NoTag);
  EXPECT_THROW(extract_tagged(R"(<actions>["LEFT"]</actions>)", "final_answer"), NoTag);
  EXPECT_THROW(extract_tagged("<actions>LEFT, MOVE</actions>", "actions"), BadList);
  EXPECT_THROW(extract_tagged(R"(<actions>["LEFT]</actions>)", "actions"), BadList);
  EXPECT_THROW(extract_tagged("<actions>[LEFT; MOVE]</actions>", "actions"), BadList);
}
