#pragma once

// Chat-completions client: retrying HTTP transport, append-only JSONL
// archive with replay by digest, a USD cost ledger, and the extractors that
// turn responses into code or action lists.

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "gridplan/core.hpp"
#include "httplib.h"

namespace gridplan {

struct TransportError : Error {
  using Error::Error;
};
struct ReplayMiss : Error {
  using Error::Error;
};
struct NoCode : Error {
  using Error::Error;
};
struct NoTag : Error {
  using Error::Error;
};
struct BadList : Error {
  using Error::Error;
};

struct Message {
  std::string role;  // system | user | assistant
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

inline json to_json(const Message& m) { return {{"role", m.role}, {"content", m.content}}; }

inline std::vector<Message> messages_from_json(const json& j) {
  std::vector<Message> out;
  for (const auto& m : j) out.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  std::string out;
  char hex[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(hex, sizeof hex, "%02x", md[i]);
    out += hex;
  }
  return out;
}

// Digest of the model and the exact message list; independent of options.
inline std::string cache_key(const std::string& model, const std::vector<Message>& messages) {
  json m = json::array();
  for (const auto& msg : messages) m.push_back(to_json(msg));
  return sha256_hex(json{{"model", model}, {"messages", m}}.dump());
}

struct ChatOptions {
  std::optional<double> temperature;  // provider default when unset
  std::optional<int> max_tokens;
  int max_retries = 4;
  int backoff_ms = 1000;  // doubled per retry
  int timeout_s = 600;
};

inline json to_json(const ChatOptions& o) {
  json j = json::object();
  if (o.temperature) j["temperature"] = *o.temperature;
  if (o.max_tokens) j["max_tokens"] = *o.max_tokens;
  return j;
}

struct ChatExchange {
  std::string model;
  std::vector<Message> messages;
  std::string response_text;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  double cost_usd = 0.0;
  std::string timestamp;  // UTC, ISO 8601
  std::string cache_key;
  int retries = 0;
  json options = json::object();
  bool replayed = false;  // served from the archive (not persisted)
};

inline json to_json(const ChatExchange& e) {
  json msgs = json::array();
  for (const auto& m : e.messages) msgs.push_back(to_json(m));
  return {{"model", e.model},
          {"messages", msgs},
          {"response_text", e.response_text},
          {"usage", {{"prompt_tokens", e.prompt_tokens}, {"completion_tokens", e.completion_tokens}}},
          {"cost_usd", e.cost_usd},
          {"timestamp", e.timestamp},
          {"cache_key", e.cache_key},
          {"retries", e.retries},
          {"options", e.options}};
}

inline ChatExchange exchange_from_json(const json& j) {
  ChatExchange e;
  e.model = j.at("model").get<std::string>();
  e.messages = messages_from_json(j.at("messages"));
  e.response_text = j.at("response_text").get<std::string>();
  e.prompt_tokens = j.at("usage").value("prompt_tokens", 0L);
  e.completion_tokens = j.at("usage").value("completion_tokens", 0L);
  e.cost_usd = j.value("cost_usd", 0.0);
  e.timestamp = j.value("timestamp", std::string());
  e.cache_key = j.value("cache_key", cache_key(e.model, e.messages));
  e.retries = j.value("retries", 0);
  e.options = j.value("options", json::object());
  return e;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Rates, in USD per million tokens. Loaded from a JSON config file:
//   {"<model>": {"prompt": 2.5, "completion": 10.0}, ...}

struct ModelRate {
  double prompt_per_mtok = 0.0;
  double completion_per_mtok = 0.0;
};

class RateTable {
 public:
  RateTable() = default;
  explicit RateTable(std::map<std::string, ModelRate> rates) : rates_(std::move(rates)) {}

  static RateTable from_json(const json& j) {
    std::map<std::string, ModelRate> r;
    for (const auto& [model, v] : j.items())
      r[model] = {v.value("prompt", 0.0), v.value("completion", 0.0)};
    return RateTable(std::move(r));
  }

  static RateTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read rate table " + path);
    return from_json(json::parse(in));
  }

  // Unknown models cost nothing.
  double cost(const std::string& model, long prompt_tokens, long completion_tokens) const {
    auto it = rates_.find(model);
    if (it == rates_.end()) return 0.0;
    return (static_cast<double>(prompt_tokens) * it->second.prompt_per_mtok +
            static_cast<double>(completion_tokens) * it->second.completion_per_mtok) /
           1e6;
  }

  bool has(const std::string& model) const { return rates_.count(model) > 0; }

 private:
  std::map<std::string, ModelRate> rates_;
};

// spent: money that left through the network in this process.
// attributed: cost of every exchange used, archived ones at their recorded
// price, which is what per-instance amortization reports.
class CostLedger {
 public:
  void record(const ChatExchange& e) {
    std::lock_guard lock(mu_);
    attributed_ += e.cost_usd;
    if (!e.replayed) spent_ += e.cost_usd;
    ++calls_;
  }
  double spent_usd() const {
    std::lock_guard lock(mu_);
    return spent_;
  }
  double attributed_usd() const {
    std::lock_guard lock(mu_);
    return attributed_;
  }
  int calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }
  double per_instance(std::size_t corpus_size) const {
    if (corpus_size == 0) throw std::invalid_argument("per_instance: empty corpus");
    return attributed_usd() / static_cast<double>(corpus_size);
  }

 private:
  mutable std::mutex mu_;
  double spent_ = 0.0;
  double attributed_ = 0.0;
  int calls_ = 0;
};

// ---------------------------------------------------------------------------
// Transport

struct HttpReply {
  int status = 0;  // 0 = no response
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpReply post(const std::string& url, const std::string& bearer, const std::string& body,
                         int timeout_s) = 0;
};

class HttplibTransport : public HttpTransport {
 public:
  HttpReply post(const std::string& url, const std::string& bearer, const std::string& body, int timeout_s) override {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) return {0, "", "malformed URL " + url};
    httplib::Client cli(m[1].str());
    cli.set_connection_timeout(30);
    cli.set_read_timeout(timeout_s);
    cli.set_write_timeout(60);
    httplib::Headers headers;
    if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
    const std::string path = m[2].matched ? m[2].str() : "/";
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) return {0, "", httplib::to_string(res.error())};
    return {res->status, res->body, ""};
  }
};

// ---------------------------------------------------------------------------
// Archive

class ChatArchive {
 public:
  ChatArchive() = default;
  explicit ChatArchive(std::string path) : path_(std::move(path)) { load(); }

  const std::string& path() const { return path_; }

  void append(const ChatExchange& e) {
    std::lock_guard lock(mu_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app | std::ios::binary);
      if (!out) throw Error("cannot append to archive " + path_);
      out << to_json(e).dump() << "\n";
    }
    by_key_[e.cache_key].push_back(e);
  }

  // Repeated identical requests are served in recorded order; the last
  // record repeats once they run out.
  std::optional<ChatExchange> next(const std::string& key) {
    std::lock_guard lock(mu_);
    auto it = by_key_.find(key);
    if (it == by_key_.end() || it->second.empty()) return std::nullopt;
    auto& cursor = cursor_[key];
    ChatExchange e = it->second[std::min(cursor, it->second.size() - 1)];
    ++cursor;
    return e;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [k, v] : by_key_) n += v.size();
    return n;
  }

 private:
  void load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(path_ + ":" + std::to_string(line_no) + ": malformed archive record");
      auto e = exchange_from_json(j);
      by_key_[e.cache_key].push_back(std::move(e));
    }
  }

  std::string path_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<ChatExchange>> by_key_;
  std::map<std::string, std::size_t> cursor_;
};

// ---------------------------------------------------------------------------
// Gateway

enum class GatewayMode : std::uint8_t { Live, Replay, ReplayOrLive };

struct GatewayConfig {
  std::string api_url = "https://openrouter.ai/api/v1/chat/completions";
  std::string api_key;
  GatewayMode mode = GatewayMode::Live;
  std::string archive_path;  // empty: keep in memory only
  RateTable rates;

  // GRIDPLAN_API_URL / GRIDPLAN_API_KEY override the defaults.
  static GatewayConfig from_env() {
    GatewayConfig c;
    if (const char* u = std::getenv("GRIDPLAN_API_URL"); u && *u) c.api_url = u;
    if (const char* k = std::getenv("GRIDPLAN_API_KEY"); k && *k) c.api_key = k;
    return c;
  }
};

using ChatFn = std::function<ChatExchange(const std::string& model, const std::vector<Message>& messages)>;

class Gateway {
 public:
  explicit Gateway(GatewayConfig cfg, std::shared_ptr<HttpTransport> transport = std::make_shared<HttplibTransport>())
      : cfg_(std::move(cfg)), transport_(std::move(transport)), archive_(cfg_.archive_path) {}

  // Injectable so tests do not wait through real backoff.
  std::function<void(int ms)> sleep = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };

  ChatExchange chat(const std::string& model, const std::vector<Message>& messages, const ChatOptions& opts = {}) {
    const std::string key = cache_key(model, messages);
    if (cfg_.mode != GatewayMode::Live) {
      if (auto e = archive_.next(key)) {
        e->replayed = true;
        ledger_.record(*e);
        return *e;
      }
      if (cfg_.mode == GatewayMode::Replay) throw ReplayMiss("no archived exchange for " + key.substr(0, 16));
    }
    if (cfg_.api_key.empty()) throw TransportError("no API key configured (GRIDPLAN_API_KEY)");

    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back(to_json(m));
    json body = {{"model", model}, {"messages", msgs}};
    const json extra = to_json(opts);
    for (const auto& [k, v] : extra.items()) body[k] = v;
    const std::string payload = body.dump();

    int retries = 0;
    std::string last_error;
    for (int attempt = 0;; ++attempt) {
      const HttpReply r = transport_->post(cfg_.api_url, cfg_.api_key, payload, opts.timeout_s);
      const bool retryable = r.status == 0 || r.status == 429 || r.status >= 500;
      if (r.status == 200) {
        ChatExchange e = parse_reply(model, messages, r.body);
        e.cache_key = key;
        e.retries = retries;
        e.options = to_json(opts);
        archive_.append(e);
        ledger_.record(e);
        return e;
      }
      last_error = r.status == 0 ? r.error : "HTTP " + std::to_string(r.status) + ": " + r.body.substr(0, 300);
      if (!retryable || attempt >= opts.max_retries) break;
      ++retries;
      sleep(opts.backoff_ms << std::min(attempt, 16));
    }
    throw TransportError("chat failed after " + std::to_string(retries) + " retries: " + last_error);
  }

  ChatFn as_chat_fn(ChatOptions opts = {}) {
    return [this, opts](const std::string& model, const std::vector<Message>& messages) {
      return chat(model, messages, opts);
    };
  }

  const CostLedger& ledger() const { return ledger_; }
  const ChatArchive& archive() const { return archive_; }
  const GatewayConfig& config() const { return cfg_; }

 private:
  ChatExchange parse_reply(const std::string& model, const std::vector<Message>& messages, const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw TransportError("provider returned non-JSON body");
    ChatExchange e;
    e.model = model;
    e.messages = messages;
    try {
      const auto& content = j.at("choices").at(0).at("message").at("content");
      e.response_text = content.is_string() ? content.get<std::string>() : std::string();
    } catch (const json::exception&) {
      throw TransportError("provider response has no choices[0].message.content");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      e.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
      e.completion_tokens = j["usage"].value("completion_tokens", 0L);
    }
    e.cost_usd = cfg_.rates.cost(model, e.prompt_tokens, e.completion_tokens);
    e.timestamp = utc_timestamp();
    return e;
  }

  GatewayConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  ChatArchive archive_;
  CostLedger ledger_;
};

// ---------------------------------------------------------------------------
// Extraction

enum class ExtractRule : std::uint8_t { FencedBlock, DefinitionScan };

inline constexpr std::string_view to_string(ExtractRule r) {
  return r == ExtractRule::FencedBlock ? "fenced_block" : "definition_scan";
}

struct ExtractedCode {
  std::string source;
  ExtractRule rule = ExtractRule::FencedBlock;
};

namespace detail {

inline bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

inline bool is_top_level_code(std::string_view line) {
  for (auto kw : {"def ", "class ", "import ", "from ", "@"})
    if (starts_with(line, kw)) return true;
  return false;
}

// The tail of a multi-line signature or literal, e.g. "):" or "]".
inline bool is_closing_line(std::string_view line) { return !line.empty() && (line[0] == ')' || line[0] == ']' || line[0] == '}'); }

}  // namespace detail

// Last complete ``` fenced block wins. Without one, the longest run of lines
// that starts at a top-level def/class/import and continues through
// indented, blank, closing-bracket or further top-level code lines,
// provided it defines a function.
inline ExtractedCode extract_code(std::string_view text) {
  const auto lines = split_lines(text);
  constexpr auto none = std::string::npos;
  std::optional<std::pair<std::size_t, std::size_t>> last;  // [open, close]
  std::size_t open = none;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!detail::starts_with(trim(lines[i]), "```")) continue;
    if (open == none) {
      open = i;
    } else {
      last = {open, i};
      open = none;
    }
  }
  if (last) {
    std::string src;
    for (std::size_t i = last->first + 1; i < last->second; ++i) src += lines[i] + "\n";
    return {src, ExtractRule::FencedBlock};
  }

  std::string best;
  for (std::size_t i = 0; i < lines.size();) {
    if (!detail::is_top_level_code(lines[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < lines.size() && (trim(lines[j]).empty() || lines[j][0] == ' ' || lines[j][0] == '\t' ||
                                detail::is_top_level_code(lines[j]) || lines[j][0] == '#' ||
                                detail::is_closing_line(lines[j])))
      ++j;
    std::size_t end = j;
    while (end > i && trim(lines[end - 1]).empty()) --end;
    std::string src;
    bool has_def = false;
    for (std::size_t k = i; k < end; ++k) {
      src += lines[k] + "\n";
      has_def |= detail::starts_with(lines[k], "def ");
    }
    if (has_def && src.size() > best.size()) best = std::move(src);
    i = j;
  }
  if (best.empty()) throw NoCode("response contains no fenced block or function definition");
  return {best, ExtractRule::DefinitionScan};
}

// Items of the bracketed list inside the last <tag>...</tag> pair. Items may
// be single- or double-quoted or bare words; '#' starts a comment outside
// quotes.
inline std::vector<std::string> extract_tagged(std::string_view text, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const auto c = text.rfind(close);
  if (c == std::string_view::npos) throw NoTag("no " + close + " in response");
  const auto o = text.rfind(open, c);
  if (o == std::string_view::npos) throw NoTag("no " + open + " before " + close);
  const std::string_view body = text.substr(o + open.size(), c - o - open.size());

  const auto lb = body.find('[');
  const auto rb = body.rfind(']');
  if (lb == std::string_view::npos || rb == std::string_view::npos || rb < lb)
    throw BadList("no bracketed list inside " + open);

  std::vector<std::string> out;
  std::string item;
  bool have_item = false;
  // Commas are optional between items; newline-separated strings are common.
  auto flush = [&] {
    if (!have_item && !trim(item).empty()) {
      item = std::string(trim(item));
      have_item = true;
    }
    if (have_item) out.push_back(item);
    item.clear();
    have_item = false;
  };
  for (std::size_t i = lb + 1; i < rb; ++i) {
    const char ch = body[i];
    if (ch == '"' || ch == '\'') {
      flush();
      const auto end = body.find(ch, i + 1);
      if (end == std::string_view::npos || end > rb) throw BadList("unterminated string in " + open);
      item = std::string(body.substr(i + 1, end - i - 1));
      have_item = true;
      i = end;
    } else if (ch == '#') {
      while (i < rb && body[i] != '\n') ++i;
    } else if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
      if (have_item) flush();
      item += ch;
    } else {
      throw BadList(std::string("unexpected character '") + ch + "' in " + open);
    }
  }
  flush();
  return out;
}

}  // namespace gridplan
