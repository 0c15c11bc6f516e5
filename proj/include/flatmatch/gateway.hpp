#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flatmatch/table.hpp"

namespace flatmatch {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// A parsed unpivot proposal plus the raw model text it came from.
struct ProposerResponse {
  std::vector<std::string> unpivot_columns;
  std::string raw;
};

struct GatewayConfig {
  std::string endpoint_url;  // e.g. https://host/v1/chat/completions
  std::string model_name;
  std::string api_key_env_var = "FLATMATCH_API_KEY";
  std::chrono::milliseconds timeout{60000};
  std::size_t max_retries = 3;
  double temperature = 0.0;
  bool verbose = false;
};

// A chat-completion backend. complete() counts every call, including
// retries, so searches can report how many model calls they spent.
class Gateway {
 public:
  virtual ~Gateway() = default;

  std::string complete(const std::vector<ChatMessage>& messages) {
    ++calls_;
    return do_complete(messages);
  }

  std::size_t call_count() const { return calls_.load(); }
  virtual std::size_t max_retries() const { return 3; }

 private:
  virtual std::string do_complete(const std::vector<ChatMessage>& messages) = 0;

  std::atomic<std::size_t> calls_{0};
};

// --- Prompt rendering ------------------------------------------------------

// Initial proposal conversation: system framing, task definition with two
// worked examples, a fixed assistant acknowledgement, then the instance
// (source columns, their descriptions when present, target columns).
std::vector<ChatMessage> render_init_prompt(const Table& source,
                                            const Table& target);

// Critique request for a candidate set, with up to the given sample rows of
// both tables and the selected columns spelled out.
std::vector<ChatMessage> render_feedback_prompt(
    const Table& source, const Table& target,
    const std::vector<std::string>& candidate_set,
    const std::vector<std::vector<Cell>>& source_samples,
    const std::vector<std::vector<Cell>>& target_samples);

// Full refine conversation: the init conversation, the assistant reply that
// produced the candidate, and a refine turn quoting the feedback verbatim.
std::vector<ChatMessage> render_refine_prompt(
    const std::vector<ChatMessage>& init_conversation,
    const std::string& assistant_reply, const std::string& feedback_text);

// Asks the model to name the generated var/value columns. The wording lives
// in templates/var_value_naming.txt and is embedded at build time.
std::vector<ChatMessage> render_naming_prompt(
    const std::vector<std::string>& candidate_set, const Table& source,
    const Table& target);

// "[role]\n<content>\n" blocks joined by blank lines; used for golden files
// and verbose logging.
std::string format_conversation(const std::vector<ChatMessage>& messages);

// --- Reply handling --------------------------------------------------------

// First balanced JSON object in the text that contains required_key.
// Tolerates code fences and surrounding prose.
std::optional<std::string> extract_first_json_object(
    std::string_view text, std::string_view required_key);

// Sends the conversation and parses an {"unpivot_columns": [...]} object out
// of the reply, retrying transport and parse failures up to the gateway's
// max_retries. Throws ParseError (with the raw reply) when every attempt
// fails to yield one.
ProposerResponse propose(Gateway& gateway,
                         const std::vector<ChatMessage>& messages);

// Drops names that are not source attributes and deduplicates, preserving
// order. Each dropped or repeated name appends a note to warnings.
ProposerResponse sanitize_proposal(ProposerResponse response,
                                   const std::vector<std::string>& source_attrs,
                                   std::vector<std::string>* warnings = nullptr);

// Names for the generated (var, value) columns: asks the gateway, falls back
// to "Metric"/"Value" when the reply is unusable, and suffixes either name
// when it collides with a retained source attribute or with the other name.
std::pair<std::string, std::string> name_var_value(
    Gateway& gateway, const std::vector<std::string>& candidate_set,
    const Table& source, const Table& target);

// --- Transports -------------------------------------------------------------

// Chat-completion endpoint speaking the common JSON wire format:
// POST {"model", "messages", "temperature"} ->
// {"choices": [{"message": {"content": ...}}]}.
class HttpGateway final : public Gateway {
 public:
  explicit HttpGateway(GatewayConfig config);

  std::size_t max_retries() const override { return config_.max_retries; }

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

  GatewayConfig config_;
};

enum class PromptKind { Init, Feedback, Refine, Naming, Other };

// Deterministic offline gateway for tests and reproducible runs. Replies
// come from an ordered script first, then from per-kind rules, then from a
// default rule; with none left it throws ScriptExhaustedError. Thread-safe;
// keeps a per-kind call log.
class MockGateway final : public Gateway {
 public:
  void enqueue(std::string reply);
  void set_rule(PromptKind kind, std::string reply);
  void set_default_rule(std::string reply);

  std::map<PromptKind, std::size_t> call_log() const;
  std::size_t calls_of_kind(PromptKind kind) const;

  static PromptKind classify(const std::vector<ChatMessage>& messages);

 private:
  std::string do_complete(const std::vector<ChatMessage>& messages) override;

  mutable std::mutex mutex_;
  std::deque<std::string> script_;
  std::map<PromptKind, std::string> rules_;
  std::optional<std::string> default_rule_;
  std::map<PromptKind, std::size_t> log_;
};

}  // namespace flatmatch
