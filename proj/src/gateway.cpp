#include "flatmatch/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "flatmatch/errors.hpp"
#include "flatmatch/gateway_templates.hpp"

namespace flatmatch {

namespace {

constexpr char kInitSystem[] =
    "You are now an expert in data governance, first I'll give you a "
    "definition, a requirement and some examples, and I need you to remember "
    "them for the following request.";

constexpr char kInitBriefing[] =
    "Definition:\n"
    "Unpivot: Transforming multiple horizontally arranged numeric columns "
    "into vertical attribute-value pairs, preserving identifier columns, "
    "where original column names become values in a new attribute column and "
    "their corresponding data is consolidated into a unified value column.\n"
    "Requirement:\n"
    "Your task is to detect the attributes that can be unpivoted in the "
    "source table. A source table and a target table for reference will be "
    "provided. Your answer should be in JSON format and no explanation is "
    "needed. For example, if the attributes to be unpivoted is [A, B, C, D], "
    "your answer should be {\"unpivot_columns\": [\"A\", \"B\", \"C\", "
    "\"D\"]}. If no attribute is in the unpivot subset, answer with an empty "
    "unpivot_columns array, that is, {\"unpivot_columns\": []}. And remember "
    "that your JSON string should be pure text, do not put it in a code "
    "block.\n"
    "Example:\n"
    "For input attributes [Product, Jan_Sales, Feb_Sales], the corresponding "
    "output attribute is [Jan_Sales, Feb_Sales], and the output answer "
    "should be {\"unpivot_columns\": [\"Jan_Sales\", \"Feb_Sales\"]}.\n"
    "Example:\n"
    "For input attributes [Trade, Date, Quantity], the corresponding output "
    "attribute is [], because there is no attribute to be unpivoted, and the "
    "output answer should be {\"unpivot_columns\": []}.";

constexpr char kInitAck[] =
    "Got it! Please provide the source and target tables so I can determine "
    "the unpivot columns and provide the JSON output.";

constexpr char kInitRequest[] =
    "### Identify the columns that can be unpivoted in a list of column "
    "names and with no explanation.";

constexpr char kFeedbackSystem[] =
    "You are now an expert in data governance and schema matching, and "
    "provides feedback on the quality of unpivot detection.";

constexpr char kFeedbackRequest[] =
    "### Evaluate the columns selected to be unpivoted from the source "
    "table. The selection aims to transfer the source table to the target "
    "table. You should focus on the transformation between the source and "
    "target table structure rather than the meaning of unpivot. The provided "
    "sample data may have been anonymised. Analyze this answer strictly and "
    "critically, point out every flaw for every possible imperfection about "
    "the selection. You only need to evaluate the selection of unpivot "
    "subset itself. Note that the selected subset is under loose limits, "
    "your task is to reduce the size of the subset if there exists redundant "
    "attributes in the subset. Remember the attributes should be selected "
    "from the source attributes, do not use names that do not exist.";

constexpr char kRefineRequest[] =
    "### Refine your selection based on the feedback. If the feedback "
    "indicates that the selection is ideal, then you can remain the "
    "selection unchanged. Note that the suggested subset provided in the "
    "feedback may contain attributes that are not in the source table, you "
    "should not totally rely on it, but rather use it as a reference and "
    "strictly select from source attributes.";

constexpr char kSourceColumnsHeader[] = "### Source column names:";
constexpr char kDescriptionHeader[] = "### Description:";
constexpr char kTargetColumnsHeader[] = "### Target column names for reference:";
constexpr char kSourceSamplesHeader[] = "### Sample data from source table:";
constexpr char kTargetSamplesHeader[] = "### Sample data from target table:";
constexpr char kSelectedHeader[] = "### Selected columns for unpivot:";
constexpr char kFeedbackHeader[] = "### Feedback:";

constexpr char kDefaultVarName[] = "Metric";
constexpr char kDefaultValueName[] = "Value";

struct PromptSection {
  std::string header;
  std::vector<std::string> items;
};

// Sections are framed by lone '#' lines, one frame line between adjacent
// sections and none after the last.
std::string assemble_sections(const std::string& lead,
                              const std::vector<PromptSection>& sections) {
  std::string out = lead;
  for (std::size_t k = 0; k < sections.size(); ++k) {
    out += "\n" + sections[k].header + "\n#";
    for (const auto& item : sections[k].items) out += "\n# " + item;
    if (k + 1 < sections.size()) out += "\n#";
  }
  return out;
}

// Candidate sets are stored sorted; prompts list them in the source table's
// attribute order, with any stray names appended as given.
std::vector<std::string> in_source_order(
    const std::vector<std::string>& candidate_set, const Table& source) {
  std::set<std::string> pending(candidate_set.begin(), candidate_set.end());
  std::vector<std::string> ordered;
  ordered.reserve(candidate_set.size());
  for (const auto& attr : source.attributes) {
    if (pending.erase(attr) > 0) ordered.push_back(attr);
  }
  for (const auto& name : candidate_set) {
    if (pending.count(name)) ordered.push_back(name);
  }
  return ordered;
}

std::string bracket_list(const std::vector<std::string>& names) {
  std::string out = "[";
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += ", ";
    out += names[i];
  }
  out += "]";
  return out;
}

std::vector<std::string> description_items(const Table& t) {
  std::vector<std::string> items;
  for (const auto& attr : t.attributes) {
    auto it = t.descriptions.find(attr);
    if (it != t.descriptions.end() && !it->second.empty()) {
      items.push_back(attr + ": " + it->second);
    }
  }
  return items;
}

std::vector<std::string> sample_items(
    const std::vector<std::vector<Cell>>& rows) {
  std::vector<std::string> items;
  items.reserve(rows.size());
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) line.push_back(',');
      line += row[i].to_string();
    }
    items.push_back(std::move(line));
  }
  return items;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) lines.push_back(current);
  return lines;
}

void append_instance_sections(std::vector<PromptSection>& sections,
                              const Table& source, const Table& target) {
  sections.push_back({kSourceColumnsHeader, source.attributes});
  auto descriptions = description_items(source);
  if (!descriptions.empty()) {
    sections.push_back({kDescriptionHeader, std::move(descriptions)});
  }
  sections.push_back({kTargetColumnsHeader, target.attributes});
}

std::string replace_all(std::string text, const std::string& placeholder,
                        const std::string& replacement) {
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), replacement);
    pos += replacement.size();
  }
  return text;
}

// Conversation template format: "[role]" lines start a message, the
// following lines are its content.
std::vector<ChatMessage> parse_conversation_template(std::string_view text) {
  std::vector<ChatMessage> messages;
  for (const auto& line : split_lines(std::string(text))) {
    if (line == "[system]" || line == "[user]" || line == "[assistant]") {
      messages.push_back({line.substr(1, line.size() - 2), std::string()});
      continue;
    }
    if (messages.empty()) continue;  // ignore preamble outside any role
    if (!messages.back().content.empty()) messages.back().content += "\n";
    messages.back().content += line;
  }
  return messages;
}

std::string avoid_collision(const std::string& name,
                            const std::set<std::string>& taken) {
  if (!taken.count(name)) return name;
  for (std::size_t k = 1;; ++k) {
    std::string candidate = name + "_" + std::to_string(k);
    if (!taken.count(candidate)) return candidate;
  }
}

}  // namespace

std::vector<ChatMessage> render_init_prompt(const Table& source,
                                            const Table& target) {
  std::vector<PromptSection> sections;
  append_instance_sections(sections, source, target);
  return {
      {"system", kInitSystem},
      {"user", kInitBriefing},
      {"assistant", kInitAck},
      {"user", assemble_sections(kInitRequest, sections)},
  };
}

std::vector<ChatMessage> render_feedback_prompt(
    const Table& source, const Table& target,
    const std::vector<std::string>& candidate_set,
    const std::vector<std::vector<Cell>>& source_samples,
    const std::vector<std::vector<Cell>>& target_samples) {
  std::vector<PromptSection> sections;
  append_instance_sections(sections, source, target);
  sections.push_back({kSourceSamplesHeader, sample_items(source_samples)});
  sections.push_back({kTargetSamplesHeader, sample_items(target_samples)});
  sections.push_back(
      {kSelectedHeader,
       {bracket_list(in_source_order(candidate_set, source))}});
  return {
      {"system", kFeedbackSystem},
      {"user", assemble_sections(kFeedbackRequest, sections)},
  };
}

std::vector<ChatMessage> render_refine_prompt(
    const std::vector<ChatMessage>& init_conversation,
    const std::string& assistant_reply, const std::string& feedback_text) {
  std::vector<ChatMessage> messages = init_conversation;
  messages.push_back({"assistant", assistant_reply});
  std::vector<PromptSection> sections;
  sections.push_back({kFeedbackHeader, split_lines(feedback_text)});
  messages.push_back({"user", assemble_sections(kRefineRequest, sections)});
  return messages;
}

std::vector<ChatMessage> render_naming_prompt(
    const std::vector<std::string>& candidate_set, const Table& source,
    const Table& target) {
  std::string columns_line =
      bracket_list(in_source_order(candidate_set, source));
  std::string target_lines;
  for (std::size_t i = 0; i < target.attributes.size(); ++i) {
    if (i > 0) target_lines += "\n";
    target_lines += "# " + target.attributes[i];
  }
  std::string rendered =
      replace_all(detail::kVarValueNamingTemplate, "{{unpivot_columns}}",
                  columns_line);
  rendered = replace_all(std::move(rendered), "{{target_columns}}",
                         target_lines);
  return parse_conversation_template(rendered);
}

std::string format_conversation(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i > 0) out += "\n";
    out += "[" + messages[i].role + "]\n" + messages[i].content + "\n";
  }
  return out;
}

std::optional<std::string> extract_first_json_object(
    std::string_view text, std::string_view required_key) {
  for (std::size_t start = 0; start < text.size(); ++start) {
    if (text[start] != '{') continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char ch = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (ch == '\\') {
          escaped = true;
        } else if (ch == '"') {
          in_string = false;
        }
        continue;
      }
      if (ch == '"') {
        in_string = true;
      } else if (ch == '{') {
        ++depth;
      } else if (ch == '}') {
        --depth;
        if (depth == 0) {
          std::string candidate(text.substr(start, i - start + 1));
          auto doc = nlohmann::json::parse(candidate, nullptr, false);
          if (doc.is_object() && doc.contains(std::string(required_key))) {
            return candidate;
          }
          break;  // balanced but unsuitable; try later '{' positions
        }
      }
    }
  }
  return std::nullopt;
}

ProposerResponse propose(Gateway& gateway,
                         const std::vector<ChatMessage>& messages) {
  const std::size_t attempts = 1 + gateway.max_retries();
  std::string last_raw;
  std::string last_error = "no reply";
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    std::string reply;
    try {
      reply = gateway.complete(messages);
    } catch (const ScriptExhaustedError&) {
      throw;
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    last_raw = reply;
    auto object_text = extract_first_json_object(reply, "unpivot_columns");
    if (!object_text) {
      last_error = "reply contains no unpivot_columns object";
      continue;
    }
    auto doc = nlohmann::json::parse(*object_text, nullptr, false);
    if (!doc["unpivot_columns"].is_array()) {
      last_error = "unpivot_columns is not an array";
      continue;
    }
    ProposerResponse response;
    response.raw = reply;
    bool all_strings = true;
    for (const auto& item : doc["unpivot_columns"]) {
      if (!item.is_string()) {
        all_strings = false;
        break;
      }
      response.unpivot_columns.push_back(item.get<std::string>());
    }
    if (!all_strings) {
      last_error = "unpivot_columns contains a non-string entry";
      continue;
    }
    return response;
  }
  throw ParseError("proposal failed after " + std::to_string(attempts) +
                       " attempts: " + last_error,
                   last_raw);
}

ProposerResponse sanitize_proposal(ProposerResponse response,
                                   const std::vector<std::string>& source_attrs,
                                   std::vector<std::string>* warnings) {
  std::set<std::string_view> known(source_attrs.begin(), source_attrs.end());
  std::set<std::string> seen;
  std::vector<std::string> kept;
  for (auto& name : response.unpivot_columns) {
    if (!known.count(name)) {
      if (warnings) {
        warnings->push_back("dropped unknown attribute '" + name + "'");
      }
      continue;
    }
    if (!seen.insert(name).second) {
      if (warnings) {
        warnings->push_back("dropped repeated attribute '" + name + "'");
      }
      continue;
    }
    kept.push_back(std::move(name));
  }
  response.unpivot_columns = std::move(kept);
  return response;
}

std::pair<std::string, std::string> name_var_value(
    Gateway& gateway, const std::vector<std::string>& candidate_set,
    const Table& source, const Table& target) {
  std::string var = kDefaultVarName;
  std::string value = kDefaultValueName;

  auto messages = render_naming_prompt(candidate_set, source, target);
  const std::size_t attempts = 1 + gateway.max_retries();
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    std::string reply;
    try {
      reply = gateway.complete(messages);
    } catch (const ScriptExhaustedError&) {
      throw;
    } catch (const TransportError&) {
      continue;
    }
    auto object_text = extract_first_json_object(reply, "var_name");
    if (!object_text) break;  // unusable reply: fall back to the defaults
    auto doc = nlohmann::json::parse(*object_text, nullptr, false);
    if (doc["var_name"].is_string() &&
        !doc["var_name"].get<std::string>().empty()) {
      var = doc["var_name"].get<std::string>();
    }
    if (doc.contains("value_name") && doc["value_name"].is_string() &&
        !doc["value_name"].get<std::string>().empty()) {
      value = doc["value_name"].get<std::string>();
    }
    break;
  }

  std::set<std::string> candidate(candidate_set.begin(), candidate_set.end());
  std::set<std::string> taken;
  for (const auto& attr : source.attributes) {
    if (!candidate.count(attr)) taken.insert(attr);  // retained attributes
  }
  var = avoid_collision(var, taken);
  taken.insert(var);
  value = avoid_collision(value, taken);
  return {var, value};
}

HttpGateway::HttpGateway(GatewayConfig config) : config_(std::move(config)) {}

std::string HttpGateway::do_complete(const std::vector<ChatMessage>& messages) {
  auto scheme_end = config_.endpoint_url.find("://");
  if (scheme_end == std::string::npos) {
    throw TransportError("gateway endpoint URL lacks a scheme: " +
                         config_.endpoint_url);
  }
  auto path_start = config_.endpoint_url.find('/', scheme_end + 3);
  std::string base = path_start == std::string::npos
                         ? config_.endpoint_url
                         : config_.endpoint_url.substr(0, path_start);
  std::string path = path_start == std::string::npos
                         ? std::string("/")
                         : config_.endpoint_url.substr(path_start);

  httplib::Client client(base);
  auto seconds =
      std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  client.set_connection_timeout(seconds.count(), 0);
  client.set_read_timeout(seconds.count(), 0);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env_var.c_str());
      key != nullptr && key[0] != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  nlohmann::json body;
  body["model"] = config_.model_name;
  body["messages"] = nlohmann::json::array();
  for (const auto& message : messages) {
    body["messages"].push_back(
        {{"role", message.role}, {"content", message.content}});
  }
  body["temperature"] = config_.temperature;

  std::string payload = body.dump();
  if (config_.verbose) {
    std::cerr << "[gateway] POST " << config_.endpoint_url << "\n"
              << payload << "\n";
  }
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) {
    throw TransportError("gateway request to " + config_.endpoint_url +
                         " failed: " + httplib::to_string(res.error()));
  }
  if (config_.verbose) {
    std::cerr << "[gateway] HTTP " << res->status << "\n" << res->body << "\n";
  }
  if (res->status != 200) {
    throw TransportError("gateway returned HTTP " +
                         std::to_string(res->status) + ": " + res->body);
  }
  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (!doc.is_object() || !doc.contains("choices") ||
      !doc["choices"].is_array() || doc["choices"].empty() ||
      !doc["choices"][0].contains("message") ||
      !doc["choices"][0]["message"].contains("content") ||
      !doc["choices"][0]["message"]["content"].is_string()) {
    throw TransportError("gateway reply lacks choices[0].message.content");
  }
  return doc["choices"][0]["message"]["content"].get<std::string>();
}

void MockGateway::enqueue(std::string reply) {
  std::lock_guard<std::mutex> lock(mutex_);
  script_.push_back(std::move(reply));
}

void MockGateway::set_rule(PromptKind kind, std::string reply) {
  std::lock_guard<std::mutex> lock(mutex_);
  rules_[kind] = std::move(reply);
}

void MockGateway::set_default_rule(std::string reply) {
  std::lock_guard<std::mutex> lock(mutex_);
  default_rule_ = std::move(reply);
}

std::map<PromptKind, std::size_t> MockGateway::call_log() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return log_;
}

std::size_t MockGateway::calls_of_kind(PromptKind kind) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = log_.find(kind);
  return it == log_.end() ? 0 : it->second;
}

PromptKind MockGateway::classify(const std::vector<ChatMessage>& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role != "user") continue;
    const std::string& content = it->content;
    auto starts_with = [&content](std::string_view prefix) {
      return content.rfind(prefix, 0) == 0;
    };
    if (starts_with("### Identify the columns")) return PromptKind::Init;
    if (starts_with("### Evaluate the columns")) return PromptKind::Feedback;
    if (starts_with("### Refine your selection")) return PromptKind::Refine;
    if (starts_with("### Name the two columns")) return PromptKind::Naming;
    return PromptKind::Other;
  }
  return PromptKind::Other;
}

std::string MockGateway::do_complete(const std::vector<ChatMessage>& messages) {
  PromptKind kind = classify(messages);
  std::lock_guard<std::mutex> lock(mutex_);
  ++log_[kind];
  if (!script_.empty()) {
    std::string reply = std::move(script_.front());
    script_.pop_front();
    return reply;
  }
  if (auto it = rules_.find(kind); it != rules_.end()) return it->second;
  if (default_rule_) return *default_rule_;
  throw ScriptExhaustedError("mock gateway script exhausted and no rule set");
}

}  // namespace flatmatch
