#include <atomic>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include "flatmatch/errors.hpp"
#include "flatmatch/gateway.hpp"
#include "fixtures.hpp"

using namespace flatmatch;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open ", path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string golden(const std::string& name) {
  return read_file(std::string(TESTDATA_DIR) + "/goldens/" + name);
}

}  // namespace

TEST_CASE("rendered prompts match the frozen goldens byte for byte") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();

  SUBCASE("initial proposal conversation") {
    CHECK(format_conversation(render_init_prompt(source, target)) ==
          golden("init_prompt.txt"));
  }
  SUBCASE("feedback request") {
    auto messages = render_feedback_prompt(source, target, {"HS", "AS"},
                                           source.records, target.records);
    CHECK(format_conversation(messages) == golden("feedback_prompt.txt"));
  }
  SUBCASE("refine conversation") {
    auto messages = render_refine_prompt(
        render_init_prompt(source, target),
        "{\"unpivot_columns\": [\"HS\", \"AS\", \"HST\", \"AST\"]}",
        "The selection includes HST and AST which do not appear in the "
        "target table; remove them.");
    CHECK(format_conversation(messages) == golden("refine_prompt.txt"));
  }
}

TEST_CASE("naming prompt fills the template placeholders") {
  auto messages = render_naming_prompt({"HS", "AS"}, fixtures::football_source(),
                                       fixtures::football_target());
  REQUIRE(messages.size() == 2);
  CHECK(messages[0].role == "system");
  CHECK(messages[1].role == "user");
  const std::string& body = messages[1].content;
  CHECK(body.find("{{") == std::string::npos);
  CHECK(body.find("# [HS, AS]") != std::string::npos);
  CHECK(body.find("# Div") != std::string::npos);
  CHECK(body.find("# Metric") != std::string::npos);
  CHECK(body.find("# Value") != std::string::npos);
  CHECK(MockGateway::classify(messages) == PromptKind::Naming);
}

TEST_CASE("extract_first_json_object finds the right balanced object") {
  auto get = [](std::string_view text, std::string_view key) {
    return extract_first_json_object(text, key);
  };
  CHECK(get(R"({"unpivot_columns": ["A"]})", "unpivot_columns") ==
        std::optional<std::string>(R"({"unpivot_columns": ["A"]})"));
  CHECK(get("```json\n{\"unpivot_columns\": []}\n```", "unpivot_columns") ==
        std::optional<std::string>("{\"unpivot_columns\": []}"));
  // Braces and quotes inside string literals must not end the scan.
  CHECK(get(R"(Sure! {"note": "brace } and \" quote", "unpivot_columns": []} ok)",
            "unpivot_columns") ==
        std::optional<std::string>(
            R"({"note": "brace } and \" quote", "unpivot_columns": []})"));
  // An earlier object without the key is skipped.
  CHECK(get(R"({"foo": 1} {"unpivot_columns": ["B"]})", "unpivot_columns") ==
        std::optional<std::string>(R"({"unpivot_columns": ["B"]})"));
  // Nested objects stay part of the match.
  CHECK(get(R"({"unpivot_columns": [], "extra": {"a": 1}})", "unpivot_columns")
            ->find("extra") != std::string::npos);
  CHECK(!get("no json at all", "unpivot_columns").has_value());
  CHECK(!get(R"({"unpivot_columns": [)", "unpivot_columns").has_value());
  CHECK(!get(R"({"other_key": []})", "unpivot_columns").has_value());
}

TEST_CASE("propose retries bad replies and keeps the raw text on failure") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  auto messages = render_init_prompt(source, target);

  SUBCASE("a parse failure consumes one attempt") {
    MockGateway gateway;
    gateway.enqueue("I cannot answer that.");
    gateway.enqueue(fixtures::proposal_reply({"HS", "AS"}));
    auto response = propose(gateway, messages);
    CHECK(response.unpivot_columns == std::vector<std::string>{"HS", "AS"});
    CHECK(response.raw == fixtures::proposal_reply({"HS", "AS"}));
    CHECK(gateway.call_count() == 2);
  }
  SUBCASE("a non-string entry is a parse failure") {
    MockGateway gateway;
    gateway.enqueue(R"({"unpivot_columns": ["A", 3]})");
    gateway.enqueue(fixtures::proposal_reply({"HS"}));
    auto response = propose(gateway, messages);
    CHECK(response.unpivot_columns == std::vector<std::string>{"HS"});
    CHECK(gateway.call_count() == 2);
  }
  SUBCASE("exhausting every attempt raises ParseError with the raw reply") {
    MockGateway gateway;
    for (int i = 0; i < 4; ++i) gateway.enqueue("garbage " + std::to_string(i));
    try {
      propose(gateway, messages);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.raw() == "garbage 3");  // 1 + max_retries attempts
    }
    CHECK(gateway.call_count() == 4);
  }
  SUBCASE("an exhausted script propagates immediately") {
    MockGateway gateway;
    CHECK_THROWS_AS(propose(gateway, messages), ScriptExhaustedError);
    CHECK(gateway.call_count() == 1);
  }
}

TEST_CASE("sanitize_proposal drops unknown and repeated names") {
  ProposerResponse response;
  response.unpivot_columns = {"HS", "Bogus", "AS", "HS"};
  std::vector<std::string> warnings;
  auto clean = sanitize_proposal(std::move(response),
                                 fixtures::football_source().attributes,
                                 &warnings);
  CHECK(clean.unpivot_columns == std::vector<std::string>{"HS", "AS"});
  REQUIRE(warnings.size() == 2);
  CHECK(warnings[0].find("dropped unknown attribute 'Bogus'") !=
        std::string::npos);
  CHECK(warnings[1].find("dropped repeated attribute 'HS'") !=
        std::string::npos);

  ProposerResponse again;
  again.unpivot_columns = {"AST", "HST"};
  auto kept = sanitize_proposal(std::move(again),
                                fixtures::football_source().attributes);
  CHECK(kept.unpivot_columns == std::vector<std::string>{"AST", "HST"});
}

TEST_CASE("name_var_value falls back and avoids collisions") {
  Table target = fixtures::football_target();

  SUBCASE("a usable reply is taken verbatim") {
    MockGateway gateway;
    gateway.enqueue(fixtures::naming_reply("Stat", "Shots"));
    auto [var, value] = name_var_value(gateway, {"HS", "AS"},
                                       fixtures::football_source(), target);
    CHECK(var == "Stat");
    CHECK(value == "Shots");
  }
  SUBCASE("an unusable reply falls back to the defaults") {
    MockGateway gateway;
    gateway.enqueue("I would call them something nice.");
    auto [var, value] = name_var_value(gateway, {"HS", "AS"},
                                       fixtures::football_source(), target);
    CHECK(var == "Metric");
    CHECK(value == "Value");
    CHECK(gateway.call_count() == 1);
  }
  SUBCASE("an empty name keeps its default") {
    MockGateway gateway;
    gateway.enqueue(R"({"var_name": "", "value_name": "Count"})");
    auto [var, value] = name_var_value(gateway, {"HS", "AS"},
                                       fixtures::football_source(), target);
    CHECK(var == "Metric");
    CHECK(value == "Count");
  }
  SUBCASE("a retained attribute forces a suffix") {
    Table source;
    source.name = "s";
    source.attributes = {"Div", "Metric", "HS", "AS"};
    MockGateway gateway;
    gateway.enqueue(fixtures::naming_reply("Metric", "Value"));
    auto [var, value] = name_var_value(gateway, {"HS", "AS"}, source, target);
    CHECK(var == "Metric_1");  // "Metric" stays retained in the source
    CHECK(value == "Value");
  }
  SUBCASE("the value name may not repeat the var name") {
    MockGateway gateway;
    gateway.enqueue(fixtures::naming_reply("X", "X"));
    auto [var, value] = name_var_value(gateway, {"HS", "AS"},
                                       fixtures::football_source(), target);
    CHECK(var == "X");
    CHECK(value == "X_1");
  }
  SUBCASE("an exhausted script propagates") {
    MockGateway gateway;
    CHECK_THROWS_AS(name_var_value(gateway, {"HS", "AS"},
                                   fixtures::football_source(), target),
                    ScriptExhaustedError);
  }
}

TEST_CASE("MockGateway serves the script, then rules, then the default") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  auto init = render_init_prompt(source, target);
  auto naming = render_naming_prompt({"HS"}, source, target);

  MockGateway gateway;
  gateway.enqueue("scripted");
  gateway.set_rule(PromptKind::Init, "init rule");
  gateway.set_default_rule("fallback");

  CHECK(gateway.complete(init) == "scripted");
  CHECK(gateway.complete(init) == "init rule");
  CHECK(gateway.complete(init) == "init rule");
  CHECK(gateway.complete(naming) == "fallback");
  CHECK(gateway.calls_of_kind(PromptKind::Init) == 3);
  CHECK(gateway.calls_of_kind(PromptKind::Naming) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Feedback) == 0);
  CHECK(gateway.call_log().at(PromptKind::Init) == 3);
  CHECK(gateway.call_count() == 4);

  MockGateway empty;
  CHECK_THROWS_AS(empty.complete(init), ScriptExhaustedError);
}

TEST_CASE("classify recognizes each conversation kind") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  CHECK(MockGateway::classify(render_init_prompt(source, target)) ==
        PromptKind::Init);
  CHECK(MockGateway::classify(render_feedback_prompt(
            source, target, {"HS"}, source.records, target.records)) ==
        PromptKind::Feedback);
  CHECK(MockGateway::classify(render_refine_prompt(
            render_init_prompt(source, target), "reply", "feedback")) ==
        PromptKind::Refine);
  CHECK(MockGateway::classify({{"user", "What time is it?"}}) ==
        PromptKind::Other);
  CHECK(MockGateway::classify({}) == PromptKind::Other);
}

TEST_CASE("HttpGateway speaks the chat wire format") {
  httplib::Server server;
  std::mutex body_mutex;
  std::string seen_body;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                {
                  std::lock_guard<std::mutex> lock(body_mutex);
                  seen_body = req.body;
                }
                const int n = ++hits;
                if (n == 1) {
                  res.status = 500;
                  res.set_content("boom", "text/plain");
                  return;
                }
                if (n == 3) {
                  res.set_content(R"({"nothing": "useful"})",
                                  "application/json");
                  return;
                }
                nlohmann::json reply;
                reply["choices"] = nlohmann::json::array();
                reply["choices"].push_back(
                    {{"message",
                      {{"content", fixtures::proposal_reply({"HS"})}}}});
                res.set_content(reply.dump(), "application/json");
              });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread serving([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  GatewayConfig config;
  config.endpoint_url =
      "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  config.model_name = "test-model";
  HttpGateway gateway(config);
  std::vector<ChatMessage> messages{{"user", "hello"}};

  CHECK_THROWS_AS(gateway.complete(messages), TransportError);  // HTTP 500
  CHECK(gateway.complete(messages) == fixtures::proposal_reply({"HS"}));
  CHECK_THROWS_AS(gateway.complete(messages), TransportError);  // bad envelope
  CHECK(gateway.call_count() == 3);

  std::string last_body;
  {
    std::lock_guard<std::mutex> lock(body_mutex);
    last_body = seen_body;
  }
  auto body = nlohmann::json::parse(last_body);
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  REQUIRE(body["messages"].is_array());
  REQUIRE(body["messages"].size() == 1);
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "hello");

  server.stop();
  serving.join();

  GatewayConfig bad;
  bad.endpoint_url = "127.0.0.1:1/no-scheme";
  HttpGateway schemeless(bad);
  CHECK_THROWS_AS(schemeless.complete(messages), TransportError);
}
