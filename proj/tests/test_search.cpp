#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "flatmatch/embedding.hpp"
#include "flatmatch/errors.hpp"
#include "flatmatch/gateway.hpp"
#include "flatmatch/matcher.hpp"
#include "flatmatch/search.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace flatmatch;

namespace {

using StringSets = std::vector<std::vector<std::string>>;

StringSets canonical(StringSets sets) {
  for (auto& s : sets) std::sort(s.begin(), s.end());
  std::sort(sets.begin(), sets.end());
  return sets;
}

std::unique_ptr<SearchNode> make_node(SearchNode* parent, double q, double r,
                                      std::size_t visits) {
  auto node = std::make_unique<SearchNode>();
  node->q_value = q;
  node->reward = r;
  node->visit_count = visits;
  node->parent = parent;
  return node;
}

// Two-attribute wide table and its fully unpivoted counterpart; small enough
// that four random expansions exhaust every subset of the attribute space.
Table tiny_wide() {
  Table t;
  t.name = "wide";
  t.attributes = {"A", "B"};
  t.records = {{Cell::integer(1), Cell::integer(2)},
               {Cell::integer(3), Cell::integer(4)}};
  return t;
}

Table tiny_long() {
  Table t;
  t.name = "long";
  t.attributes = {"k", "v"};
  t.records = {{Cell::text("A"), Cell::integer(1)},
               {Cell::text("B"), Cell::integer(2)}};
  return t;
}

}  // namespace

TEST_CASE("radius1_neighbors walks removals, additions, then swaps") {
  const std::vector<std::string> universe = {"Div", "Date", "HS", "AS"};

  SUBCASE("two-member candidate over four attributes") {
    auto got = radius1_neighbors({"HS", "AS"}, universe);
    StringSets expected = {
        {"AS"},                                       // remove HS
        {"HS"},                                       // remove AS
        {"AS", "Div", "HS"},                          // add Div
        {"AS", "Date", "HS"},                         // add Date
        {"AS", "Div"},   {"AS", "Date"},              // swap HS out
        {"Div", "HS"},   {"Date", "HS"},              // swap AS out
    };
    CHECK(got == expected);
    CHECK(canonical(got) ==
          canonical(oracles::reference_neighbors({"HS", "AS"}, universe)));
  }
  SUBCASE("empty candidate only gains members") {
    auto got = radius1_neighbors({}, universe);
    CHECK(got == StringSets{{"Div"}, {"Date"}, {"HS"}, {"AS"}});
  }
  SUBCASE("full candidate only loses members") {
    auto got = radius1_neighbors({"Div", "Date", "HS", "AS"}, universe);
    REQUIRE(got.size() == 4);
    CHECK(got[0] == std::vector<std::string>{"AS", "Date", "HS"});
    CHECK(canonical(got) ==
          canonical(oracles::reference_neighbors(universe, universe)));
  }
  SUBCASE("singleton universe") {
    CHECK(radius1_neighbors({}, {"u"}) == StringSets{{"u"}});
    CHECK(radius1_neighbors({"u"}, {"u"}) == StringSets{{}});
  }
  SUBCASE("matches the exhaustive definition on random instances") {
    std::mt19937_64 rng(4242);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = 1 + rng() % 9;
      std::vector<std::string> pool;
      for (std::size_t i = 0; i < n; ++i)
        pool.push_back("a" + std::to_string(i));
      std::vector<std::string> candidate;
      for (const auto& name : pool)
        if (rng() % 2) candidate.push_back(name);
      CHECK(canonical(radius1_neighbors(candidate, pool)) ==
            canonical(oracles::reference_neighbors(candidate, pool)));
    }
  }
}

TEST_CASE("uct_score follows the exploration formula") {
  SearchConfig cfg;  // C = 2, uct_epsilon = 1e-6
  SearchNode parent;
  parent.visit_count = 10;
  SearchNode child;
  child.q_value = 0.5;
  child.visit_count = 4;
  const double expected =
      0.5 + 2.0 * std::sqrt(std::log(10.0) / (4.0 + 1e-6));
  CHECK(uct_score(parent, child, cfg) == doctest::Approx(expected).epsilon(1e-12));

  // An unvisited child gets a near-infinite bonus and outranks any visited
  // sibling.
  SearchNode fresh;
  fresh.q_value = 0.0;
  fresh.visit_count = 0;
  SearchNode seasoned;
  seasoned.q_value = 1.0;
  seasoned.visit_count = 5;
  CHECK(uct_score(parent, fresh, cfg) > uct_score(parent, seasoned, cfg));
}

TEST_CASE("select_node descends by UCT and respects reservations") {
  SearchConfig cfg;  // max_children = 3

  SUBCASE("a root with spare capacity is selected directly") {
    SearchNode root;
    root.visit_count = 1;
    CHECK(select_node(root, cfg) == &root);
    root.children.push_back(make_node(&root, 0.9, 0.9, 1));
    CHECK(select_node(root, cfg) == &root);
  }
  SUBCASE("a full root hands over to the argmax child, earliest on ties") {
    SearchNode root;
    root.visit_count = 5;
    root.children.push_back(make_node(&root, 0.9, 0.9, 2));
    root.children.push_back(make_node(&root, 0.2, 0.2, 2));
    root.children.push_back(make_node(&root, 0.9, 0.9, 2));
    // Equal visits keep the exploration bonus constant, so the argmax is the
    // Q tie between the first and third children; earliest creation wins.
    CHECK(select_node(root, cfg) == root.children[0].get());

    // A less-visited child overtakes on the exploration term alone.
    root.children[1]->visit_count = 0;
    CHECK(select_node(root, cfg) == root.children[1].get());
  }
  SUBCASE("pending expansions count toward fullness") {
    SearchNode root;
    root.visit_count = 5;
    root.children.push_back(make_node(&root, 0.3, 0.3, 2));
    root.children.push_back(make_node(&root, 0.8, 0.8, 2));
    root.pending_expansions = 1;  // 2 children + 1 pending = full
    CHECK(select_node(root, cfg) == root.children[1].get());
  }
  SUBCASE("a tree whose capacity is fully reserved yields nothing") {
    SearchConfig tight;
    tight.max_children = 1;
    SearchNode root;
    root.visit_count = 1;
    root.pending_expansions = 1;
    CHECK(select_node(root, tight) == nullptr);

    SearchNode deeper;
    deeper.visit_count = 2;
    deeper.children.push_back(make_node(&deeper, 0.5, 0.5, 1));
    deeper.children[0]->pending_expansions = 1;
    CHECK(select_node(deeper, tight) == nullptr);
  }
}

TEST_CASE("backpropagate applies the max-average update to ancestors") {
  SUBCASE("a strong leaf lifts the chain") {
    SearchNode root;
    root.q_value = 0.4;
    root.reward = 0.4;
    root.visit_count = 2;
    root.children.push_back(make_node(&root, 0.6, 0.6, 1));
    SearchNode* mid = root.children[0].get();
    mid->children.push_back(make_node(mid, 0.7, 0.7, 0));
    SearchNode* leaf = mid->children[0].get();

    backpropagate(*leaf);

    CHECK(leaf->q_value == doctest::Approx(0.7));  // leaves keep their Q
    CHECK(leaf->visit_count == 1);
    CHECK(mid->q_value == doctest::Approx(0.65));    // (0.6 + 0.7) / 2
    CHECK(mid->visit_count == 2);
    CHECK(root.q_value == doctest::Approx(0.525));  // (0.4 + 0.65) / 2
    CHECK(root.visit_count == 3);
  }
  SUBCASE("a weak leaf cannot drag an ancestor down") {
    SearchNode root;
    root.q_value = 0.5;
    root.reward = 0.5;
    root.visit_count = 1;
    root.children.push_back(make_node(&root, 0.3, 0.3, 0));
    backpropagate(*root.children[0]);
    CHECK(root.q_value == doctest::Approx(0.5));  // max(R, child) is R
    CHECK(root.visit_count == 2);
    CHECK(root.children[0]->visit_count == 1);
  }
  SUBCASE("the best sibling dominates the update") {
    SearchNode root;
    root.q_value = 0.2;
    root.reward = 0.2;
    root.visit_count = 3;
    root.children.push_back(make_node(&root, 0.9, 0.9, 1));
    root.children.push_back(make_node(&root, 0.1, 0.1, 0));
    backpropagate(*root.children[1]);
    CHECK(root.q_value == doctest::Approx(0.55));  // (0.2 + 0.9) / 2
    CHECK(root.visit_count == 4);
    CHECK(root.children[0]->visit_count == 1);  // siblings are not visited
  }
  SUBCASE("random growth keeps Q in [0, 1] and visits equal subtree size") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SearchNode root;
    root.visit_count = 1;
    root.q_value = unit(rng);
    root.reward = root.q_value;
    std::vector<SearchNode*> nodes{&root};
    for (int op = 0; op < 400; ++op) {
      SearchNode* parent = nodes[rng() % nodes.size()];
      const double r = unit(rng);
      parent->children.push_back(make_node(parent, r, r, 0));
      SearchNode* leaf = parent->children.back().get();
      backpropagate(*leaf);
      nodes.push_back(leaf);
    }
    std::function<std::size_t(const SearchNode&)> check_subtree =
        [&](const SearchNode& node) -> std::size_t {
      CHECK(node.q_value >= 0.0);
      CHECK(node.q_value <= 1.0);
      std::size_t size = 1;
      for (const auto& child : node.children) size += check_subtree(*child);
      CHECK(node.visit_count == size);
      return size;
    };
    CHECK(check_subtree(root) == 401);
  }
}

TEST_CASE("run_search with zero iterations returns the initial proposal") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;
  SchemaMatcher matcher(embedder);
  MockGateway gateway;
  gateway.enqueue(fixtures::proposal_reply({"HS", "AS", "HST", "AST"}));
  gateway.enqueue(fixtures::naming_reply("Metric", "Value"));

  SearchConfig cfg;
  cfg.iterations = 0;
  auto result = run_search(source, target, cfg, gateway, matcher);

  CHECK(result.best.op.unpivot_set ==
        std::vector<std::string>{"AS", "AST", "HS", "HST"});
  CHECK(result.best.op.var_name == "Metric");
  CHECK(result.best.op.value_name == "Value");
  CHECK(result.stats.node_count == 1);
  CHECK(result.stats.max_depth == 0);
  CHECK(result.stats.llm_call_count == 2);  // one proposal + one naming
  CHECK(result.stats.random_expansion_count == 0);
  CHECK(!result.warning.has_value());
}

TEST_CASE("a single refinement pass expands and beats the root") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;
  SchemaMatcher matcher(embedder);
  MockGateway gateway;
  gateway.enqueue(fixtures::proposal_reply({"HS", "AS", "HST", "AST"}));
  gateway.enqueue(fixtures::naming_reply("Metric", "Value"));
  gateway.enqueue("HST and AST do not appear in the target sample; drop them.");
  gateway.enqueue(fixtures::proposal_reply({"HS", "AS"}));
  gateway.enqueue(fixtures::naming_reply("Metric", "Value"));

  SearchConfig cfg;
  cfg.epsilon_random = 0.0;
  cfg.workers = 1;
  cfg.iterations = 1;
  auto result = run_search(source, target, cfg, gateway, matcher);

  // The refined candidate's value distribution sits closer to the target
  // sample, so the child outranks the root.
  CHECK(result.best.op.unpivot_set == std::vector<std::string>{"AS", "HS"});
  CHECK(result.stats.node_count == 2);
  CHECK(result.stats.max_depth == 1);
  CHECK(result.stats.llm_call_count == 5);
  CHECK(result.stats.random_expansion_count == 0);
  CHECK(gateway.calls_of_kind(PromptKind::Init) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Feedback) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Refine) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Naming) == 2);
  CHECK(!result.warning.has_value());
}

TEST_CASE("always-random expansion deduplicates and falls back when "
          "the neighborhood is exhausted") {
  Table source = tiny_wide();
  Table target = tiny_long();
  LocalHashEmbedder embedder;
  SchemaMatcher matcher(embedder);
  MockGateway gateway;
  gateway.set_rule(PromptKind::Init, fixtures::proposal_reply({"A"}));
  gateway.set_rule(PromptKind::Naming, fixtures::naming_reply("k", "v"));
  gateway.set_rule(PromptKind::Feedback, "Both data columns can move.");
  gateway.set_rule(PromptKind::Refine, fixtures::proposal_reply({"A"}));

  SearchConfig cfg;
  cfg.epsilon_random = 1.0;
  cfg.workers = 1;
  cfg.iterations = 5;
  cfg.rng_seed = 42;
  auto result = run_search(source, target, cfg, gateway, matcher);

  // Two attributes span four subsets. The root holds {A}; three random
  // expansions exhaust its neighborhood, the fourth reaches the last unseen
  // subset, and the fifth finds no fresh neighbor anywhere and must fall
  // back to a feedback/refine exchange.
  CHECK(result.stats.random_expansion_count == 4);
  CHECK(result.stats.node_count == 6);
  CHECK(result.stats.llm_call_count == 9);  // 2 init + 4 naming + 3 fallback
  CHECK(gateway.calls_of_kind(PromptKind::Init) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Feedback) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Refine) == 1);
  CHECK(gateway.calls_of_kind(PromptKind::Naming) == 6);
  CHECK(!result.warning.has_value());

  // Unpivoting both columns reproduces the target shape exactly, so that
  // subset wins regardless of discovery order.
  CHECK(result.best.op.unpivot_set == std::vector<std::string>{"A", "B"});
  CHECK(result.best.op.var_name == "k");
  CHECK(result.best.op.value_name == "v");
  CHECK(result.best.matching.reward > 0.9);
}

TEST_CASE("a greedy five-worker run is schedule-independent in its counts") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;

  auto run_once = [&](TreeStats& stats, std::vector<std::string>& best_set) {
    SchemaMatcher matcher(embedder);
    MockGateway gateway;
    gateway.set_rule(PromptKind::Init,
                     fixtures::proposal_reply({"HS", "AS", "HST", "AST"}));
    gateway.set_rule(PromptKind::Feedback,
                     "Drop the shots-on-target columns.");
    gateway.set_rule(PromptKind::Refine, fixtures::proposal_reply({"HS", "AS"}));
    gateway.set_rule(PromptKind::Naming,
                     fixtures::naming_reply("Metric", "Value"));
    SearchConfig cfg;
    cfg.epsilon_random = 0.0;
    cfg.workers = 5;
    cfg.iterations = 2;
    auto result = run_search(source, target, cfg, gateway, matcher);
    CHECK(!result.warning.has_value());
    stats = result.stats;
    best_set = result.best.op.unpivot_set;
  };

  TreeStats first, second;
  std::vector<std::string> best_first, best_second;
  run_once(first, best_first);
  run_once(second, best_second);

  for (const TreeStats& stats : {first, second}) {
    CHECK(stats.node_count == 11);       // root + 2 rounds of 5 passes
    CHECK(stats.llm_call_count == 32);   // 2 + 10 * 3
    CHECK(stats.random_expansion_count == 0);
  }
  CHECK(best_first == std::vector<std::string>{"AS", "HS"});
  CHECK(best_second == best_first);
}

TEST_CASE("a fixed seed reproduces the whole mixed run") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;

  auto run_once = [&]() {
    SchemaMatcher matcher(embedder);
    MockGateway gateway;
    gateway.set_rule(PromptKind::Init,
                     fixtures::proposal_reply({"HS", "AS", "HST", "AST"}));
    gateway.set_rule(PromptKind::Feedback, "Keep only the shot totals.");
    gateway.set_rule(PromptKind::Refine, fixtures::proposal_reply({"HS", "AS"}));
    gateway.set_rule(PromptKind::Naming,
                     fixtures::naming_reply("Metric", "Value"));
    SearchConfig cfg;
    cfg.epsilon_random = 0.5;
    cfg.workers = 1;
    cfg.iterations = 4;
    cfg.rng_seed = 20240816;
    return run_search(source, target, cfg, gateway, matcher);
  };

  auto first = run_once();
  auto second = run_once();
  CHECK(first.best.op.unpivot_set == second.best.op.unpivot_set);
  CHECK(first.best.matching.reward == second.best.matching.reward);
  CHECK(first.stats.node_count == second.stats.node_count);
  CHECK(first.stats.llm_call_count == second.stats.llm_call_count);
  CHECK(first.stats.random_expansion_count ==
        second.stats.random_expansion_count);
}

TEST_CASE("an expansion failure stops the run early with a warning") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;
  SchemaMatcher matcher(embedder);
  MockGateway gateway;
  gateway.set_rule(PromptKind::Init,
                   fixtures::proposal_reply({"HS", "AS", "HST", "AST"}));
  gateway.set_rule(PromptKind::Naming,
                   fixtures::naming_reply("Metric", "Value"));
  // No feedback rule: the first expansion pass dies on an exhausted script.

  SearchConfig cfg;
  cfg.epsilon_random = 0.0;
  cfg.workers = 1;
  cfg.iterations = 1;
  auto result = run_search(source, target, cfg, gateway, matcher);

  REQUIRE(result.warning.has_value());
  CHECK(result.warning->find("search stopped early") != std::string::npos);
  CHECK(result.stats.node_count == 1);  // only the root survives
  CHECK(result.best.op.unpivot_set ==
        std::vector<std::string>{"AS", "AST", "HS", "HST"});
  CHECK(result.stats.llm_call_count == 3);  // init pair + the fatal call
}

TEST_CASE("run_search validates its inputs") {
  Table source = fixtures::football_source();
  Table target = fixtures::football_target();
  LocalHashEmbedder embedder;
  SchemaMatcher matcher(embedder);

  SUBCASE("an empty gateway cannot build a root") {
    MockGateway gateway;
    SearchConfig cfg;
    try {
      run_search(source, target, cfg, gateway, matcher);
      FAIL("expected SearchError");
    } catch (const SearchError& e) {
      CHECK(std::string(e.what()).find("search initialization failed") !=
            std::string::npos);
    }
  }
  SUBCASE("configuration bounds are enforced") {
    MockGateway gateway;
    auto expect_config_error = [&](SearchConfig cfg) {
      CHECK_THROWS_AS(run_search(source, target, cfg, gateway, matcher),
                      ConfigError);
    };
    SearchConfig cfg;
    cfg.workers = 0;
    expect_config_error(cfg);
    cfg = SearchConfig{};
    cfg.max_children = 0;
    expect_config_error(cfg);
    cfg = SearchConfig{};
    cfg.epsilon_random = -0.1;
    expect_config_error(cfg);
    cfg = SearchConfig{};
    cfg.epsilon_random = 1.5;
    expect_config_error(cfg);
    cfg = SearchConfig{};
    cfg.uct_constant = 0.0;
    expect_config_error(cfg);
    cfg = SearchConfig{};
    cfg.uct_epsilon = 0.0;
    expect_config_error(cfg);
  }
}
