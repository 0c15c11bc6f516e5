#include "flatmatch/search.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <random>
#include <set>
#include <thread>
#include <utility>

#include <json.hpp>

#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

// One raw engine draw -> uniform double in [0,1).
double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string set_key(const std::vector<std::string>& sorted_set) {
  std::string key;
  for (const auto& name : sorted_set) {
    key += name;
    key += '\x1f';
  }
  return key;
}

std::string complete_with_retries(Gateway& gateway,
                                  const std::vector<ChatMessage>& messages) {
  const std::size_t attempts = 1 + gateway.max_retries();
  std::string last_error = "no reply";
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    try {
      return gateway.complete(messages);
    } catch (const ScriptExhaustedError&) {
      throw;
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw TransportError("gateway failed after " + std::to_string(attempts) +
                       " attempts: " + last_error);
}

std::vector<std::vector<Cell>> leading_rows(const Table& t, std::size_t k) {
  std::vector<std::vector<Cell>> rows;
  rows.reserve(std::min(k, t.records.size()));
  for (std::size_t i = 0; i < t.records.size() && i < k; ++i) {
    rows.push_back(t.records[i]);
  }
  return rows;
}

// Stand-in assistant reply for a randomly generated candidate, so refine
// prompts built on top of it read like any other conversation.
std::string synthesize_reply(const std::vector<std::string>& sorted_set,
                             const Table& source) {
  nlohmann::json doc;
  doc["unpivot_columns"] = nlohmann::json::array();
  for (const auto& attr : source.attributes) {
    if (std::binary_search(sorted_set.begin(), sorted_set.end(), attr)) {
      doc["unpivot_columns"].push_back(attr);
    }
  }
  return doc.dump();
}

void validate_config(const SearchConfig& cfg) {
  if (cfg.max_children == 0) {
    throw ConfigError("max_children must be at least 1");
  }
  if (cfg.workers == 0) throw ConfigError("workers must be at least 1");
  if (!(cfg.epsilon_random >= 0.0 && cfg.epsilon_random <= 1.0)) {
    throw ConfigError("epsilon_random must lie in [0, 1]");
  }
  if (!(cfg.uct_constant > 0.0)) {
    throw ConfigError("uct_constant must be positive");
  }
  if (!(cfg.uct_epsilon > 0.0)) {
    throw ConfigError("uct_epsilon must be positive");
  }
}

// Max reward first; among equals prefer the smaller candidate set, then the
// earlier-created node.
bool improves_on(const SearchNode& challenger, const SearchNode& incumbent) {
  double a = challenger.reward.value_or(-1.0);
  double b = incumbent.reward.value_or(-1.0);
  if (a != b) return a > b;
  if (challenger.candidate_set.size() != incumbent.candidate_set.size()) {
    return challenger.candidate_set.size() < incumbent.candidate_set.size();
  }
  return challenger.creation_index < incumbent.creation_index;
}

}  // namespace

double uct_score(const SearchNode& parent, const SearchNode& child,
                 const SearchConfig& cfg) {
  double explore =
      std::sqrt(std::log(static_cast<double>(parent.visit_count)) /
                (static_cast<double>(child.visit_count) + cfg.uct_epsilon));
  return child.q_value + cfg.uct_constant * explore;
}

SearchNode* select_node(SearchNode& root, const SearchConfig& cfg) {
  SearchNode* node = &root;
  for (;;) {
    std::size_t load = node->children.size() + node->pending_expansions;
    if (load < cfg.max_children) return node;
    if (node->children.empty()) return nullptr;  // capacity fully reserved
    SearchNode* best = node->children.front().get();
    double best_score = uct_score(*node, *best, cfg);
    for (std::size_t i = 1; i < node->children.size(); ++i) {
      double score = uct_score(*node, *node->children[i], cfg);
      if (score > best_score) {
        best = node->children[i].get();
        best_score = score;
      }
    }
    node = best;
  }
}

void backpropagate(SearchNode& leaf) {
  for (SearchNode* node = leaf.parent; node != nullptr; node = node->parent) {
    double best = node->reward.value_or(0.0);
    for (const auto& child : node->children) {
      best = std::max(best, child->q_value);
    }
    node->q_value = 0.5 * (node->q_value + best);
    assert(node->q_value >= 0.0 && node->q_value <= 1.0 + 1e-9);
  }
  for (SearchNode* node = &leaf; node != nullptr; node = node->parent) {
    ++node->visit_count;
  }
}

std::vector<std::vector<std::string>> radius1_neighbors(
    const std::vector<std::string>& candidate,
    const std::vector<std::string>& universe) {
  std::set<std::string> members(candidate.begin(), candidate.end());
  std::vector<std::string> inside, outside;  // both in universe order
  for (const auto& attr : universe) {
    (members.count(attr) ? inside : outside).push_back(attr);
  }

  std::vector<std::string> base(members.begin(), members.end());  // sorted
  std::vector<std::vector<std::string>> neighbors;
  neighbors.reserve(inside.size() + outside.size() +
                    inside.size() * outside.size());

  auto without = [&base](const std::string& member) {
    std::vector<std::string> next;
    next.reserve(base.size() - 1);
    for (const auto& name : base) {
      if (name != member) next.push_back(name);
    }
    return next;
  };
  auto insert_sorted = [](std::vector<std::string> set, const std::string& name) {
    set.insert(std::upper_bound(set.begin(), set.end(), name), name);
    return set;
  };

  for (const auto& member : inside) neighbors.push_back(without(member));
  for (const auto& extra : outside) {
    neighbors.push_back(insert_sorted(base, extra));
  }
  for (const auto& member : inside) {
    for (const auto& extra : outside) {
      neighbors.push_back(insert_sorted(without(member), extra));
    }
  }
  return neighbors;
}

SearchResult run_search(const Table& source, const Table& target,
                        const SearchConfig& cfg, Gateway& gateway,
                        Evaluator& evaluator) {
  validate_config(cfg);
  const std::size_t calls_before = gateway.call_count();

  const std::vector<ChatMessage> init_conversation =
      render_init_prompt(source, target);

  SearchNode root;
  try {
    ProposerResponse proposal = propose(gateway, init_conversation);
    proposal = sanitize_proposal(std::move(proposal), source.attributes);
    auto names =
        name_var_value(gateway, proposal.unpivot_columns, source, target);
    UnpivotOperator op = UnpivotOperator::make(proposal.unpivot_columns,
                                               names.first, names.second);
    Evaluation evaluation = evaluator.evaluate(source, target, op);
    root.candidate_set = op.unpivot_set;
    root.reward = evaluation.matching.reward;
    root.q_value = *root.reward;
    root.visit_count = 1;
    root.evaluation = std::move(evaluation);
    root.raw_reply = std::move(proposal.raw);
  } catch (const std::exception& e) {
    throw SearchError(std::string("search initialization failed: ") +
                      e.what());
  }

  const auto source_samples = leading_rows(source, cfg.feedback_sample_rows);
  const auto target_samples = leading_rows(target, cfg.feedback_sample_rows);

  std::mutex tree_mutex;
  std::condition_variable tree_cv;
  std::mt19937_64 rng(cfg.rng_seed);
  std::set<std::string> random_registry;  // sets produced by random expansion
  std::size_t next_creation_index = 1;
  std::size_t random_expansions = 0;
  std::size_t total_pending = 0;
  bool stop = false;
  std::optional<std::string> warning;

  auto run_pass = [&]() {
    SearchNode* reserved = nullptr;
    try {
      bool random_branch = false;
      std::vector<std::string> neighbor;
      {
        std::unique_lock<std::mutex> lock(tree_mutex);
        for (;;) {
          if (stop) return;
          reserved = select_node(root, cfg);
          if (reserved != nullptr) break;
          if (total_pending == 0) {
            throw SearchError("no expandable node in the search tree");
          }
          tree_cv.wait(lock);
        }
        ++reserved->pending_expansions;
        ++total_pending;
        // Branch decision and neighbor pick stay inside the lock so the
        // engine is consumed in reservation order: one raw draw for the
        // epsilon decision, one more only when a neighbor is picked.
        random_branch = unit_draw(rng) < cfg.epsilon_random;
        if (random_branch) {
          auto all = radius1_neighbors(reserved->candidate_set,
                                       source.attributes);
          std::vector<std::vector<std::string>> fresh;
          for (auto& n : all) {
            if (!random_registry.count(set_key(n))) fresh.push_back(std::move(n));
          }
          if (fresh.empty()) {
            random_branch = false;  // exhausted: fall back to the LLM branch
          } else {
            neighbor = std::move(fresh[rng() % fresh.size()]);
            random_registry.insert(set_key(neighbor));
          }
        }
      }

      // Gateway and matcher work runs outside the lock. candidate_set and
      // raw_reply never change after a node is attached, so the reserved
      // node can be read without holding it.
      std::vector<std::string> child_set;
      std::string child_raw;
      NodeProvenance provenance;
      if (random_branch) {
        provenance = NodeProvenance::RandomRadius1;
        child_set = std::move(neighbor);
        child_raw = synthesize_reply(child_set, source);
      } else {
        provenance = NodeProvenance::LlmRefined;
        auto feedback_messages =
            render_feedback_prompt(source, target, reserved->candidate_set,
                                   source_samples, target_samples);
        std::string feedback_text =
            complete_with_retries(gateway, feedback_messages);
        auto refine_messages = render_refine_prompt(
            init_conversation, reserved->raw_reply, feedback_text);
        ProposerResponse refined = propose(gateway, refine_messages);
        refined = sanitize_proposal(std::move(refined), source.attributes);
        child_set = std::move(refined.unpivot_columns);
        child_raw = std::move(refined.raw);
      }
      auto names = name_var_value(gateway, child_set, source, target);
      UnpivotOperator op =
          UnpivotOperator::make(child_set, names.first, names.second);
      Evaluation evaluation = evaluator.evaluate(source, target, op);
      double reward = evaluation.matching.reward;

      {
        std::lock_guard<std::mutex> lock(tree_mutex);
        auto child = std::make_unique<SearchNode>();
        child->candidate_set = op.unpivot_set;
        child->q_value = reward;
        child->reward = reward;
        child->parent = reserved;
        child->provenance = provenance;
        child->evaluation = std::move(evaluation);
        child->raw_reply = std::move(child_raw);
        child->creation_index = next_creation_index++;
        if (provenance == NodeProvenance::RandomRadius1) ++random_expansions;
        SearchNode* leaf = child.get();
        reserved->children.push_back(std::move(child));
        --reserved->pending_expansions;
        --total_pending;
        reserved = nullptr;
        backpropagate(*leaf);
      }
      tree_cv.notify_all();
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(tree_mutex);
      if (reserved != nullptr) {
        --reserved->pending_expansions;
        --total_pending;
      }
      stop = true;
      if (!warning) {
        warning = std::string("search stopped early: ") + e.what();
      }
      tree_cv.notify_all();
    }
  };

  for (std::size_t iteration = 0; iteration < cfg.iterations; ++iteration) {
    {
      std::lock_guard<std::mutex> lock(tree_mutex);
      if (stop) break;
    }
    if (cfg.workers == 1) {
      run_pass();  // no thread machinery in the deterministic mode
    } else {
      std::vector<std::thread> pool;
      pool.reserve(cfg.workers);
      for (std::size_t w = 0; w < cfg.workers; ++w) pool.emplace_back(run_pass);
      for (auto& worker : pool) worker.join();
    }
  }

  TreeStats stats;
  stats.llm_call_count = gateway.call_count() - calls_before;
  stats.random_expansion_count = random_expansions;
  SearchNode* best = &root;
  std::vector<std::pair<SearchNode*, std::size_t>> stack{{&root, 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    ++stats.node_count;
    stats.max_depth = std::max(stats.max_depth, depth);
    if (node->reward && improves_on(*node, *best)) best = node;
    for (auto& child : node->children) stack.push_back({child.get(), depth + 1});
  }

  return SearchResult{*best->evaluation, stats, std::move(warning)};
}

}  // namespace flatmatch
