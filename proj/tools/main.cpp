#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flatmatch/embedding.hpp"
#include "flatmatch/errors.hpp"
#include "flatmatch/gateway.hpp"
#include "flatmatch/matcher.hpp"
#include "flatmatch/metrics.hpp"
#include "flatmatch/search.hpp"
#include "flatmatch/similarity.hpp"
#include "flatmatch/table.hpp"

namespace {

using namespace flatmatch;

// Exit codes: 0 ok, 2 config, 3 IO/input data, 4 gateway, 5 internal.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitGateway = 4;
constexpr int kExitInternal = 5;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_output(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error("cannot open file for writing: " + out_path);
  out << text;
  if (!out) throw Error("failed while writing: " + out_path);
}

Table load_table_file(const std::string& csv_path,
                      const std::string& desc_path,
                      const std::string& fallback_name) {
  std::string csv_text = read_file(csv_path);
  std::optional<std::string> desc_text;
  if (!desc_path.empty()) desc_text = read_file(desc_path);
  std::string name = std::filesystem::path(csv_path).stem().string();
  if (name.empty()) name = fallback_name;
  return load_table(csv_text,
                    desc_text ? std::optional<std::string_view>(*desc_text)
                              : std::nullopt,
                    name);
}

// Mock reply file: {"script": [reply, ...], "rules": {"init": reply,
// "feedback": reply, "refine": reply, "naming": reply, "default": reply}}.
// Script entries are consumed first, in order; rules answer everything else.
std::unique_ptr<MockGateway> load_mock_gateway(const std::string& path) {
  std::string text = read_file(path);
  auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ParseError("mock reply file is not a JSON object", text);
  }
  auto gateway = std::make_unique<MockGateway>();
  if (doc.contains("script")) {
    if (!doc["script"].is_array()) {
      throw ParseError("mock \"script\" must be an array of strings", text);
    }
    for (const auto& item : doc["script"]) {
      if (!item.is_string()) {
        throw ParseError("mock \"script\" must be an array of strings", text);
      }
      gateway->enqueue(item.get<std::string>());
    }
  }
  if (doc.contains("rules")) {
    if (!doc["rules"].is_object()) {
      throw ParseError("mock \"rules\" must be an object", text);
    }
    for (const auto& [key, value] : doc["rules"].items()) {
      if (!value.is_string()) {
        throw ParseError("mock rule \"" + key + "\" must be a string", text);
      }
      if (key == "init") {
        gateway->set_rule(PromptKind::Init, value.get<std::string>());
      } else if (key == "feedback") {
        gateway->set_rule(PromptKind::Feedback, value.get<std::string>());
      } else if (key == "refine") {
        gateway->set_rule(PromptKind::Refine, value.get<std::string>());
      } else if (key == "naming") {
        gateway->set_rule(PromptKind::Naming, value.get<std::string>());
      } else if (key == "default") {
        gateway->set_default_rule(value.get<std::string>());
      } else {
        throw ParseError("unknown mock rule \"" + key + "\"", text);
      }
    }
  }
  return gateway;
}

std::string format_percent_report(const MetricsReport& report) {
  char buffer[128];
  std::snprintf(buffer, sizeof buffer,
                "{\n  \"acc_e2e\": %.2f,\n  \"acc_per_attr\": %.2f\n}\n",
                report.acc_e2e * 100.0, report.acc_per_attr * 100.0);
  return buffer;
}

// Flags shared by the commands; only the relevant subset is registered on
// each subcommand.
struct Options {
  std::string source_path;
  std::string target_path;
  std::string source_desc_path;
  std::string target_desc_path;
  std::string ground_truth_path;
  std::string result_path;
  std::string out_path;
  std::string endpoint;
  std::string model;
  std::string mock_path;
  std::string embedder = "local";
  std::string embed_endpoint;
  std::string embed_model;
  SearchConfig search;
  bool verbose = false;

  // gen extras
  std::string spread_attr;
  std::string value_attr;
  bool anonymize_keys = false;
  std::size_t synth_entities = 20;
  std::size_t synth_metrics = 4;
  std::size_t synth_keys = 2;
};

void add_search_flags(CLI::App& cmd, Options& opt) {
  cmd.add_option("--epsilon", opt.search.epsilon_random,
                 "Probability of a random radius-1 expansion")
      ->capture_default_str();
  cmd.add_option("--uct-c", opt.search.uct_constant, "UCT exploration constant")
      ->capture_default_str();
  cmd.add_option("--uct-eps", opt.search.uct_epsilon,
                 "UCT denominator epsilon")
      ->capture_default_str();
  cmd.add_option("--max-children", opt.search.max_children,
                 "Maximum children per tree node")
      ->capture_default_str();
  cmd.add_option("--iterations", opt.search.iterations,
                 "Search iterations (rounds of worker passes)")
      ->capture_default_str();
  cmd.add_option("--workers", opt.search.workers,
                 "Concurrent expansion passes per iteration")
      ->capture_default_str();
  cmd.add_option("--seed", opt.search.rng_seed, "Random seed")
      ->capture_default_str();
}

void add_gateway_flags(CLI::App& cmd, Options& opt) {
  cmd.add_option("--endpoint", opt.endpoint,
                 "Chat completion endpoint URL (e.g. "
                 "https://host/v1/chat/completions)");
  cmd.add_option("--model", opt.model, "Model name sent to the endpoint");
  cmd.add_option("--mock", opt.mock_path,
                 "JSON file of scripted replies; replaces the live endpoint");
}

void add_embedder_flags(CLI::App& cmd, Options& opt) {
  cmd.add_option("--embedder", opt.embedder,
                 "Embedding backend: remote or local")
      ->check(CLI::IsMember({"remote", "local"}))
      ->capture_default_str();
  cmd.add_option("--embed-endpoint", opt.embed_endpoint,
                 "Embeddings endpoint URL (remote embedder)");
  cmd.add_option("--embed-model", opt.embed_model,
                 "Embeddings model name (remote embedder)");
}

std::unique_ptr<EmbeddingProvider> make_embedder(const Options& opt) {
  if (opt.embedder == "local") return std::make_unique<LocalHashEmbedder>();
  if (opt.embed_endpoint.empty()) {
    throw ConfigError("--embedder remote requires --embed-endpoint");
  }
  RemoteEmbedderConfig config;
  config.endpoint_url = opt.embed_endpoint;
  config.model_name = opt.embed_model;
  return std::make_unique<RemoteEmbedder>(config);
}

std::unique_ptr<Gateway> make_gateway(const Options& opt) {
  if (!opt.mock_path.empty()) return load_mock_gateway(opt.mock_path);
  if (opt.endpoint.empty()) {
    throw ConfigError("either --mock or --endpoint is required");
  }
  GatewayConfig config;
  config.endpoint_url = opt.endpoint;
  config.model_name = opt.model;
  config.verbose = opt.verbose;
  return std::make_unique<HttpGateway>(config);
}

int cmd_match(const Options& opt) {
  Table source = load_table_file(opt.source_path, opt.source_desc_path,
                                 "source");
  Table target = load_table_file(opt.target_path, opt.target_desc_path,
                                 "target");
  auto embedder = make_embedder(opt);
  auto gateway = make_gateway(opt);
  SchemaMatcher matcher(*embedder);

  auto started = std::chrono::steady_clock::now();
  SearchResult result = run_search(source, target, opt.search, *gateway,
                                   matcher);
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  if (result.warning) std::cerr << "warning: " << *result.warning << "\n";
  if (opt.verbose) {
    std::cerr << "tree: " << result.stats.node_count << " nodes, depth "
              << result.stats.max_depth << ", "
              << result.stats.random_expansion_count
              << " random expansions\n";
  }

  nlohmann::ordered_json doc;
  doc["unpivot"] = {{"columns", result.best.op.unpivot_set},
                    {"var_name", result.best.op.var_name},
                    {"value_name", result.best.op.value_name}};
  doc["matches"] = nlohmann::ordered_json::array();
  const Matching& matching = result.best.matching;
  for (std::size_t i = 0; i < matching.sources.size(); ++i) {
    nlohmann::ordered_json entry;
    entry["source"] = matching.sources[i];
    if (matching.targets[i]) {
      entry["target"] = *matching.targets[i];
    } else {
      entry["target"] = nullptr;
    }
    entry["score"] = matching.pair_scores[i];
    doc["matches"].push_back(std::move(entry));
  }
  doc["reward"] = matching.reward;
  // Wall time breaks byte-identical reruns, so mock-backed runs report 0.
  doc["stats"] = {{"llm_calls", result.stats.llm_call_count},
                  {"nodes", result.stats.node_count},
                  {"elapsed_ms", opt.mock_path.empty()
                                     ? static_cast<std::int64_t>(elapsed.count())
                                     : 0}};
  write_output(opt.out_path, doc.dump(2) + "\n");
  return kExitOk;
}

int cmd_eval(const Options& opt) {
  Table source = load_table_file(opt.source_path, opt.source_desc_path,
                                 "source");
  Table target = load_table_file(opt.target_path, opt.target_desc_path,
                                 "target");
  GroundTruth gt = parse_ground_truth(read_file(opt.ground_truth_path));

  std::string result_text = read_file(opt.result_path);
  auto doc = nlohmann::json::parse(result_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("unpivot") ||
      !doc.contains("matches")) {
    throw ParseError("result file lacks unpivot/matches", result_text);
  }
  const auto& unpivot = doc["unpivot"];
  if (!unpivot.contains("columns") || !unpivot["columns"].is_array() ||
      !unpivot.contains("var_name") || !unpivot.contains("value_name")) {
    throw ParseError("result unpivot block is malformed", result_text);
  }
  std::vector<std::string> columns;
  for (const auto& item : unpivot["columns"]) {
    if (!item.is_string()) {
      throw ParseError("unpivot columns must be strings", result_text);
    }
    columns.push_back(item.get<std::string>());
  }
  UnpivotOperator op = UnpivotOperator::make(
      columns, unpivot["var_name"].get<std::string>(),
      unpivot["value_name"].get<std::string>());

  std::map<std::string, std::optional<std::string>> matches;
  for (const auto& entry : doc["matches"]) {
    if (!entry.is_object() || !entry.contains("source") ||
        !entry.contains("target")) {
      throw ParseError("match entries need source and target", result_text);
    }
    std::optional<std::string> matched;
    if (entry["target"].is_string()) {
      matched = entry["target"].get<std::string>();
    } else if (!entry["target"].is_null()) {
      throw ParseError("match target must be a name or null", result_text);
    }
    matches[entry["source"].get<std::string>()] = matched;
  }

  MetricsReport report = score(gt, op, matches, source, target);
  write_output(opt.out_path, format_percent_report(report));
  return kExitOk;
}

Table synthesize_tidy(std::size_t entities, std::size_t metrics,
                      std::size_t keys, std::uint64_t seed) {
  if (entities == 0 || metrics == 0 || keys == 0) {
    throw ConfigError("synthetic sizes must all be at least 1");
  }
  Table t;
  t.name = "tidy";
  t.attributes.push_back("entity");
  for (std::size_t k = 2; k <= keys; ++k) {
    t.attributes.push_back("key_" + std::to_string(k));
  }
  t.attributes.push_back("Metric");
  t.attributes.push_back("Value");
  t.descriptions["entity"] = "Synthetic entity identifier";
  t.descriptions["Metric"] = "Name of the measured quantity";
  t.descriptions["Value"] = "Measured value for the metric";

  std::mt19937_64 rng(seed);
  for (std::size_t e = 1; e <= entities; ++e) {
    for (std::size_t m = 1; m <= metrics; ++m) {
      std::vector<Cell> row;
      row.push_back(Cell::text("item_" + std::to_string(e)));
      for (std::size_t k = 2; k <= keys; ++k) {
        row.push_back(Cell::text("group_" + std::to_string(e % (k + 1))));
      }
      row.push_back(Cell::text("metric_" + std::to_string(m)));
      // Disjoint value ranges per metric keep the distributions separable.
      std::int64_t base = static_cast<std::int64_t>(m) * 1000;
      row.push_back(Cell::integer(base + static_cast<std::int64_t>(rng() % 100)));
      t.records.push_back(std::move(row));
    }
  }
  return t;
}

int cmd_gen(const Options& opt) {
  Table tidy;
  std::string spread = opt.spread_attr;
  std::string value = opt.value_attr;
  if (!opt.source_path.empty()) {
    tidy = load_table_file(opt.source_path, opt.source_desc_path, "tidy");
    if (spread.empty() || value.empty()) {
      throw ConfigError(
          "gen with an input table requires --spread-attr and --value-attr");
    }
  } else {
    tidy = synthesize_tidy(opt.synth_entities, opt.synth_metrics,
                           opt.synth_keys, opt.search.rng_seed);
    if (spread.empty()) spread = "Metric";
    if (value.empty()) value = "Value";
  }

  std::vector<std::string> key_attrs;
  for (const auto& attr : tidy.attributes) {
    if (attr != spread && attr != value) key_attrs.push_back(attr);
  }
  GeneratedInstance instance = generate_instance(tidy, key_attrs, spread,
                                                 value, opt.search.rng_seed);
  if (opt.anonymize_keys) {
    instance.source = anonymize(instance.source, key_attrs,
                                opt.search.rng_seed);
    instance.target = anonymize(instance.target, key_attrs,
                                opt.search.rng_seed);
  }
  if (opt.out_path.empty()) {
    throw ConfigError("gen requires --out (bundle directory)");
  }
  write_instance_bundle(opt.out_path, instance);
  if (opt.verbose) {
    std::cerr << "bundle written to " << opt.out_path << "\n";
  }
  return kExitOk;
}

int cmd_sim(const Options& opt) {
  Table source = load_table_file(opt.source_path, opt.source_desc_path,
                                 "source");
  Table target = load_table_file(opt.target_path, opt.target_desc_path,
                                 "target");
  auto embedder = make_embedder(opt);
  SimilarityMatrix matrix = build_matrix(source, target, *embedder);

  std::string out;
  for (const auto& attr : matrix.target_attrs) {
    out += ",";
    out += attr;
  }
  out += "\n";
  char buffer[32];
  for (std::size_t i = 0; i < matrix.source_attrs.size(); ++i) {
    out += matrix.source_attrs[i];
    for (std::size_t j = 0; j < matrix.target_attrs.size(); ++j) {
      std::snprintf(buffer, sizeof buffer, ",%.6f",
                    matrix.scores[i][j].combined);
      out += buffer;
    }
    out += "\n";
  }
  write_output(opt.out_path, out);
  return kExitOk;
}

int dispatch(int (*command)(const Options&), const Options& opt) {
  try {
    return command(opt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TransportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitGateway;
  } catch (const ProviderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitGateway;
  } catch (const ScriptExhaustedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitGateway;
  } catch (const SearchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitGateway;
  } catch (const AssignmentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {  // table/parse/IO problems with input data
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Matches a pivot table's schema to a standard table by searching for "
      "the attribute set to unpivot"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from a key=value file");

  Options opt;

  auto* match = app.add_subcommand(
      "match", "Search for the best unpivot + matching of source to target");
  match->add_option("--source", opt.source_path, "Source (pivot) table CSV")
      ->required();
  match->add_option("--target", opt.target_path, "Target (standard) table CSV")
      ->required();
  match->add_option("--source-desc", opt.source_desc_path,
                    "JSON attribute descriptions for the source");
  match->add_option("--target-desc", opt.target_desc_path,
                    "JSON attribute descriptions for the target");
  match->add_option("--out", opt.out_path,
                    "Result JSON path (stdout when omitted)");
  add_search_flags(*match, opt);
  add_gateway_flags(*match, opt);
  add_embedder_flags(*match, opt);
  match->add_flag("--verbose", opt.verbose, "Log gateway traffic and stats");

  auto* eval = app.add_subcommand(
      "eval", "Score a match result against a ground truth file");
  eval->add_option("--source", opt.source_path, "Source (pivot) table CSV")
      ->required();
  eval->add_option("--target", opt.target_path, "Target (standard) table CSV")
      ->required();
  eval->add_option("--source-desc", opt.source_desc_path,
                   "JSON attribute descriptions for the source");
  eval->add_option("--target-desc", opt.target_desc_path,
                   "JSON attribute descriptions for the target");
  eval->add_option("--ground-truth", opt.ground_truth_path,
                   "Ground truth JSON")
      ->required();
  eval->add_option("--result", opt.result_path, "Match result JSON")
      ->required();
  eval->add_option("--out", opt.out_path,
                   "Metrics JSON path (stdout when omitted)");
  eval->add_flag("--verbose", opt.verbose, "Verbose diagnostics");

  auto* gen = app.add_subcommand(
      "gen", "Generate a (source, target, ground truth) instance bundle");
  gen->add_option("--source", opt.source_path,
                  "Tidy input table CSV (synthesized when omitted)");
  gen->add_option("--source-desc", opt.source_desc_path,
                  "JSON attribute descriptions for the tidy input");
  gen->add_option("--spread-attr", opt.spread_attr,
                  "Attribute whose values become columns");
  gen->add_option("--value-attr", opt.value_attr,
                  "Attribute holding the spread values");
  gen->add_option("--out", opt.out_path, "Bundle output directory")
      ->required();
  gen->add_option("--seed", opt.search.rng_seed, "Random seed")
      ->capture_default_str();
  gen->add_flag("--anonymize", opt.anonymize_keys,
                "Replace key-attribute text values with tokens");
  gen->add_option("--synth-entities", opt.synth_entities,
                  "Synthetic mode: number of entities")
      ->capture_default_str();
  gen->add_option("--synth-metrics", opt.synth_metrics,
                  "Synthetic mode: number of metrics")
      ->capture_default_str();
  gen->add_option("--synth-keys", opt.synth_keys,
                  "Synthetic mode: number of key attributes")
      ->capture_default_str();
  gen->add_flag("--verbose", opt.verbose, "Verbose diagnostics");

  auto* sim = app.add_subcommand(
      "sim", "Write the similarity matrix between two tables as CSV");
  sim->add_option("--source", opt.source_path, "Source table CSV")->required();
  sim->add_option("--target", opt.target_path, "Target table CSV")->required();
  sim->add_option("--source-desc", opt.source_desc_path,
                  "JSON attribute descriptions for the source");
  sim->add_option("--target-desc", opt.target_desc_path,
                  "JSON attribute descriptions for the target");
  sim->add_option("--out", opt.out_path, "Matrix CSV path (stdout when omitted)");
  add_embedder_flags(*sim, opt);
  sim->add_flag("--verbose", opt.verbose, "Verbose diagnostics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (match->parsed()) return dispatch(cmd_match, opt);
  if (eval->parsed()) return dispatch(cmd_eval, opt);
  if (gen->parsed()) return dispatch(cmd_gen, opt);
  return dispatch(cmd_sim, opt);
}
