#include "flatmatch/embedding.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "flatmatch/detail/hash.hpp"
#include "flatmatch/errors.hpp"

namespace flatmatch {

namespace {

constexpr char kTextStart = '\x02';
constexpr char kTextEnd = '\x03';

std::string fold_ascii(const std::string& text) {
  std::string folded;
  folded.reserve(text.size() + 2);
  folded.push_back(kTextStart);
  for (char ch : text) {
    folded.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(ch))));
  }
  folded.push_back(kTextEnd);
  return folded;
}

// Splits "scheme://host:port/path" into the client base and the path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ProviderError("embedding endpoint URL lacks a scheme: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::vector<std::vector<double>> LocalHashEmbedder::embed(
    const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> vec(kDimensions, 0.0);
    std::string folded = fold_ascii(text);
    if (folded.size() >= 3) {
      for (std::size_t i = 0; i + 3 <= folded.size(); ++i) {
        std::uint64_t h = detail::fnv1a64(std::string_view(folded).substr(i, 3));
        vec[h % kDimensions] += 1.0;
      }
    }
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& v : vec) v /= norm;
    }
    out.push_back(std::move(vec));
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config)
    : config_(std::move(config)) {}

std::vector<std::vector<double>> RemoteEmbedder::embed(
    const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  auto [base, path] = split_url(config_.endpoint_url);
  httplib::Client client(base);
  auto seconds = std::chrono::duration_cast<std::chrono::seconds>(
      config_.timeout);
  client.set_connection_timeout(seconds.count(), 0);
  client.set_read_timeout(seconds.count(), 0);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env_var.c_str());
      key != nullptr && key[0] != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  nlohmann::json body;
  body["input"] = texts;
  body["model"] = config_.model_name;

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw ProviderError("embedding request to " + config_.endpoint_url +
                        " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ProviderError("embedding endpoint returned HTTP " +
                        std::to_string(res->status));
  }

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProviderError(std::string("embedding reply is not JSON: ") + e.what());
  }
  if (!doc.contains("data") || !doc["data"].is_array() ||
      doc["data"].size() != texts.size()) {
    throw ProviderError("embedding reply lacks a data array matching the input");
  }
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& item : doc["data"]) {
    if (!item.contains("embedding") || !item["embedding"].is_array()) {
      throw ProviderError("embedding reply item lacks an embedding array");
    }
    out.push_back(item["embedding"].get<std::vector<double>>());
  }
  return out;
}

}  // namespace flatmatch
