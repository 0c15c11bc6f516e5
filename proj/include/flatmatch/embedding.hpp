#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

namespace flatmatch {

// Produces one vector per input text, order-preserving. Implementations must
// be deterministic for a fixed input and safe to call from multiple threads.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) = 0;
};

// Deterministic offline fallback: character-trigram feature hashing into a
// fixed-width L2-normalized vector. No network, no model weights.
class LocalHashEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDimensions = 256;

  std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) override;
};

struct RemoteEmbedderConfig {
  std::string endpoint_url;  // e.g. https://host:port/v1/embeddings
  std::string model_name;
  std::string api_key_env_var = "FLATMATCH_API_KEY";
  std::chrono::milliseconds timeout{30000};
};

// Calls an embedding endpoint speaking the common JSON wire format:
// POST {"input": [texts...], "model": "..."} ->
// {"data": [{"embedding": [floats...]}, ...]} with data in input order.
// Throws ProviderError on transport failure or a malformed reply.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig config);

  std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) override;

 private:
  RemoteEmbedderConfig config_;
};

}  // namespace flatmatch
