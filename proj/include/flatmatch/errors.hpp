#pragma once

#include <stdexcept>
#include <string>

namespace flatmatch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural table errors.
class TableError : public Error {
 public:
  using Error::Error;
};

class DuplicateAttributeError : public TableError {
 public:
  using TableError::TableError;
};

class RaggedRowError : public TableError {
 public:
  using TableError::TableError;
};

class UnknownAttributeError : public TableError {
 public:
  using TableError::TableError;
};

class NameCollisionError : public TableError {
 public:
  using TableError::TableError;
};

class DuplicateSpreadError : public TableError {
 public:
  using TableError::TableError;
};

// Malformed input or model output that should have carried structured data.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}

  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

// HTTP-level failures talking to a model or embedding endpoint.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Embedding provider failures (bad payload, dimension mismatch, ...).
class ProviderError : public Error {
 public:
  using Error::Error;
};

// A scripted mock ran out of replies and no fallback rule was set.
class ScriptExhaustedError : public Error {
 public:
  using Error::Error;
};

class AssignmentError : public Error {
 public:
  using Error::Error;
};

class SearchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flatmatch
