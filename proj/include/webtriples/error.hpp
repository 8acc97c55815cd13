#pragma once

#include <stdexcept>
#include <string>

namespace webtriples {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or misaligned input data (corpus files, configs, artifacts).
class DataError : public Error {
 public:
  using Error::Error;
};

class CleaningFailed : public Error {
 public:
  CleaningFailed(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

class TokenizerUnavailable : public Error {
 public:
  using Error::Error;
};

class MissingPlaceholder : public Error {
 public:
  explicit MissingPlaceholder(std::string name)
      : Error("missing placeholder: " + name), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// The rendered prompt is larger than the configured context window. The
/// request was never sent.
class ContextOverflow : public Error {
 public:
  ContextOverflow(std::size_t tokens, std::size_t limit)
      : Error("prompt of " + std::to_string(tokens) +
              " tokens exceeds context window of " + std::to_string(limit)),
        tokens_(tokens),
        limit_(limit) {}
  std::size_t tokens() const { return tokens_; }
  std::size_t limit() const { return limit_; }

 private:
  std::size_t tokens_;
  std::size_t limit_;
};

class TransportFailed : public Error {
 public:
  TransportFailed(const std::string& what, bool transient)
      : Error(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

class ReplayMiss : public Error {
 public:
  explicit ReplayMiss(const std::string& hash)
      : Error("no recorded response for request " + hash), hash_(hash) {}
  const std::string& hash() const { return hash_; }

 private:
  std::string hash_;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

class JudgeVerdictUnparseable : public Error {
 public:
  explicit JudgeVerdictUnparseable(std::string verdict)
      : Error("unparseable judge verdict: " + verdict),
        verdict_(std::move(verdict)) {}
  const std::string& verdict() const { return verdict_; }

 private:
  std::string verdict_;
};

class EmptyScript : public Error {
 public:
  EmptyScript() : Error("model returned an empty script") {}
};

class ForgeFailed : public Error {
 public:
  using Error::Error;
};

enum class SandboxErrorKind { Timeout, Crash, BadOutput };

inline const char* to_string(SandboxErrorKind kind) {
  switch (kind) {
    case SandboxErrorKind::Timeout: return "timeout";
    case SandboxErrorKind::Crash: return "crash";
    case SandboxErrorKind::BadOutput: return "bad_output";
  }
  return "unknown";
}

class SandboxError : public Error {
 public:
  SandboxError(SandboxErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  SandboxErrorKind kind() const { return kind_; }

 private:
  SandboxErrorKind kind_;
};

}  // namespace webtriples
