#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>
#include <string_view>

namespace proxex {

// One code per failure contract exposed by the library. Callers branch on the
// code; the message carries context (paths, keys, counts).
enum class Errc {
  empty_input,
  mask_shape,
  insufficient_budget,
  infinite_weight,
  size_limit,
  singular_system,
  insufficient_samples,
  transport,
  protocol,
  auth,
  cache,
  replay_miss,
  missing_price,
  config,
  unparseable_output,
  scorer_unavailable,
  no_samples,
  incomplete_input,
  no_examples,
  undefined_ratio,
  conflict,
  import_error,
  invalid_argument,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::empty_input: return "EmptyInput";
    case Errc::mask_shape: return "MaskShapeError";
    case Errc::insufficient_budget: return "InsufficientBudget";
    case Errc::infinite_weight: return "InfiniteWeight";
    case Errc::size_limit: return "SizeLimit";
    case Errc::singular_system: return "SingularSystem";
    case Errc::insufficient_samples: return "InsufficientSamples";
    case Errc::transport: return "TransportError";
    case Errc::protocol: return "ProtocolError";
    case Errc::auth: return "AuthError";
    case Errc::cache: return "CacheError";
    case Errc::replay_miss: return "ReplayMiss";
    case Errc::missing_price: return "MissingPrice";
    case Errc::config: return "ConfigError";
    case Errc::unparseable_output: return "UnparseableOutput";
    case Errc::scorer_unavailable: return "ScorerUnavailable";
    case Errc::no_samples: return "NoSamples";
    case Errc::incomplete_input: return "IncompleteInput";
    case Errc::no_examples: return "NoExamples";
    case Errc::undefined_ratio: return "UndefinedRatio";
    case Errc::conflict: return "ConflictError";
    case Errc::import_error: return "ImportError";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace proxex
