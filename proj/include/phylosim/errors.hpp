#pragma once

#include <stdexcept>
#include <string>

namespace phylosim {

enum class ErrorCode {
  zero_mass,
  empty_state,
  assumption_violated,
  unsupported_function,
  uncertified_function,
  not_finite_degree,
  index_out_of_range,
  insufficient_arity,
  scale_mismatch,
  rate_explosion,
  lineage_disabled,
  precondition_violated,
  config_error,
  io_error,
};

// All library failures surface as Error; the CLI maps codes to exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error{what}, code_{code} {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error{code, what}; }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace phylosim
