#pragma once

#include <stdexcept>
#include <string>

namespace apa {

enum class errc {
  io_failure,
  bad_magic,
  bad_header,
  payload_size_mismatch,
  non_finite_payload,
  invalid_argument,
  geometry_mismatch,
  rank_deficient,
  singular_transform,
  degenerate_input,
  config_invalid,
};

const char* errc_name(errc code);

/// Exception carrying one of the error codes above plus a human-readable message.
class Error : public std::runtime_error {
public:
  Error(errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  errc code() const noexcept { return code_; }

private:
  errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace apa
