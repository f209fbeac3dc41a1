#pragma once

#include <stdexcept>
#include <string>

namespace msnet {

enum class Errc {
  invalid_config,
  invalid_argument,
  shape_mismatch,
  missing_manifest,
  corrupt_manifest,
  missing_frame,
  frame_count_mismatch,
  heterogeneous_shapes,
  dataset_too_small,
  checkpoint_corrupt,
  checkpoint_version_mismatch,
  non_finite_loss,
  io_error,
};

const char* errc_name(Errc c);

/// Library-wide exception. `code()` distinguishes error classes so the CLI
/// can map usage/config problems to exit 2 and runtime failures to exit 1.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace msnet
