#pragma once

#include <stdexcept>
#include <string>

namespace qflow {

enum class ErrorKind {
  InvalidOrder,
  Domain,
  Dimension,
  RankDeficient,
  InvalidRotation,
  Folding,
  DegenerateJacobian,
  DegeneratePdf,
  InversionQuality,
  Divergence,
  Input,
  Format,
};

const char* to_string(ErrorKind kind) noexcept;

/// Library-wide exception. The kind decides how the CLI maps it to an exit code:
/// input-side kinds exit with 2, numerical failures with 3.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  bool is_input_error() const noexcept {
    return kind_ == ErrorKind::Input || kind_ == ErrorKind::Format ||
           kind_ == ErrorKind::Dimension || kind_ == ErrorKind::InvalidOrder ||
           kind_ == ErrorKind::Domain;
  }

 private:
  ErrorKind kind_;
};

}  // namespace qflow
