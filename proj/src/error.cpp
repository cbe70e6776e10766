#include "qflow/error.hpp"

namespace qflow {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidOrder: return "invalid-order";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::RankDeficient: return "rank-deficient";
    case ErrorKind::InvalidRotation: return "invalid-rotation";
    case ErrorKind::Folding: return "folding";
    case ErrorKind::DegenerateJacobian: return "degenerate-jacobian";
    case ErrorKind::DegeneratePdf: return "degenerate-pdf";
    case ErrorKind::InversionQuality: return "inversion-quality";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Input: return "input";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

}  // namespace qflow
