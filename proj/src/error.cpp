#include "selecmix/error.hpp"

namespace selecmix {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ZeroRow: return "ZeroRow";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::InvalidQ: return "InvalidQ";
    case ErrorKind::InvalidTau: return "InvalidTau";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::EmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::EmptySubset: return "EmptySubset";
    case ErrorKind::EmptyLog: return "EmptyLog";
    case ErrorKind::EmptyCategory: return "EmptyCategory";
  }
  return "Unknown";
}

}  // namespace selecmix
