#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfpt {

enum class Errc {
  DimensionMismatch,
  NotPositiveDefinite,
  NonSymmetric,
  NonPsd,
  NonFiniteState,
  NonFiniteJacobian,
  Diverged,
  NoConvergence,
  KTooLarge,
  InsufficientData,
  TooFewSamples,
  SingleClass,
  ConfigInvalid,
  FileMissing,
  FormatError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::NonSymmetric: return "NonSymmetric";
    case Errc::NonPsd: return "NonPsd";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::NonFiniteJacobian: return "NonFiniteJacobian";
    case Errc::Diverged: return "Diverged";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::SingleClass: return "SingleClass";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::FileMissing: return "FileMissing";
    case Errc::FormatError: return "FormatError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace rfpt
