#pragma once

#include <stdexcept>
#include <string>

namespace efm {

/// Base of every error raised by the library. `kind()` is a stable tag used in
/// JSON diagnostics and CLI messages.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define EFM_DEFINE_ERROR(Name)                                                 \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {}             \
  }

EFM_DEFINE_ERROR(DimensionError);
EFM_DEFINE_ERROR(DomainError);
EFM_DEFINE_ERROR(DataError);
EFM_DEFINE_ERROR(NumericError);
EFM_DEFINE_ERROR(BoundsError);
EFM_DEFINE_ERROR(ConstructionError);
EFM_DEFINE_ERROR(InfeasibleMagnifier);
EFM_DEFINE_ERROR(DivergentMoment);
EFM_DEFINE_ERROR(NoBracketedRoot);
EFM_DEFINE_ERROR(IterationDiverged);
EFM_DEFINE_ERROR(NoOutlierPredicted);
EFM_DEFINE_ERROR(AssumptionViolation);
EFM_DEFINE_ERROR(ParseError);
EFM_DEFINE_ERROR(ConfigError);
EFM_DEFINE_ERROR(MissingArtifact);

#undef EFM_DEFINE_ERROR

} // namespace efm
