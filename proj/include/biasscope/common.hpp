#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace biasscope {

// Error hierarchy. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration value (ratios, priors, calipers, schedules).
struct ConfigError : Error {
  using Error::Error;
};

// Input data violates a precondition (empty vocabulary, single-gender set...).
struct DataError : Error {
  using Error::Error;
};

// A pipeline stage was requested before the stage producing its inputs ran.
struct PrerequisiteError : Error {
  PrerequisiteError(std::string missing_stage, const std::string& what)
      : Error(what), stage(std::move(missing_stage)) {}
  std::string stage;
};

// Binary addressee label. Index values are used as class indices in models:
// M is the negative class (0), F the positive class (1).
enum class Gender : std::uint8_t { M = 0, F = 1 };

inline constexpr int kNumGenders = 2;

inline constexpr int index_of(Gender g) { return static_cast<int>(g); }

inline constexpr std::string_view to_string(Gender g) {
  return g == Gender::F ? "F" : "M";
}

// Parses a gender label. W is accepted as an alias for F (RtGender uses W).
inline bool parse_gender(std::string_view s, Gender& out) {
  if (s == "F" || s == "f" || s == "W" || s == "w") {
    out = Gender::F;
    return true;
  }
  if (s == "M" || s == "m") {
    out = Gender::M;
    return true;
  }
  return false;
}

}  // namespace biasscope
