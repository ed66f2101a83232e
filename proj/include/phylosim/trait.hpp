#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "phylosim/errors.hpp"

namespace phylosim {

// Mark space: either the real line or a finite label set {0,...,size-1}.
struct TraitSpace {
  enum class Kind { real, finite };
  Kind kind = Kind::real;
  int size = 0;  // finite only

  bool is_real() const { return kind == Kind::real; }
};

class Trait {
 public:
  Trait() : real_{true}, value_{0.0}, index_{0} {}
  static Trait real(double value) {
    Trait t;
    t.real_ = true;
    t.value_ = value;
    return t;
  }
  static Trait finite(int index) {
    Trait t;
    t.real_ = false;
    t.index_ = index;
    return t;
  }

  bool is_real() const { return real_; }
  double value() const {
    require(real_, ErrorCode::precondition_violated, "trait: real value requested from finite trait");
    return value_;
  }
  int index() const {
    require(!real_, ErrorCode::precondition_violated, "trait: finite index requested from real trait");
    return index_;
  }

  bool operator==(const Trait& o) const {
    if (real_ != o.real_) return false;
    return real_ ? value_ == o.value_ : index_ == o.index_;
  }

  void check_in(const TraitSpace& space) const {
    if (space.is_real()) {
      require(real_, ErrorCode::config_error, "trait: expected a real trait");
    } else {
      require(!real_, ErrorCode::config_error, "trait: expected a finite trait");
      require(index_ >= 0 && index_ < space.size, ErrorCode::index_out_of_range,
              "trait: finite index " + std::to_string(index_) + " outside label set of size " +
                  std::to_string(space.size));
    }
  }

 private:
  bool real_;
  double value_ = 0.0;
  int index_ = 0;
};

inline nlohmann::json trait_to_json(const Trait& t) {
  nlohmann::json j;
  if (t.is_real())
    j["real"] = t.value();
  else
    j["finite"] = t.index();
  return j;
}

inline Trait trait_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.size() == 1, ErrorCode::config_error, "trait: expected {\"real\": x} or {\"finite\": i}");
  if (j.contains("real")) return Trait::real(j.at("real").get<double>());
  if (j.contains("finite")) return Trait::finite(j.at("finite").get<int>());
  fail(ErrorCode::config_error, "trait: unknown key in trait object");
}

}  // namespace phylosim
