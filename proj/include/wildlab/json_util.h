#ifndef WILDLAB_JSON_UTIL_H_
#define WILDLAB_JSON_UTIL_H_

#include <set>
#include <string>

#include "json.hpp"
#include "wildlab/errors.h"

namespace wildlab {

// Fail-fast reader for config objects: missing keys keep their defaults,
// wrong types and unknown keys raise ValidationError naming the offending path.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ValidationError(context_ + ": expected a JSON object");
  }

  template <typename T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(context_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ValidationError(context_ + ": missing key '" + key + "'");
    optional(key, out);
  }

  bool has(const char* key) const { return j_.contains(key); }

  // Must be called after all keys were consumed.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ValidationError(context_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace wildlab

#endif  // WILDLAB_JSON_UTIL_H_
