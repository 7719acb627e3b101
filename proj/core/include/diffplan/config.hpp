#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

namespace diffplan {

// Flat dotted-key configuration. Files are JSON; both flat keys
// ("diffusion.K": 100) and nested objects are accepted, nested objects are
// flattened on load. CLI --set overrides win over file keys, file keys win
// over defaults. Schema in docs/formats.md.
class Config {
 public:
  using Value = std::variant<double, bool, std::string>;

  Config();  // defaults

  static Config from_file(const std::string& path);
  void load_file(const std::string& path);

  // value is parsed as JSON when possible, else taken as a string.
  void set(const std::string& key, const std::string& value);

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  bool has(const std::string& key) const;

  // Throws ConfigError naming the offending key.
  void validate() const;

  const std::map<std::string, Value>& entries() const { return values_; }

 private:
  void set_value(const std::string& key, Value v);
  std::map<std::string, Value> values_;
};

}  // namespace diffplan
