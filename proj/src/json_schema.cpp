#include "ews/json_schema.hpp"

#include <regex>
#include <set>

namespace ews::schema {

using nlohmann::json;

namespace {

std::string join(const std::string& root, const std::string& key) { return root.empty() ? key : root + "." + key; }

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") {
    if (v.is_number_integer()) return true;
    if (v.is_number_float()) {
      const double d = v.get<double>();
      return std::isfinite(d) && d == std::floor(d);
    }
    return false;
  }
  return false;
}

const std::set<std::string> kTypes = {"object", "array", "string", "boolean", "null", "number", "integer"};

void run(const json& s, const json& v, const std::string& path, std::vector<FieldError>& out) {
  if (s.is_boolean()) {
    if (!s.get<bool>()) out.push_back({path, "no value is allowed here"});
    return;
  }
  const std::string where = path.empty() ? "(root)" : path;
  if (s.contains("type")) {
    std::vector<std::string> types;
    if (s["type"].is_string()) types.push_back(s["type"].get<std::string>());
    else for (const auto& t : s["type"]) types.push_back(t.get<std::string>());
    bool ok = false;
    for (const auto& t : types) ok = ok || has_type(v, t);
    if (!ok) {
      std::string want;
      for (const auto& t : types) want += (want.empty() ? "" : " or ") + t;
      out.push_back({where, "expected " + want});
      return;
    }
  }
  if (s.contains("const") && v != s["const"]) out.push_back({where, "must equal " + s["const"].dump()});
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) out.push_back({where, "must be one of " + s["enum"].dump()});
  }
  if (v.is_number()) {
    const double d = v.get<double>();
    if (s.contains("minimum") && d < s["minimum"].get<double>()) out.push_back({where, "must be >= " + s["minimum"].dump()});
    if (s.contains("maximum") && d > s["maximum"].get<double>()) out.push_back({where, "must be <= " + s["maximum"].dump()});
    if (s.contains("exclusiveMinimum") && d <= s["exclusiveMinimum"].get<double>()) {
      out.push_back({where, "must be > " + s["exclusiveMinimum"].dump()});
    }
    if (s.contains("exclusiveMaximum") && d >= s["exclusiveMaximum"].get<double>()) {
      out.push_back({where, "must be < " + s["exclusiveMaximum"].dump()});
    }
  }
  if (v.is_string()) {
    const auto& str = v.get_ref<const std::string&>();
    // Length in code points.
    std::size_t len = 0;
    for (unsigned char c : str) len += (c & 0xC0) != 0x80 ? 1 : 0;
    if (s.contains("minLength") && len < s["minLength"].get<std::size_t>()) {
      out.push_back({where, "must have at least " + s["minLength"].dump() + " characters"});
    }
    if (s.contains("maxLength") && len > s["maxLength"].get<std::size_t>()) {
      out.push_back({where, "must have at most " + s["maxLength"].dump() + " characters"});
    }
    if (s.contains("pattern")) {
      std::regex re(s["pattern"].get<std::string>(), std::regex::ECMAScript);
      if (!std::regex_search(str, re)) out.push_back({where, "must match pattern " + s["pattern"].dump()});
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
      out.push_back({where, "must have at least " + s["minItems"].dump() + " items"});
    }
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
      out.push_back({where, "must have at most " + s["maxItems"].dump() + " items"});
    }
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        run(s["items"], v[i], (path.empty() ? "" : path) + "[" + std::to_string(i) + "]", out);
      }
    }
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& r : s["required"]) {
        const auto key = r.get<std::string>();
        if (!v.contains(key)) out.push_back({join(path, key), "is required"});
      }
    }
    const json props = s.value("properties", json::object());
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (props.contains(it.key())) {
        run(props[it.key()], *it, join(path, it.key()), out);
      } else if (s.contains("additionalProperties")) {
        const auto& ap = s["additionalProperties"];
        if (ap.is_boolean() && !ap.get<bool>()) {
          out.push_back({join(path, it.key()), "is not an allowed property"});
        } else if (ap.is_object()) {
          run(ap, *it, join(path, it.key()), out);
        }
      }
    }
  }
}

const std::set<std::string> kKeywords = {
    "type",      "enum",      "const",    "properties", "required",  "additionalProperties",
    "items",     "minItems",  "maxItems", "minimum",    "maximum",   "exclusiveMinimum",
    "exclusiveMaximum", "minLength", "maxLength", "pattern", "title", "description",
    "default",   "$schema",   "format"};

void check(const json& s, const std::string& path, std::vector<FieldError>& out) {
  const std::string where = path.empty() ? "(root)" : path;
  if (s.is_boolean()) return;
  if (!s.is_object()) {
    out.push_back({where, "schema must be an object or boolean"});
    return;
  }
  for (auto it = s.begin(); it != s.end(); ++it) {
    if (!kKeywords.count(it.key())) out.push_back({join(path, it.key()), "unsupported schema keyword"});
  }
  if (s.contains("type")) {
    const auto& t = s["type"];
    auto ok = [](const json& x) { return x.is_string() && kTypes.count(x.get<std::string>()) > 0; };
    bool valid = ok(t);
    if (t.is_array()) {
      valid = !t.empty();
      for (const auto& x : t) valid = valid && ok(x);
    }
    if (!valid) out.push_back({join(path, "type"), "must be a JSON type name or a non-empty list of them"});
  }
  for (const char* k : {"minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum"}) {
    if (s.contains(k) && !s[k].is_number()) out.push_back({join(path, k), "must be a number"});
  }
  for (const char* k : {"minLength", "maxLength", "minItems", "maxItems"}) {
    if (s.contains(k) && !s[k].is_number_unsigned()) out.push_back({join(path, k), "must be a non-negative integer"});
  }
  if (s.contains("enum") && (!s["enum"].is_array() || s["enum"].empty())) {
    out.push_back({join(path, "enum"), "must be a non-empty array"});
  }
  if (s.contains("required")) {
    bool ok = s["required"].is_array();
    if (ok) for (const auto& r : s["required"]) ok = ok && r.is_string();
    if (!ok) out.push_back({join(path, "required"), "must be an array of strings"});
  }
  if (s.contains("pattern")) {
    if (!s["pattern"].is_string()) {
      out.push_back({join(path, "pattern"), "must be a string"});
    } else {
      try {
        std::regex re(s["pattern"].get<std::string>(), std::regex::ECMAScript);
      } catch (const std::regex_error&) {
        out.push_back({join(path, "pattern"), "is not a valid regular expression"});
      }
    }
  }
  if (s.contains("properties")) {
    if (!s["properties"].is_object()) {
      out.push_back({join(path, "properties"), "must be an object"});
    } else {
      for (auto it = s["properties"].begin(); it != s["properties"].end(); ++it) {
        check(*it, join(join(path, "properties"), it.key()), out);
      }
    }
  }
  if (s.contains("items")) check(s["items"], join(path, "items"), out);
  if (s.contains("additionalProperties")) check(s["additionalProperties"], join(path, "additionalProperties"), out);
}

}  // namespace

std::vector<FieldError> validate(const json& schema, const json& instance, const std::string& root) {
  std::vector<FieldError> out;
  run(schema, instance, root, out);
  return out;
}

std::vector<FieldError> check_schema(const json& schema, const std::string& root) {
  std::vector<FieldError> out;
  check(schema, root, out);
  return out;
}

}  // namespace ews::schema
