#pragma once

#include <json.hpp>
#include <string>
#include <vector>

namespace ews::schema {

struct FieldError {
  std::string field;  // dotted path, e.g. "metadata.severity" or "metadata.tags[2]"
  std::string message;
};

// Validator for the subset of JSON Schema used by annotation types:
// type (string or list), enum, const, properties, required,
// additionalProperties (bool or schema), items, minItems, maxItems,
// minimum, maximum, exclusiveMinimum, exclusiveMaximum, minLength,
// maxLength, pattern, title, description, default.
std::vector<FieldError> validate(const nlohmann::json& schema, const nlohmann::json& instance,
                                 const std::string& root = "");

// Checks that a schema only uses supported keywords with well-typed values.
std::vector<FieldError> check_schema(const nlohmann::json& schema, const std::string& root = "");

}  // namespace ews::schema
