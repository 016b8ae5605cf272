#pragma once

#include <json.hpp>
#include <string>

namespace liparch {

// Insertion-ordered everywhere so that serialized artifacts are byte-stable.
using json = nlohmann::ordered_json;

std::string read_text_file(const std::string& path);  // IoError

// Writes to <path>.tmp in the same directory, then renames. The environment
// hook LIPARCH_FAULT_BEFORE_RENAME aborts the process between the two steps;
// a crashed writer must never leave a half-written file at the final path.
void write_text_atomic(const std::string& path, const std::string& content);

json parse_json_text(const std::string& text, const std::string& where);  // ValidationError
json parse_json_file(const std::string& path);

void write_json_atomic(const std::string& path, const json& j);

// Strict-schema helper: every key of obj must appear in allowed.
void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace liparch
