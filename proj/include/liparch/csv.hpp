#pragma once

#include <string>
#include <vector>

namespace liparch {

// %.17g-equivalent, locale-free ('.' decimal point always).
std::string format_double(double v);

std::string csv_line(const std::vector<std::string>& cells);

}  // namespace liparch
