#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dsn {

/// Ordered key/value run metadata, written as "# key=value" header lines.
using Metadata = std::vector<std::pair<std::string, std::string>>;

}  // namespace dsn
