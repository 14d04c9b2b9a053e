#pragma once

#include <string_view>

namespace xfe {

// `git describe` of the source tree at configure time, or "unknown".
std::string_view version();

}  // namespace xfe
