#include "xfe/version.hpp"

namespace xfe {

std::string_view version() { return XFE_VERSION; }

}  // namespace xfe
