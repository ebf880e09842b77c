#pragma once

namespace adiaplan {

inline constexpr const char *tool_name = "adiaplan";
inline constexpr const char *tool_version = "0.1.0";

} // namespace adiaplan
