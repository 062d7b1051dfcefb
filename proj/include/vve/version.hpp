#pragma once

namespace vve {

#ifdef VVE_VERSION_STRING
inline constexpr const char* kVersion = VVE_VERSION_STRING;
#else
inline constexpr const char* kVersion = "v0.1.0";
#endif

} // namespace vve
