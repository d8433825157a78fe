#pragma once

namespace carnot {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace carnot
