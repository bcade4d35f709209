#pragma once

namespace evod {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace evod
