#pragma once

namespace tabmatch {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tabmatch
