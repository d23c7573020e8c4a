#pragma once

namespace flowsight {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kModelFormatVersion = 1;

}  // namespace flowsight
