#pragma once

namespace slowdef {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kFgrMagic = "FGR1";
inline constexpr const char* kClfMagic = "CLF1";

}  // namespace slowdef
