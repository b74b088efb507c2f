#pragma once

namespace icl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace icl
