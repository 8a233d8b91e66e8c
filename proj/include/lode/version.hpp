#pragma once

namespace lode {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace lode
