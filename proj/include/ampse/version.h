#pragma once

namespace ampse {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ampse
