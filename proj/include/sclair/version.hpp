#pragma once

namespace sclair {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sclair
