#pragma once

namespace otgym {

inline constexpr const char* kVersionString = "0.1.0";

}  // namespace otgym
