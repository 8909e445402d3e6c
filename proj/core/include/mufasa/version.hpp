#pragma once

#include <string_view>

namespace mufasa {

// git-describe string captured at configure time, "unknown" outside a checkout.
std::string_view version();

}  // namespace mufasa
