#include "dspn/records.hpp"

namespace dspn {

std::optional<ActionKind> action_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kActionKindCount; ++i)
    if (kActionKindNames[i] == name) return static_cast<ActionKind>(i);
  return std::nullopt;
}

}  // namespace dspn
