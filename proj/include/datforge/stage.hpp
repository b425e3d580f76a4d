#pragma once

#include <string_view>

namespace datforge {

/// Training protocols compared in the results matrix.
enum class StageKind { baseline, oracle, continual_only, dat_only, continual_plus_dat };

std::string_view stage_name(StageKind kind);
StageKind parse_stage(std::string_view name);

inline bool uses_continual(StageKind k) {
  return k == StageKind::continual_only || k == StageKind::continual_plus_dat;
}

inline bool uses_dat(StageKind k) {
  return k == StageKind::dat_only || k == StageKind::continual_plus_dat;
}

}  // namespace datforge
