#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dfr/core.hpp"

namespace dfr {

struct AttackResult {
  bool success = false;
  Image adversarial;      // quantized 8-bit output
  Field perturbation;     // pre-quantization delta in normalized units
  std::uint64_t queries_used = 0;
  std::uint64_t generations_run = 0;  // GA generations, or PGD iterations
  Score final_score;      // score of `adversarial`
  std::optional<std::string> error;  // set when the run aborted early
};

}  // namespace dfr
