#pragma once

// Random structured-but-messy program source for property tests: arbitrary
// branch topology (cycles, unreachable blocks), SSA defs with mixed value and
// constant operands. Instruction counts stay small enough for the exponential
// oracles in oracles.hpp.

#include <string>
#include <vector>

#include "progsg/rng.hpp"

namespace support {

inline std::string gen_random_program(progsg::Rng& rng, int max_blocks = 4,
                                      int instr_budget = 12) {
  int n_blocks = static_cast<int>(rng.range(1, max_blocks));
  int n_params = static_cast<int>(rng.range(1, 2));

  std::vector<std::string> values;
  for (int i = 0; i < n_params; ++i) values.push_back("%p" + std::to_string(i));
  int next_def = 0;

  auto pick_operand = [&]() -> std::string {
    if (!values.empty() && rng.chance(0.6)) return values[rng.below(values.size())];
    const char* consts[] = {"0", "1", "2", "64"};
    return consts[rng.below(4)];
  };

  std::string src = "func f(";
  for (int i = 0; i < n_params; ++i) {
    if (i) src += ", ";
    src += "%p" + std::to_string(i) + ": i32";
  }
  src += ") {\n";

  int budget = instr_budget - n_blocks;  // one terminator per block
  for (int b = 0; b < n_blocks; ++b) {
    src += "b" + std::to_string(b) + ":\n";
    int room = budget / (n_blocks - b);
    int n_arith = room > 0 ? static_cast<int>(rng.range(0, room)) : 0;
    budget -= n_arith;
    for (int k = 0; k < n_arith; ++k) {
      std::string def = "%v" + std::to_string(next_def++);
      double roll = rng.uniform();
      if (roll < 0.15) {
        src += "  " + def + " = load " + pick_operand() + "\n";
      } else if (roll < 0.25) {
        src += "  " + def + " = phi " + pick_operand() + ", " + pick_operand() + "\n";
      } else if (roll < 0.35) {
        src += "  store " + pick_operand() + ", %p0\n";
        --next_def;  // store defines nothing; reuse the name
        continue;
      } else {
        const char* ops[] = {"add", "sub", "mul", "cmp"};
        src += "  " + def + " = " + ops[rng.below(4)] + " " + pick_operand() + ", " +
               pick_operand() + "\n";
      }
      values.push_back(def);
    }
    if (b + 1 == n_blocks) {
      src += rng.chance(0.5) && !values.empty()
                 ? "  ret " + values[rng.below(values.size())] + "\n"
                 : "  ret\n";
    } else if (rng.chance(0.5)) {
      src += "  br b" + std::to_string(rng.below(static_cast<uint64_t>(n_blocks))) + "\n";
    } else {
      src += "  condbr " + pick_operand() + ", b" +
             std::to_string(rng.below(static_cast<uint64_t>(n_blocks))) + ", b" +
             std::to_string(rng.below(static_cast<uint64_t>(n_blocks))) + "\n";
    }
  }
  src += "}\n";
  return src;
}

}  // namespace support
