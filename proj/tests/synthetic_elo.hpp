#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "afn/evalsuite.hpp"

namespace afn::testing {

// Records drawn from the Davidson model with the given true ratings.
inline std::vector<MatchRecord> synthetic_matches(const std::vector<std::pair<std::string, double>>& truth,
                                   int games_per_pair, double nu, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MatchRecord> out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t j = i + 1; j < truth.size(); ++j) {
      const double pi = std::pow(10.0, truth[i].second / 400.0);
      const double pj = std::pow(10.0, truth[j].second / 400.0);
      const double tie = nu * std::sqrt(pi * pj);
      const double z = pi + pj + tie;
      for (int g = 0; g < games_per_pair; ++g) {
        MatchRecord r;
        r.agent_a = truth[i].first;
        r.agent_b = truth[j].first;
        r.a_first = g % 2 == 0;
        const double u = rng.uniform() * z;
        const int a_result = u < pi ? 1 : u < pi + pj ? -1 : 0;
        const int first_result = r.a_first ? a_result : -a_result;
        r.outcome = first_result > 0 ? Outcome::kP1Win
                    : first_result < 0 ? Outcome::kP2Win
                                       : Outcome::kDraw;
        r.plies = 9;
        r.seed = g;
        out.push_back(r);
      }
    }
  }
  return out;
}

}  // namespace afn::testing
