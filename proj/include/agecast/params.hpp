#pragma once

#include <vector>

#include "agecast/cost_model.hpp"

namespace agecast {

// Full description of one fetching problem: a single content source that
// updates with probability p each slot, N users who request independently
// with probabilities q_i, a broadcast fetch priced at C_f, and a per-user
// age cost model charged to requesters served stale content.
struct SystemParams {
  int num_users = 0;
  double update_prob = 0.0;
  std::vector<double> request_probs;
  double fetch_cost = 0.0;
  std::vector<AgeCostModel> cost_models;

  // All users share one request probability and one cost model.
  static SystemParams uniform(int num_users, double update_prob,
                              double request_prob, double fetch_cost,
                              const AgeCostModel& model);

  bool homogeneous() const;

  // Throws ConfigError naming the offending field. Request probabilities of
  // zero and a zero fetch cost are accepted; solvers special-case them.
  void validate() const;
};

}  // namespace agecast
