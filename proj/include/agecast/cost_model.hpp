#pragma once

#include <cstdint>
#include <vector>

#include "agecast/errors.hpp"

namespace agecast {

enum class CostKind : std::uint8_t { Linear, Quadratic, CustomConvex };

// Age cost C(v) as a function of version age v, the number of content
// updates the cached copy has missed. Linear is c_a*v, Quadratic is c_a*v^2.
// CustomConvex takes an explicit table over v = 0..len-1 and continues past
// the table with the final slope; the table must be nonnegative, nondecreasing
// and discretely convex, and is rejected at construction otherwise.
class AgeCostModel {
 public:
  static AgeCostModel linear(double c_a);
  static AgeCostModel quadratic(double c_a);
  static AgeCostModel custom_convex(std::vector<double> table);

  CostKind kind() const { return kind_; }
  double coefficient() const { return c_a_; }
  const std::vector<double>& table() const { return table_; }

  // True when expected cost cannot grow with staleness (zero coefficient or a
  // constant table). Such a model never rewards waiting longer to fetch.
  bool flat() const;

  bool operator==(const AgeCostModel& other) const = default;

 private:
  AgeCostModel() = default;
  CostKind kind_ = CostKind::Linear;
  double c_a_ = 0.0;
  std::vector<double> table_;
};

// C(v) for integer version age v >= 0.
double age_cost(const AgeCostModel& model, Tau v);

// Expected age cost when the version age is Binomial(tau, p): closed forms
// for Linear (c_a*p*tau) and Quadratic (c_a*(tau*p*(1-p) + (tau*p)^2)),
// explicit summation for CustomConvex.
double avg_age_cost(const AgeCostModel& model, double p, Tau tau);

// Smallest tau >= 1 whose expected age cost reaches y. Throws DegenerateCost
// when the expectation is flat below y and no finite tau works.
Tau inverse_avg_age_cost(const AgeCostModel& model, double p, double y);

// Binomial(n, q) mass at k; exact small-n product, log-space beyond n = 50 so
// n up to a few thousand stays representable.
double binom_pmf(std::int64_t n, double q, std::int64_t k);

}  // namespace agecast
