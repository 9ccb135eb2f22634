#pragma once

#include <span>
#include <vector>

namespace viewdistill {

// Fractional ranks (1-based); tied values share the average of the
// ranks they occupy.
std::vector<double> average_ranks(std::span<const double> values);

// Spearman rank correlation with tie correction (Pearson correlation
// of average ranks). Returns NaN when either side has zero rank
// variance, since the correlation is undefined there.
double spearman(std::span<const double> x, std::span<const double> y);

// Pearson correlation; NaN on zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace viewdistill
