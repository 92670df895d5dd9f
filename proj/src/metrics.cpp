#include "gms/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace gms {

namespace {

// Median of v[lo, hi): the middle element, or the mean of the middle pair.
double median_of(const std::vector<double>& v, size_t lo, size_t hi) {
    size_t n = hi - lo;
    size_t mid = lo + n / 2;
    if (n % 2 == 1) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

Aggregate aggregate(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("aggregate: no values");
    std::sort(values.begin(), values.end());

    Aggregate out;
    out.count = static_cast<long>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    out.median = median_of(values, 0, values.size());

    // Quartiles as medians of the halves, excluding the middle element when
    // the count is odd (Tukey hinges would include it; excluding keeps the
    // quartiles strictly inside the data for n >= 4).
    size_t n = values.size();
    size_t half = n / 2;
    if (n == 1) {
        out.q25 = out.q75 = values[0];
    } else {
        out.q25 = median_of(values, 0, half);
        out.q75 = median_of(values, n % 2 == 1 ? half + 1 : half, n);
    }
    return out;
}

}  // namespace gms
