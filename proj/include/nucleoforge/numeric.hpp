#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace nucleoforge {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    CompensatedSum& operator+=(double x) {
        add(x);
        return *this;
    }
    CompensatedSum& operator+=(const CompensatedSum& o) {
        add(o.sum_);
        add(o.comp_);
        return *this;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

template <class Range>
double compensated_sum(const Range& values) {
    CompensatedSum s;
    for (const auto v : values) s.add(static_cast<double>(v));
    return s.value();
}

/// Six significant digits, as used in every report.
inline std::string format6(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    std::string s(buf);
    return s == "-0" ? "0" : s;
}

/// `v` rounded to six significant digits; non-finite values pass through.
inline double round6(double v) {
    if (!std::isfinite(v)) return v;
    return std::stod(format6(v));
}

}  // namespace nucleoforge
