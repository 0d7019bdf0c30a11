#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hqc {

/// A bond argument left the admissible interval of its pair potential.
class DomainViolation : public std::runtime_error {
public:
    DomainViolation(int site, int range, double z)
        : std::runtime_error(describe(site, range, z)), site_(site), range_(range), z_(z) {}

    int site() const noexcept { return site_; }
    int range() const noexcept { return range_; }
    double argument() const noexcept { return z_; }

private:
    static std::string describe(int site, int range, double z) {
        std::ostringstream os;
        os << "bond argument z=" << z << " outside the valid domain (site " << site << ", r=" << range << ")";
        return os.str();
    }

    int site_;
    int range_;
    double z_;
};

class NoConvergence : public std::runtime_error {
public:
    NoConvergence(const std::string& what, int iterations, double last_residual)
        : std::runtime_error(what + ": no convergence after " + std::to_string(iterations) +
                             " iterations (residual " + std::to_string(last_residual) + ")"),
          iterations_(iterations), last_residual_(last_residual) {}

    int iterations() const noexcept { return iterations_; }
    double last_residual() const noexcept { return last_residual_; }

private:
    int iterations_;
    double last_residual_;
};

/// Raised when a factorization meets a non-positive or vanishing pivot.
class SingularSystem : public std::runtime_error {
public:
    SingularSystem(const std::string& what, double pivot)
        : std::runtime_error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}

    double pivot() const noexcept { return pivot_; }

private:
    double pivot_;
};

/// A stiffness or tangent failed its coercivity check; `value` is the offending
/// minimum (smallest stiffness or smallest eigenvalue).
class NonCoercive : public std::runtime_error {
public:
    NonCoercive(const std::string& what, double value)
        : std::runtime_error(what + " (min " + std::to_string(value) + ")"), value_(value) {}

    double value() const noexcept { return value_; }

private:
    double value_;
};

class NonZeroMeanRhs : public std::invalid_argument {
public:
    explicit NonZeroMeanRhs(double mean)
        : std::invalid_argument("right-hand side must have zero mean (mean " + std::to_string(mean) + ")"),
          mean_(mean) {}

    double mean() const noexcept { return mean_; }

private:
    double mean_;
};

}  // namespace hqc
