#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <variant>

namespace hqc {

/// phi(z) = k/2 (z - rest)^2
struct Harmonic {
    double k = 1.0;
    double rest = 1.0;
};

/// phi(z) = -2 (z/l)^-6 + (z/l)^-12, minimum -1 at z = l. Arguments below
/// floor * l are treated as outside the domain.
struct LennardJones {
    double l = 1.0;
    double floor = 0.3;
};

class PairPotential {
public:
    PairPotential() = default;
    PairPotential(Harmonic h) : p_(h) {}
    PairPotential(LennardJones lj) : p_(lj) {
        if (!(lj.l > 0)) throw std::invalid_argument("LennardJones: l must be positive");
    }

    bool is_harmonic() const { return std::holds_alternative<Harmonic>(p_); }
    const Harmonic* harmonic() const { return std::get_if<Harmonic>(&p_); }
    const LennardJones* lennard_jones() const { return std::get_if<LennardJones>(&p_); }

    /// Open interval (lower, +inf) of admissible bond lengths.
    double domain_lower() const {
        if (auto lj = std::get_if<LennardJones>(&p_)) return lj->floor * lj->l;
        return -std::numeric_limits<double>::infinity();
    }
    bool admissible(double z) const { return z > domain_lower() && std::isfinite(z); }

    double eval(double z) const {
        if (auto h = std::get_if<Harmonic>(&p_)) return 0.5 * h->k * (z - h->rest) * (z - h->rest);
        const auto& lj = std::get<LennardJones>(p_);
        const double s6 = std::pow(lj.l / z, 6);
        return -2.0 * s6 + s6 * s6;
    }

    double deriv(double z) const {
        if (auto h = std::get_if<Harmonic>(&p_)) return h->k * (z - h->rest);
        const auto& lj = std::get<LennardJones>(p_);
        const double s6 = std::pow(lj.l / z, 6);
        return (12.0 * s6 - 12.0 * s6 * s6) / z;
    }

    double deriv2(double z) const {
        if (auto h = std::get_if<Harmonic>(&p_)) return h->k;
        const auto& lj = std::get<LennardJones>(p_);
        const double s6 = std::pow(lj.l / z, 6);
        return (-84.0 * s6 + 156.0 * s6 * s6) / (z * z);
    }

private:
    std::variant<Harmonic, LennardJones> p_ = Harmonic{};
};

}  // namespace hqc
