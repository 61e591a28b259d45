// Central-difference gradient checking shared by the policy and training tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "postrl/policy.hpp"
#include "postrl/rng.hpp"

namespace gradcheck {

struct Coord {
    std::size_t block;
    std::size_t index;
};

// Up to k random coordinates per parameter block.
inline std::vector<Coord> pick_coords(const postrl::PolicyParams& p, std::size_t k,
                                      std::uint64_t seed) {
    postrl::Rng rng(seed);
    std::vector<Coord> coords;
    const auto blocks = postrl::param_blocks(p);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::size_t n = blocks[b].data->size();
        for (std::size_t j = 0; j < std::min(k, n); ++j)
            coords.push_back({b, rng.next_u64() % n});
    }
    return coords;
}

// Worst relative error between analytic and central-difference gradients over
// the chosen coordinates. The denominator floor guards finite-difference
// round-off on near-zero coordinates.
inline double max_rel_err(const postrl::PolicyParams& params, const postrl::PolicyParams& analytic,
                          const std::function<double(const postrl::PolicyParams&)>& f,
                          const std::vector<Coord>& coords, double h = 1e-5) {
    double worst = 0.0;
    postrl::PolicyParams work = params;
    auto work_blocks = postrl::param_blocks(work);
    const auto grad_blocks = postrl::param_blocks(analytic);
    for (const auto& c : coords) {
        double& w = (*work_blocks[c.block].data)[c.index];
        const double saved = w;
        w = saved + h;
        const double up = f(work);
        w = saved - h;
        const double down = f(work);
        w = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = (*grad_blocks[c.block].data)[c.index];
        const double denom = std::max({1e-3, std::fabs(fd), std::fabs(an)});
        worst = std::max(worst, std::fabs(fd - an) / denom);
    }
    return worst;
}

}  // namespace gradcheck
