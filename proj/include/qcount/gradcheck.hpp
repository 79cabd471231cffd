#pragma once

#include "qcount/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace qcount {

struct GradcheckOptions {
    double step = 1e-4;
    double tolerance = 1e-4;
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    double floor = 1e-6;
    int uniform_coords = 32;   // per group, drawn uniformly
    int nonzero_coords = 32;   // per group, drawn among nonzero gradients
    bool kink_guard = true;
    int scene_count = 6;
    std::uint64_t seed = 0;
};

struct CoordinateCheck {
    std::string parameter;
    long index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
    bool crosses_kink = false;
};

struct GroupReport {
    std::string group;
    int checked = 0;
    int skipped_kinks = 0;                 // guard on: excluded from the max
    std::vector<CoordinateCheck> flagged;  // guard off: kink crossings above tolerance
    double max_rel_error = 0;
    CoordinateCheck worst;
    bool pass = true;
};

struct GradcheckReport {
    std::vector<GroupReport> groups;
    double seconds = 0;
    bool pass = true;

    nlohmann::json to_json() const;
};

/// Fourth-order central differences of the full training objective against the
/// analytic gradient, in double precision, for every trainable group.
/// relative error = |a - n| / max(|a|, |n|, floor).
GradcheckReport gradcheck(const TrainConfig& cfg, const GradcheckOptions& opt = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace qcount
