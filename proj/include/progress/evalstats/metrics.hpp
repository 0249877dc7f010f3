#pragma once

#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "progress/evalstats/survival.hpp"

namespace progress::evalstats {

struct MetricReport {
    std::string metric;
    double value = 0;
    long n = 0;
    std::optional<std::pair<double, double>> ci;
    std::string stratum;
    bool defined = true;  // false when the metric has no value for this stratum

    /// Builds an undefined report (value NaN) for strata without e.g. events.
    static MetricReport undefined(std::string metric, long n, std::string stratum = {});
};

void to_json(nlohmann::json& j, const MetricReport& r);

struct IntervalScore {
    double picp = 0;
    double mpiw = 0;
};

/// Fraction of truths inside [lo, hi] (inclusive) and mean width.
IntervalScore picp_mpiw(ConstVec lo, ConstVec hi, ConstVec truth);

struct RegressionScore {
    double r2 = 0;
    double rmse = 0;
    double pearson = 0;  // NaN when predictions are constant
};

/// R^2 = 1 - SSE/SST (may be negative). Zero truth variance raises UndefinedMetricError.
RegressionScore regression_metrics(ConstVec pred, ConstVec truth);

}  // namespace progress::evalstats
