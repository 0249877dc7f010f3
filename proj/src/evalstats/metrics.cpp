#include "progress/evalstats/metrics.hpp"

#include <cmath>
#include <limits>

#include "progress/core/errors.hpp"

namespace progress::evalstats {

MetricReport MetricReport::undefined(std::string metric, long n, std::string stratum) {
    MetricReport r;
    r.metric = std::move(metric);
    r.value = std::numeric_limits<double>::quiet_NaN();
    r.n = n;
    r.stratum = std::move(stratum);
    r.defined = false;
    return r;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    j = {{"metric", r.metric}, {"n", r.n}, {"stratum", r.stratum}, {"defined", r.defined}};
    j["value"] = r.defined && std::isfinite(r.value) ? nlohmann::json(r.value) : nlohmann::json(nullptr);
    if (r.ci) j["ci"] = {r.ci->first, r.ci->second};
}

IntervalScore picp_mpiw(ConstVec lo, ConstVec hi, ConstVec truth) {
    if (lo.size() != hi.size() || lo.size() != truth.size()) throw ShapeError("picp_mpiw: input lengths differ");
    if (lo.size() == 0) throw UndefinedMetricError("picp_mpiw: no intervals");
    if ((hi.array() < lo.array()).any()) throw DataError("picp_mpiw: interval with hi < lo");
    const auto inside = (truth.array() >= lo.array() && truth.array() <= hi.array()).cast<double>();
    return {inside.mean(), (hi - lo).mean()};
}

RegressionScore regression_metrics(ConstVec pred, ConstVec truth) {
    if (pred.size() != truth.size()) throw ShapeError("regression_metrics: input lengths differ");
    if (pred.size() < 2) throw UndefinedMetricError("regression_metrics: need at least two samples");
    const double tm = truth.mean();
    const double sst = (truth.array() - tm).square().sum();
    if (!(sst > 0)) throw UndefinedMetricError("regression_metrics: truth has zero variance");
    const double sse = (pred - truth).squaredNorm();
    RegressionScore s;
    s.r2 = 1.0 - sse / sst;
    s.rmse = std::sqrt(sse / double(pred.size()));
    const auto pc = pred.array() - pred.mean();
    const double spp = pc.square().sum();
    s.pearson = spp > 0 ? (pc * (truth.array() - tm)).sum() / std::sqrt(spp * sst)
                        : std::numeric_limits<double>::quiet_NaN();
    return s;
}

}  // namespace progress::evalstats
