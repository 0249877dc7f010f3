#include "progress/dataio/records.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "progress/core/errors.hpp"

namespace progress::dataio {

namespace {
std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return s;
}
}  // namespace

std::string to_string(AssayMethod m) {
    switch (m) {
        case AssayMethod::Elisa: return "ELISA";
        case AssayMethod::Luminex: return "Luminex";
        case AssayMethod::Other: return "Other";
    }
    return "Other";
}

std::string to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::Normal: return "normal";
        case Diagnosis::Mci: return "MCI";
        case Diagnosis::Dementia: return "dementia";
    }
    return "MCI";
}

std::string to_string(Sex s) { return s == Sex::Male ? "male" : "female"; }

AssayMethod assay_from_string(const std::string& s) {
    const auto v = lower(s);
    if (v == "elisa" || v == "1") return AssayMethod::Elisa;
    if (v == "luminex" || v == "2") return AssayMethod::Luminex;
    if (v == "other" || v == "8") return AssayMethod::Other;
    throw DataError("unknown assay method '" + s + "'");
}

Diagnosis diagnosis_from_string(const std::string& s) {
    const auto v = lower(s);
    if (v == "normal") return Diagnosis::Normal;
    if (v == "mci") return Diagnosis::Mci;
    if (v == "dementia") return Diagnosis::Dementia;
    throw DataError("unknown diagnosis '" + s + "'");
}

Sex sex_from_string(const std::string& s) {
    const auto v = lower(s);
    if (v == "1" || v == "m" || v == "male") return Sex::Male;
    if (v == "2" || v == "f" || v == "female") return Sex::Female;
    throw DataError("unknown sex code '" + s + "'");
}

Date make_date(int year, int month, int day) {
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{unsigned(month)},
                             std::chrono::day{unsigned(day)}};
    if (!ymd.ok()) throw DataError("invalid date");
    return sys_days{ymd};
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
    return buf;
}

long days_between(Date a, Date b) { return long((b - a).count()); }

void to_json(nlohmann::json& j, const ParticipantRecord& r) {
    auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
    nlohmann::json visits = nlohmann::json::array();
    for (const auto& v : r.visits) {
        visits.push_back({{"t", v.years},
                          {"cdrsb", opt(v.cdrsb)},
                          {"mmse", opt(v.mmse)},
                          {"mmse_change", opt(v.mmse_change)},
                          {"diagnosis", to_string(v.diagnosis)}});
    }
    j = nlohmann::json{{"subject_id", r.subject_id},
                       {"center", r.center},
                       {"age", r.age},
                       {"sex", to_string(r.sex)},
                       {"education", r.education},
                       {"csf",
                        {{"abeta42", opt(r.csf.abeta42)},
                         {"ptau", opt(r.csf.ptau)},
                         {"ttau", opt(r.csf.ttau)},
                         {"abeta40", opt(r.csf.abeta40)},
                         {"abeta42_method", to_string(r.csf.abeta42_method)},
                         {"ptau_method", to_string(r.csf.ptau_method)},
                         {"ttau_method", to_string(r.csf.ttau_method)},
                         {"days_from_baseline_visit", r.csf.days_from_baseline_visit}}},
                       {"baseline_diagnosis", to_string(r.baseline_diagnosis)},
                       {"visits", visits},
                       {"event_time", r.event_time},
                       {"event", r.event ? 1 : 0},
                       {"progressed", r.progressed}};
}

void from_json(const nlohmann::json& j, ParticipantRecord& r) {
    auto opt_d = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); };
    auto opt_i = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()); };
    r.subject_id = j.at("subject_id").get<std::string>();
    r.center = j.at("center").get<std::string>();
    r.age = j.at("age").get<double>();
    r.sex = sex_from_string(j.at("sex").get<std::string>());
    r.education = j.at("education").get<double>();
    const auto& c = j.at("csf");
    r.csf.abeta42 = opt_d(c.at("abeta42"));
    r.csf.ptau = opt_d(c.at("ptau"));
    r.csf.ttau = opt_d(c.at("ttau"));
    r.csf.abeta40 = c.contains("abeta40") ? opt_d(c.at("abeta40")) : std::nullopt;
    r.csf.abeta42_method = assay_from_string(c.at("abeta42_method").get<std::string>());
    r.csf.ptau_method = assay_from_string(c.at("ptau_method").get<std::string>());
    r.csf.ttau_method = assay_from_string(c.at("ttau_method").get<std::string>());
    r.csf.days_from_baseline_visit = c.value("days_from_baseline_visit", 0L);
    r.baseline_diagnosis = diagnosis_from_string(j.at("baseline_diagnosis").get<std::string>());
    r.visits.clear();
    for (const auto& v : j.at("visits")) {
        Visit visit;
        visit.years = v.at("t").get<double>();
        visit.cdrsb = opt_d(v.at("cdrsb"));
        visit.mmse = opt_i(v.at("mmse"));
        visit.mmse_change = opt_i(v.at("mmse_change"));
        visit.diagnosis = diagnosis_from_string(v.at("diagnosis").get<std::string>());
        r.visits.push_back(visit);
    }
    r.event_time = j.at("event_time").get<double>();
    r.event = j.at("event").get<int>() != 0;
    r.progressed = j.value("progressed", false);
}

}  // namespace progress::dataio
