#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace progress::dataio {

using Date = std::chrono::sys_days;

inline constexpr double kDaysPerYear = 365.25;

enum class AssayMethod { Elisa, Luminex, Other };
enum class Diagnosis { Normal, Mci, Dementia };
enum class Sex { Male, Female };

std::string to_string(AssayMethod m);
std::string to_string(Diagnosis d);
std::string to_string(Sex s);
AssayMethod assay_from_string(const std::string& s);
Diagnosis diagnosis_from_string(const std::string& s);
Sex sex_from_string(const std::string& s);

/// Proleptic Gregorian date from parts; throws DataError on an impossible calendar date.
Date make_date(int year, int month, int day);
std::string format_date(Date d);
/// Signed day difference b - a.
long days_between(Date a, Date b);

/// One CSF draw as it appears in the NACC-style CSF file.
struct RawCsfRow {
    std::string subject_id;
    std::optional<double> abeta42;
    std::optional<double> ptau;
    std::optional<double> ttau;
    std::optional<double> abeta40;  // only present when the file carries CSFAB40
    AssayMethod abeta42_method = AssayMethod::Elisa;
    AssayMethod ptau_method = AssayMethod::Elisa;
    AssayMethod ttau_method = AssayMethod::Elisa;
    Date collection_date{};

    bool has_any_biomarker() const { return abeta42 || ptau || ttau; }
};

struct VisitRow {
    std::string subject_id;
    int visit_number = 0;
    Date date{};
    std::optional<int> mmse;
    std::optional<double> cdrsb;
    std::optional<Diagnosis> diagnosis;
};

struct DemographicsRow {
    std::string subject_id;
    std::optional<Sex> sex;
    std::optional<int> birth_year;
    std::optional<double> education;
    std::optional<std::string> center;

    bool complete() const { return sex && birth_year && education && center; }
};

struct RejectedRow {
    std::string file;
    long line = 0;
    std::string subject_id;
    std::string reason;
};

struct ParsedDataset {
    std::vector<RawCsfRow> csf;
    std::vector<VisitRow> visits;
    std::vector<DemographicsRow> demographics;
    std::vector<RejectedRow> rejects;
};

/// A clinical visit expressed relative to the subject's baseline.
struct Visit {
    double years = 0;  // t_ij, years from baseline
    std::optional<double> cdrsb;
    std::optional<int> mmse;
    std::optional<int> mmse_change;  // relative to the baseline visit
    Diagnosis diagnosis = Diagnosis::Mci;
};

/// Baseline CSF draw carried through integration, in raw units (pg/mL).
struct CsfMeasurement {
    std::optional<double> abeta42;
    std::optional<double> ptau;
    std::optional<double> ttau;
    std::optional<double> abeta40;
    AssayMethod abeta42_method = AssayMethod::Elisa;
    AssayMethod ptau_method = AssayMethod::Elisa;
    AssayMethod ttau_method = AssayMethod::Elisa;
    long days_from_baseline_visit = 0;
};

struct ParticipantRecord {
    std::string subject_id;
    std::string center;
    double age = 0;  // years at baseline
    Sex sex = Sex::Female;
    double education = 0;
    CsfMeasurement csf;
    Diagnosis baseline_diagnosis = Diagnosis::Mci;
    std::vector<Visit> visits;  // sorted, visits.front().years == 0
    double event_time = 0;      // T_i, years
    bool event = false;         // delta_i
    bool progressed = false;    // CDR-SB at last visit above baseline

    std::optional<double> baseline_cdrsb() const { return visits.empty() ? std::nullopt : visits.front().cdrsb; }
    std::optional<int> baseline_mmse() const { return visits.empty() ? std::nullopt : visits.front().mmse; }
};

struct VisitState {
    double mmse;  // NaN when missing
    double cdrsb;  // NaN when missing
    double years;
};

struct SequenceWindow {
    std::string subject_id;
    std::vector<VisitState> states;
};

void to_json(nlohmann::json& j, const ParticipantRecord& r);
void from_json(const nlohmann::json& j, ParticipantRecord& r);

}  // namespace progress::dataio
