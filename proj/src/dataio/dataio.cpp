#include "progress/dataio/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "progress/core/errors.hpp"

namespace progress::dataio {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool is_blank(const std::string& s) { return s.empty() || s == "NA" || s == "." || s == "NaN" || s == "nan"; }

/// Thrown inside row parsing; converted into a reject entry.
struct RowError {
    std::string reason;
};

std::optional<double> parse_number(const std::string& cell, const char* column) {
    const std::string s = trim(cell);
    if (is_blank(s)) return std::nullopt;
    double v = 0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) throw RowError{std::string("malformed number in ") + column};
    return v;
}

std::optional<int> parse_int(const std::string& cell, const char* column) {
    const auto v = parse_number(cell, column);
    if (!v) return std::nullopt;
    if (std::floor(*v) != *v) throw RowError{std::string("non-integer value in ") + column};
    return int(*v);
}

Date parse_date(const CsvTable& t, const std::vector<std::string>& row, const char* ycol, const char* mcol,
                const char* dcol) {
    const auto year = parse_int(row[t.require(ycol)], ycol);
    const auto month = parse_int(row[t.require(mcol)], mcol);
    auto day = parse_int(row[t.require(dcol)], dcol);
    if (!year || !month || *year < 1980 || *year > 2100) throw RowError{"invalid date"};
    // NACC encodes an unknown day as 88/99; impute mid-month.
    if (!day || *day == 88 || *day == 99 || *day < 0) day = 15;
    try {
        return make_date(*year, *month, *day);
    } catch (const DataError&) {
        throw RowError{"invalid date"};
    }
}

std::optional<double> biomarker_value(const std::string& cell, const char* column) {
    const auto v = parse_number(cell, column);
    if (!v || *v <= 0) return std::nullopt;  // negative NACC codes mean "not assessed"
    return v;
}

AssayMethod method_value(const std::string& cell) {
    const std::string s = trim(cell);
    if (is_blank(s)) return AssayMethod::Other;
    try {
        return assay_from_string(s);
    } catch (const DataError&) {
    }
    int code = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), code);
    if (ec == std::errc{} && ptr == s.data() + s.size()) return AssayMethod::Other;
    throw RowError{"invalid assay method"};
}

template <typename ParseRow>
void parse_rows(const CsvTable& t, const char* file, std::vector<RejectedRow>& rejects, ParseRow parse_row) {
    const auto id_col = t.require("NACCID");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string id = id_col < row.size() ? trim(row[id_col]) : std::string{};
        if (row.size() != t.header.size()) {
            rejects.push_back({file, t.line_numbers[r], id, "wrong field count"});
            continue;
        }
        if (id.empty()) {
            rejects.push_back({file, t.line_numbers[r], id, "missing subject id"});
            continue;
        }
        try {
            parse_row(row, id);
        } catch (const RowError& e) {
            rejects.push_back({file, t.line_numbers[r], id, e.reason});
        }
    }
}

double years_between(Date from, Date to) { return double(days_between(from, to)) / kDaysPerYear; }

}  // namespace

std::optional<std::size_t> CsvTable::find(const std::string& column) const {
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) return std::nullopt;
    return std::size_t(it - header.begin());
}

std::size_t CsvTable::require(const std::string& column) const {
    const auto idx = find(column);
    if (!idx) throw SchemaError("missing required column " + column);
    return *idx;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.push_back(trim(cell));
    return cells;
}

CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (t.header.empty()) {
            t.header = split_csv_line(line);
            if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
            continue;
        }
        t.rows.push_back(split_csv_line(line));
        t.line_numbers.push_back(line_no);
    }
    return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_csv(in);
}

ParsedDataset parse_tables(const CsvTable& csf, const CsvTable& visits, const CsvTable& demographics,
                           const DiagnosisCodes& codes) {
    for (const char* c : {"NACCID", "CSFABETA", "CSFPTAU", "CSFTTAU", "CSFABMD", "CSFPTMD", "CSFTTMD", "CSFLPMO",
                          "CSFLPDY", "CSFLPYR"})
        csf.require(c);
    for (const char* c : {"NACCID", "NACCVNUM", "VISITMO", "VISITDAY", "VISITYR", "NACCMMSE", "CDRSUM", "NACCUDSD"})
        visits.require(c);
    for (const char* c : {"NACCID", "SEX", "BIRTHYR", "EDUC", "NACCADC"}) demographics.require(c);

    ParsedDataset out;
    const auto ab40_col = csf.find("CSFAB40");
    parse_rows(csf, "csf", out.rejects, [&](const std::vector<std::string>& row, const std::string& id) {
        RawCsfRow r;
        r.subject_id = id;
        r.collection_date = parse_date(csf, row, "CSFLPYR", "CSFLPMO", "CSFLPDY");
        r.abeta42 = biomarker_value(row[csf.require("CSFABETA")], "CSFABETA");
        r.ptau = biomarker_value(row[csf.require("CSFPTAU")], "CSFPTAU");
        r.ttau = biomarker_value(row[csf.require("CSFTTAU")], "CSFTTAU");
        if (ab40_col) r.abeta40 = biomarker_value(row[*ab40_col], "CSFAB40");
        r.abeta42_method = method_value(row[csf.require("CSFABMD")]);
        r.ptau_method = method_value(row[csf.require("CSFPTMD")]);
        r.ttau_method = method_value(row[csf.require("CSFTTMD")]);
        out.csf.push_back(r);
    });

    std::set<std::pair<std::string, int>> seen_visits;
    parse_rows(visits, "visits", out.rejects, [&](const std::vector<std::string>& row, const std::string& id) {
        VisitRow v;
        v.subject_id = id;
        const auto vnum = parse_int(row[visits.require("NACCVNUM")], "NACCVNUM");
        if (!vnum) throw RowError{"missing visit number"};
        v.visit_number = *vnum;
        v.date = parse_date(visits, row, "VISITYR", "VISITMO", "VISITDAY");
        if (auto m = parse_int(row[visits.require("NACCMMSE")], "NACCMMSE"); m && *m >= 0 && *m < 88) {
            if (*m > 30) throw RowError{"MMSE out of range"};
            v.mmse = m;
        }
        if (auto c = parse_number(row[visits.require("CDRSUM")], "CDRSUM"); c && *c >= 0) {
            if (*c > 18) throw RowError{"CDR-SB out of range"};
            if (std::fabs(*c * 2 - std::round(*c * 2)) > 1e-9) throw RowError{"CDR-SB not on 0.5 grid"};
            v.cdrsb = c;
        }
        const std::string dx = trim(row[visits.require("NACCUDSD")]);
        if (!is_blank(dx)) {
            if (const auto it = codes.codes.find(dx); it != codes.codes.end()) {
                v.diagnosis = it->second;
            } else {
                try {
                    v.diagnosis = diagnosis_from_string(dx);
                } catch (const DataError&) {
                    throw RowError{"unknown diagnosis code"};
                }
            }
        }
        if (!seen_visits.insert({id, v.visit_number}).second) throw RowError{"duplicate visit number"};
        out.visits.push_back(v);
    });

    std::set<std::string> seen_demo;
    parse_rows(demographics, "demographics", out.rejects,
               [&](const std::vector<std::string>& row, const std::string& id) {
                   DemographicsRow d;
                   d.subject_id = id;
                   const std::string sex = trim(row[demographics.require("SEX")]);
                   if (!is_blank(sex)) {
                       try {
                           d.sex = sex_from_string(sex);
                       } catch (const DataError&) {
                           throw RowError{"invalid sex code"};
                       }
                   }
                   if (auto y = parse_int(row[demographics.require("BIRTHYR")], "BIRTHYR"); y && *y >= 1880 && *y <= 2100)
                       d.birth_year = y;
                   if (auto e = parse_number(row[demographics.require("EDUC")], "EDUC"); e && *e >= 0 && *e <= 36)
                       d.education = e;
                   if (const std::string c = trim(row[demographics.require("NACCADC")]); !is_blank(c)) d.center = c;
                   if (!seen_demo.insert(id).second) throw RowError{"duplicate demographics"};
                   out.demographics.push_back(d);
               });
    return out;
}

ParsedDataset parse_dataset(const std::filesystem::path& csf_path, const std::filesystem::path& visits_path,
                            const std::filesystem::path& demographics_path, const DiagnosisCodes& codes) {
    return parse_tables(read_csv(csf_path), read_csv(visits_path), read_csv(demographics_path), codes);
}

std::optional<VisitRow> align_csf_to_visit(const RawCsfRow& csf, std::span<const VisitRow> visits,
                                           long max_gap_days) {
    const VisitRow* best = nullptr;
    long best_gap = 0;
    for (const auto& v : visits) {
        const long gap = std::labs(days_between(csf.collection_date, v.date));
        if (!best || gap < best_gap || (gap == best_gap && v.date < best->date)) {
            best = &v;
            best_gap = gap;
        }
    }
    if (!best || best_gap > max_gap_days) return std::nullopt;
    return *best;
}

const RawCsfRow& select_csf_measurement(std::span<const RawCsfRow> rows, Date baseline) {
    if (rows.empty()) throw DataError("select_csf_measurement: no CSF rows");
    const RawCsfRow* best = &rows.front();
    for (const auto& r : rows.subspan(1)) {
        const long gap = std::labs(days_between(baseline, r.collection_date));
        const long best_gap = std::labs(days_between(baseline, best->collection_date));
        if (gap < best_gap || (gap == best_gap && r.collection_date < best->collection_date)) best = &r;
    }
    return *best;
}

std::vector<SequenceWindow> build_sequences(const ParticipantRecord& record, std::size_t length) {
    std::vector<SequenceWindow> windows;
    const std::size_t v = record.visits.size();
    if (length == 0 || v < length) return windows;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t start = 0; start + length <= v; ++start) {
        SequenceWindow w;
        w.subject_id = record.subject_id;
        for (std::size_t k = start; k < start + length; ++k) {
            const auto& visit = record.visits[k];
            w.states.push_back({visit.mmse ? double(*visit.mmse) : nan, visit.cdrsb.value_or(nan), visit.years});
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

IntegrationResult integrate(const ParsedDataset& data, const IntegrationOptions& options) {
    std::map<std::string, std::vector<RawCsfRow>> csf_by_id;
    std::map<std::string, std::vector<VisitRow>> visits_by_id;
    std::map<std::string, DemographicsRow> demo_by_id;
    std::set<std::string> ids;
    for (const auto& r : data.csf) {
        csf_by_id[r.subject_id].push_back(r);
        ids.insert(r.subject_id);
    }
    for (const auto& v : data.visits) {
        visits_by_id[v.subject_id].push_back(v);
        ids.insert(v.subject_id);
    }
    for (const auto& d : data.demographics) {
        demo_by_id.emplace(d.subject_id, d);
        ids.insert(d.subject_id);
    }

    IntegrationResult result;
    for (const auto& id : ids) {
        auto exclude = [&](const char* reason) { result.exclusions.push_back({id, reason}); };

        const auto demo = demo_by_id.find(id);
        if (demo == demo_by_id.end() || !demo->second.complete()) {
            exclude("incomplete demographics");
            continue;
        }
        std::vector<RawCsfRow> csf_rows;
        if (const auto it = csf_by_id.find(id); it != csf_by_id.end())
            for (const auto& r : it->second)
                if (r.has_any_biomarker()) csf_rows.push_back(r);
        if (csf_rows.empty()) {
            exclude("no biomarker");
            continue;
        }
        std::vector<VisitRow> visits;
        if (const auto it = visits_by_id.find(id); it != visits_by_id.end()) visits = it->second;
        std::sort(visits.begin(), visits.end(), [](const VisitRow& a, const VisitRow& b) {
            return a.date != b.date ? a.date < b.date : a.visit_number < b.visit_number;
        });
        // Same-day repeats collapse onto the first record of that day.
        visits.erase(std::unique(visits.begin(), visits.end(),
                                 [](const VisitRow& a, const VisitRow& b) { return a.date == b.date; }),
                     visits.end());
        if (visits.size() < options.min_visits) {
            exclude("insufficient visits");
            continue;
        }
        const RawCsfRow& csf = select_csf_measurement(csf_rows, visits.front().date);
        const auto aligned = align_csf_to_visit(csf, visits, options.max_gap_days);
        if (!aligned) {
            exclude("alignment");
            continue;
        }
        const auto first = std::find_if(visits.begin(), visits.end(),
                                        [&](const VisitRow& v) { return v.date == aligned->date; });
        std::vector<VisitRow> followup(first, visits.end());
        if (followup.size() < options.min_visits) {
            exclude("insufficient visits");
            continue;
        }

        ParticipantRecord rec;
        rec.subject_id = id;
        rec.center = *demo->second.center;
        rec.sex = *demo->second.sex;
        rec.education = *demo->second.education;
        const Date baseline = followup.front().date;
        rec.age = years_between(make_date(*demo->second.birth_year, 7, 1), baseline);
        rec.csf.abeta42 = csf.abeta42;
        rec.csf.ptau = csf.ptau;
        rec.csf.ttau = csf.ttau;
        rec.csf.abeta40 = csf.abeta40;
        rec.csf.abeta42_method = csf.abeta42_method;
        rec.csf.ptau_method = csf.ptau_method;
        rec.csf.ttau_method = csf.ttau_method;
        rec.csf.days_from_baseline_visit = days_between(baseline, csf.collection_date);
        rec.baseline_diagnosis = followup.front().diagnosis.value_or(Diagnosis::Mci);
        const auto baseline_mmse = followup.front().mmse;
        for (const auto& v : followup) {
            Visit visit;
            visit.years = years_between(baseline, v.date);
            visit.cdrsb = v.cdrsb;
            visit.mmse = v.mmse;
            if (v.mmse && baseline_mmse) visit.mmse_change = *v.mmse - *baseline_mmse;
            visit.diagnosis = v.diagnosis.value_or(rec.visits.empty() ? rec.baseline_diagnosis
                                                                      : rec.visits.back().diagnosis);
            rec.visits.push_back(visit);
        }
        const auto conversion = std::find_if(rec.visits.begin(), rec.visits.end(),
                                             [](const Visit& v) { return v.diagnosis == Diagnosis::Dementia; });
        rec.event = conversion != rec.visits.end();
        rec.event_time = rec.event ? conversion->years : rec.visits.back().years;
        const auto last_cdr = std::find_if(rec.visits.rbegin(), rec.visits.rend(), [](const Visit& v) { return v.cdrsb.has_value(); });
        rec.progressed = rec.baseline_cdrsb() && last_cdr != rec.visits.rend() && *last_cdr->cdrsb > *rec.baseline_cdrsb();
        result.records.push_back(std::move(rec));
    }
    return result;
}

void write_records_jsonl(std::ostream& out, std::span<const ParticipantRecord> records) {
    for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<ParticipantRecord> read_records_jsonl(std::istream& in) {
    std::vector<ParticipantRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        records.push_back(nlohmann::json::parse(line).get<ParticipantRecord>());
    }
    return records;
}

void write_exclusions_csv(std::ostream& out, std::span<const Exclusion> exclusions) {
    out << "NACCID,reason\n";
    for (const auto& e : exclusions) out << e.subject_id << ',' << e.reason << '\n';
}

void write_rejects_csv(std::ostream& out, std::span<const RejectedRow> rejects) {
    out << "file,line,NACCID,reason\n";
    for (const auto& r : rejects) out << r.file << ',' << r.line << ',' << r.subject_id << ',' << r.reason << '\n';
}

}  // namespace progress::dataio
