#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progress/dataio/records.hpp"

namespace progress::dataio {

/// Minimal comma-separated table: header plus raw string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<long> line_numbers;

    /// Column index; throws SchemaError naming the column when absent.
    std::size_t require(const std::string& column) const;
    std::optional<std::size_t> find(const std::string& column) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);
std::vector<std::string> split_csv_line(const std::string& line);

/// Maps NACCUDSD values to the three-level diagnosis. Textual labels
/// ("normal", "MCI", "dementia") are always accepted.
struct DiagnosisCodes {
    std::map<std::string, Diagnosis> codes{{"1", Diagnosis::Normal},
                                           {"2", Diagnosis::Mci},
                                           {"3", Diagnosis::Mci},
                                           {"4", Diagnosis::Dementia}};
};

ParsedDataset parse_tables(const CsvTable& csf, const CsvTable& visits, const CsvTable& demographics,
                           const DiagnosisCodes& codes = {});

ParsedDataset parse_dataset(const std::filesystem::path& csf_path, const std::filesystem::path& visits_path,
                            const std::filesystem::path& demographics_path, const DiagnosisCodes& codes = {});

/// Visit closest to the CSF draw; none when the smallest gap exceeds `max_gap_days`
/// (the bound itself is accepted). Ties go to the earlier visit.
std::optional<VisitRow> align_csf_to_visit(const RawCsfRow& csf, std::span<const VisitRow> visits,
                                           long max_gap_days = 90);

/// Draw closest to `baseline`; the earlier draw wins ties.
const RawCsfRow& select_csf_measurement(std::span<const RawCsfRow> rows, Date baseline);

/// Overlapping windows of `length` consecutive visits; V - L + 1 of them when V >= L.
std::vector<SequenceWindow> build_sequences(const ParticipantRecord& record, std::size_t length = 5);

struct Exclusion {
    std::string subject_id;
    std::string reason;
};

struct IntegrationOptions {
    long max_gap_days = 90;
    std::size_t min_visits = 2;
};

struct IntegrationResult {
    std::vector<ParticipantRecord> records;  // sorted by subject id
    std::vector<Exclusion> exclusions;       // sorted by subject id
};

IntegrationResult integrate(const ParsedDataset& data, const IntegrationOptions& options = {});

void write_records_jsonl(std::ostream& out, std::span<const ParticipantRecord> records);
std::vector<ParticipantRecord> read_records_jsonl(std::istream& in);
void write_exclusions_csv(std::ostream& out, std::span<const Exclusion> exclusions);
void write_rejects_csv(std::ostream& out, std::span<const RejectedRow> rejects);

}  // namespace progress::dataio
