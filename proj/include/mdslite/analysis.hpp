#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mdslite/bench.hpp"
#include "mdslite/telemetry.hpp"

namespace mdslite {

struct SummaryRow {
    std::string scenario;
    int users = 0;
    double throughput = 0;
    double mean_ort = 0;
    double mean_rpt = 0;
    std::array<double, kPhaseCount> phase_means{};
    double rpt_over_ort = 0;
    double connect_fraction = 0;
    std::size_t errors = 0;

    double phase_mean(Phase p) const { return phase_means[phase_index(p)]; }
};

struct PhaseRow {
    std::string scenario;
    int users = 0;
    Phase phase = Phase::ClientConnect;
    double mean = 0;
    double median = 0;
    double p95 = 0;
};

std::string summary_csv_header();
std::string format_summary_csv(const std::vector<SummaryRow>& rows);
// Throws MalformedConfig on a bad header or row.
std::vector<SummaryRow> parse_summary_csv(std::string_view text);
std::string format_phase_csv(const std::vector<PhaseRow>& rows);

// Throws NoCompleteLifelines when the summary has no usable lifelines.
SummaryRow summary_row(const RunWindow& run, const LifelineSummary& summary);
std::vector<PhaseRow> phase_rows(const RunWindow& run, const LifelineSummary& summary);
SummaryRow summary_row(const RunReport& report);

struct RunAnalysis {
    RunWindow window;
    LifelineSummary summary;
};

struct Analysis {
    std::vector<RunAnalysis> runs;
    std::vector<SummaryRow> rows;
    std::vector<PhaseRow> phases;
    std::vector<ParseDiagnostic> diagnostics;
};

// Splits merged events into runs at each bench-start marker. Runs without
// complete lifelines are skipped; throws NoCompleteLifelines when none remain.
Analysis analyze_events(std::vector<LogEvent> events);
Analysis analyze(const std::vector<std::filesystem::path>& log_paths);

struct ComparisonRow {
    int users = 0;
    std::array<double, 3> a{};  // throughput, mean_ort, mean_rpt
    std::array<double, 3> b{};
    bool a_throughput_ge_b = false;

    double delta(std::size_t i) const { return a[i] - b[i]; }
    double ratio(std::size_t i) const;
};

// Matches rows by user count. Throws GridMismatch unless both sides cover
// the same user counts.
std::vector<ComparisonRow> compare(const std::vector<SummaryRow>& a,
                                   const std::vector<SummaryRow>& b);
std::string format_comparison_csv(const std::vector<ComparisonRow>& rows);

// File name -> contents: per-scenario .dat files for the throughput,
// ORT/RPT and phase-breakdown families plus one gnuplot stub per family.
std::map<std::string, std::string> plot_files(const std::vector<SummaryRow>& rows);
void emit_plotdata(const std::vector<SummaryRow>& rows, const std::filesystem::path& dir);

enum class Scale { Desk, Paper };

struct ReplicateOptions {
    std::vector<std::string> scenarios{"gris-cached", "gris-uncached", "giis-cached"};
    Scale scale = Scale::Desk;
    std::vector<int> users{1, 5, 10, 20, 50};
    std::chrono::milliseconds duration{30000};
    std::chrono::milliseconds think{1000};
    std::chrono::milliseconds sample_interval{5000};
    int giis_members = 5;
    std::filesystem::path out_dir;
};

struct Finding {
    std::string check;
    bool pass = false;
};

struct ReplicateResult {
    std::vector<SummaryRow> rows;
    std::vector<Finding> findings;
    std::vector<std::string> failed_scenarios;
};

std::string format_findings(const std::vector<Finding>& findings);

// Desk scale runs every scenario and writes logs, CSVs, plot data and a
// findings file under out_dir. Paper scale only writes the plan.
ReplicateResult replicate(const ReplicateOptions& options);

} // namespace mdslite
