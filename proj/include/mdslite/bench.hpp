#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdslite/directory.hpp"
#include "mdslite/net.hpp"
#include "mdslite/telemetry.hpp"
#include "mdslite/wire.hpp"

namespace mdslite {

inline constexpr int kMaxUsers = 10000;

struct BenchConfig {
    std::string scenario = "custom";
    net::Address target{"127.0.0.1", 0};
    Credential credential = default_credential();
    int users = 1;
    std::chrono::milliseconds duration{600000};
    std::chrono::milliseconds think{1000};
    EntryName base = EntryName::parse("mds-vo-name=local");
    Scope scope = Scope::Subtree;
    Filter filter = Filter::presence("objectclass");
    std::optional<std::vector<std::string>> attributes;
    std::filesystem::path log_path;
    std::chrono::milliseconds sample_interval{5000};
    // Lifelines that start and samples taken before this offset are left
    // out of the statistics.
    std::chrono::milliseconds warmup{0};
    net::Timeout timeout = std::chrono::seconds(300);
};

// Throws MalformedConfig.
void validate(const BenchConfig& config);

// Exponentially weighted average over a fixed time window.
class LoadProxy {
public:
    explicit LoadProxy(double window_seconds = 60.0) : window_(window_seconds) {}
    double update(double value, double dt_seconds);
    double value() const { return value_; }

private:
    double window_;
    double value_ = 0;
};

struct MetricsSample {
    WallTime ts{};
    std::uint64_t completed_in_window = 0;
    int in_flight = 0;
    int busy_workers = 0;
    double load_proxy = 0;
    std::optional<double> cpu_proxy;
};

struct WorkerTally {
    int worker = 0;
    std::uint64_t issued = 0;
    std::uint64_t completed_in_window = 0;
    std::uint64_t completed_late = 0;
    std::uint64_t errors = 0;
    std::map<std::string, std::uint64_t> errors_by_class;
    std::optional<Micros> min_ort;
};

// Identifies one benchmark run inside a merged log. The bench writes it as
// a "bench-start" marker.
struct RunWindow {
    std::string scenario = "custom";
    int users = 1;
    double duration_s = 0;
    double think_s = 0;
    double warmup_s = 0;
    WallTime start{};

    WallTime deadline() const;
};

inline constexpr std::string_view kBenchStartEvent = "bench-start";

LogEvent bench_start_event(const EventSource& source, const RunWindow& run);
// nullopt unless `e` is a well-formed bench-start marker.
std::optional<RunWindow> parse_bench_start(const LogEvent& e);

// Everything the merged client+server log says about one run.
struct LifelineSummary {
    std::size_t issued = 0;
    std::size_t complete = 0;
    std::size_t incomplete = 0;
    std::size_t errors = 0;
    std::map<std::string, std::size_t> errors_by_class;
    std::size_t completed_in_window = 0;
    double throughput = 0;
    std::optional<PhaseStats> stats;  // over complete lifelines past warmup
    double min_ort = 0;
    double max_residual = 0;
    double residual_within_5ms = 0;  // fraction of complete lifelines
    bool rpt_identity_holds = true;
    std::vector<PhaseLifeline> lifelines;  // complete, past warmup
};

LifelineSummary summarize_run(const RunWindow& run, const std::vector<LogEvent>& events);

struct RunReport {
    BenchConfig config;
    RunWindow window;
    std::uint64_t issued = 0;
    std::uint64_t completed_in_window = 0;
    std::uint64_t errors = 0;
    std::map<std::string, std::uint64_t> errors_by_class;
    double throughput = 0;
    double min_ort = 0;  // seconds, over successful queries
    std::vector<MetricsSample> samples;
    LifelineSummary lifelines;
    double mean_load_proxy = 0;
    std::optional<double> mean_cpu_proxy;
    // Proxy annotation: mean load-proxy per core above 3.
    bool overloaded = false;

    // users / (think + min ORT).
    double throughput_bound() const;
};

struct RunOptions {
    // Extra sink for client events (the log file is handled by config.log_path).
    EventSink* client_sink = nullptr;
    // Server-side events to merge before correlating.
    std::function<std::vector<LogEvent>()> server_events;
    std::vector<std::filesystem::path> server_logs;
};

// Closed-loop run. Each worker waits one think time, issues a query, and
// repeats until the deadline. Throws TargetUnreachableAtStart.
RunReport run_benchmark(const BenchConfig& config, const RunOptions& options = {});

} // namespace mdslite
