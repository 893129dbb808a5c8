#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdslite/clock.hpp"

namespace mdslite {

// The seven phases of one query, in lifeline order.
enum class Phase {
    ClientConnect,
    ClientBind,
    ServerInitSearch,
    ServerSearchIndex,
    ServerInvoking,
    ServerGenResult,
    ClientEndConnect,
};

inline constexpr std::size_t kPhaseCount = 7;
inline constexpr std::array<Phase, kPhaseCount> kAllPhases = {
    Phase::ClientConnect,     Phase::ClientBind,      Phase::ServerInitSearch,
    Phase::ServerSearchIndex, Phase::ServerInvoking,  Phase::ServerGenResult,
    Phase::ClientEndConnect,
};
inline constexpr std::array<Phase, 4> kServerPhases = {
    Phase::ServerInitSearch, Phase::ServerSearchIndex, Phase::ServerInvoking,
    Phase::ServerGenResult,
};

std::string_view phase_name(Phase p);
std::optional<Phase> parse_phase(std::string_view name);
bool is_server_phase(Phase p);
inline std::size_t phase_index(Phase p) { return static_cast<std::size_t>(p); }

enum class Boundary { Start, End };

// "Client-Connect.start", "Server-Invoking.end", ...
std::string phase_event_name(Phase p, Boundary b);

struct LogEvent {
    WallTime ts{};
    std::string host;
    std::string prog;
    std::string lvl = "INFO";
    std::string evnt;
    std::string qid;
    std::vector<std::pair<std::string, std::string>> extra;

    bool operator==(const LogEvent&) const = default;

    const std::string* find_extra(std::string_view key) const;
};

// True for tokens usable as a field value: non-empty, no whitespace.
bool is_log_token(std::string_view s);

// Throws std::invalid_argument if a field is not a valid token or a phase
// marker names an unknown phase.
void validate_event(const LogEvent& e);

// TS=... HOST=... PROG=... LVL=... EVNT=... QID=... [KEY=VALUE ...]
std::string serialize_event(const LogEvent& e);
std::string serialize_events(const std::vector<LogEvent>& events);

struct ParseDiagnostic {
    std::size_t line = 0;
    std::string reason;
};

struct ParsedLog {
    std::vector<LogEvent> events;
    std::vector<ParseDiagnostic> diagnostics;
};

ParsedLog parse_log(std::string_view text);
ParsedLog read_log_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sinks

class EventSink {
public:
    virtual ~EventSink() = default;
    // Throws SinkClosed after close().
    virtual void emit(const LogEvent& event) = 0;
    virtual void flush() {}
    virtual void close() = 0;
};

class NullSink final : public EventSink {
public:
    void emit(const LogEvent&) override {}
    void close() override {}
};

class MemorySink final : public EventSink {
public:
    void emit(const LogEvent& event) override;
    void close() override;

    std::vector<LogEvent> snapshot() const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::vector<LogEvent> events_;
    bool closed_ = false;
};

// Appends serialized lines to a file; buffered, flushed on flush()/close().
class FileSink final : public EventSink {
public:
    explicit FileSink(const std::filesystem::path& path, bool append = false);
    ~FileSink() override;
    FileSink(const FileSink&) = delete;
    FileSink& operator=(const FileSink&) = delete;

    void emit(const LogEvent& event) override;
    void flush() override;
    void close() override;

private:
    std::mutex mu_;
    std::FILE* file_ = nullptr;
    std::string line_;
};

// Fans each event out to several sinks.
class TeeSink final : public EventSink {
public:
    explicit TeeSink(std::vector<EventSink*> sinks) : sinks_(std::move(sinks)) {}
    void emit(const LogEvent& event) override;
    void flush() override;
    void close() override;

private:
    std::vector<EventSink*> sinks_;
};

void emit(EventSink& sink, const LogEvent& event);

// Host/program identity stamped onto events produced by one component.
struct EventSource {
    std::string host;
    std::string prog;

    LogEvent make(WallTime ts, std::string evnt, std::string qid,
                  std::string lvl = "INFO") const;
};

std::string local_host_token();

// ---------------------------------------------------------------------------
// Lifelines

struct Interval {
    WallTime start{};
    WallTime end{};

    Micros duration() const { return end - start; }
    bool operator==(const Interval&) const = default;
};

struct PhaseLifeline {
    std::string qid;
    std::array<Interval, kPhaseCount> phases{};

    const Interval& at(Phase p) const { return phases[phase_index(p)]; }
    Micros duration(Phase p) const { return at(p).duration(); }

    // Client-EndConnect.end - Client-Connect.start.
    Micros ort() const;
    // Sum of the four server phase durations.
    Micros rpt() const;
};

struct IncompleteLifeline {
    std::string qid;
    std::string reason;
};

struct Correlation {
    std::vector<PhaseLifeline> complete;   // sorted by qid
    std::vector<IncompleteLifeline> incomplete;  // sorted by qid
};

Correlation correlate(const std::vector<LogEvent>& events);

struct DecompositionReport {
    Micros ort{};
    Micros client_connect{};
    Micros client_bind{};
    Micros rpt{};
    Micros client_endconnect{};
    // ort - (connect + bind + rpt + endconnect): inter-phase gaps.
    Micros residual{};
    bool pass = false;
};

DecompositionReport check_decomposition(const PhaseLifeline& lifeline, Micros epsilon);

struct DurationStats {
    double mean = 0;
    double median = 0;
    double p95 = 0;
    double min = 0;
    double max = 0;
};

// Percentile with linear interpolation between closest ranks; q in [0, 1].
double percentile(std::vector<double> values, double q);
DurationStats summarize_durations(const std::vector<double>& seconds);

struct PhaseStats {
    std::size_t count = 0;
    std::array<DurationStats, kPhaseCount> phases{};
    DurationStats ort;
    DurationStats rpt;
    double rpt_over_ort = 0;
    double connect_fraction = 0;

    const DurationStats& at(Phase p) const { return phases[phase_index(p)]; }
};

// Throws EmptyInput on an empty list.
PhaseStats phase_stats(const std::vector<PhaseLifeline>& lifelines);

} // namespace mdslite
