#include "mdslite/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "mdslite/error.hpp"

namespace mdslite {

namespace {

constexpr std::array<std::string_view, kPhaseCount> kPhaseNames = {
    "Client-Connect",     "Client-Bind",     "Server-InitSearch", "Server-SearchIndex",
    "Server-Invoking",    "Server-GenResult", "Client-EndConnect",
};

constexpr std::string_view kStartSuffix = ".start";
constexpr std::string_view kEndSuffix = ".end";

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Splits "<phase>.start"/"<phase>.end". Returns nullopt for free-form markers;
// throws for a phase-suffixed name that does not name a phase.
std::optional<std::pair<Phase, Boundary>> phase_marker(std::string_view evnt) {
    Boundary b;
    std::string_view stem;
    if (ends_with(evnt, kStartSuffix)) {
        b = Boundary::Start;
        stem = evnt.substr(0, evnt.size() - kStartSuffix.size());
    } else if (ends_with(evnt, kEndSuffix)) {
        b = Boundary::End;
        stem = evnt.substr(0, evnt.size() - kEndSuffix.size());
    } else {
        return std::nullopt;
    }
    auto p = parse_phase(stem);
    if (!p) {
        throw std::invalid_argument("unknown phase in '" + std::string(evnt) + "'");
    }
    return std::make_pair(*p, b);
}

bool is_key_token(std::string_view s) {
    if (s.empty()) {
        return false;
    }
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '-' || c == '.';
    });
}

} // namespace

std::string_view phase_name(Phase p) { return kPhaseNames[phase_index(p)]; }

std::optional<Phase> parse_phase(std::string_view name) {
    for (std::size_t i = 0; i < kPhaseCount; ++i) {
        if (kPhaseNames[i] == name) {
            return kAllPhases[i];
        }
    }
    return std::nullopt;
}

bool is_server_phase(Phase p) {
    return p != Phase::ClientConnect && p != Phase::ClientBind && p != Phase::ClientEndConnect;
}

std::string phase_event_name(Phase p, Boundary b) {
    std::string out(phase_name(p));
    out += b == Boundary::Start ? kStartSuffix : kEndSuffix;
    return out;
}

const std::string* LogEvent::find_extra(std::string_view key) const {
    for (const auto& [k, v] : extra) {
        if (k == key) {
            return &v;
        }
    }
    return nullptr;
}

bool is_log_token(std::string_view s) {
    if (s.empty()) {
        return false;
    }
    return std::none_of(s.begin(), s.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\0';
    });
}

void validate_event(const LogEvent& e) {
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw std::invalid_argument(std::string("bad log field ") + what);
        }
    };
    require(is_log_token(e.host), "HOST");
    require(is_log_token(e.prog), "PROG");
    require(e.lvl == "INFO" || e.lvl == "ERROR", "LVL");
    require(is_log_token(e.evnt), "EVNT");
    require(is_log_token(e.qid), "QID");
    for (const auto& [k, v] : e.extra) {
        require(is_key_token(k), "extra key");
        require(is_log_token(v), "extra value");
    }
    phase_marker(e.evnt);
}

std::string serialize_event(const LogEvent& e) {
    std::string out;
    out.reserve(128);
    out += "TS=";
    out += format_timestamp(e.ts);
    out += " HOST=";
    out += e.host;
    out += " PROG=";
    out += e.prog;
    out += " LVL=";
    out += e.lvl;
    out += " EVNT=";
    out += e.evnt;
    out += " QID=";
    out += e.qid;
    for (const auto& [k, v] : e.extra) {
        out += ' ';
        out += k;
        out += '=';
        out += v;
    }
    return out;
}

std::string serialize_events(const std::vector<LogEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        out += serialize_event(e);
        out += '\n';
    }
    return out;
}

namespace {

std::optional<LogEvent> parse_line(std::string_view line, std::string& why) {
    static constexpr std::array<std::string_view, 6> kKeys = {"TS", "HOST", "PROG",
                                                              "LVL", "EVNT", "QID"};
    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t sp = line.find(' ', pos);
        if (sp == std::string_view::npos) {
            sp = line.size();
        }
        tokens.push_back(line.substr(pos, sp - pos));
        pos = sp + 1;
    }
    if (tokens.size() < kKeys.size()) {
        why = "too few fields";
        return std::nullopt;
    }
    LogEvent e;
    std::array<std::string_view, 6> values;
    for (std::size_t i = 0; i < kKeys.size(); ++i) {
        std::string_view t = tokens[i];
        if (t.size() <= kKeys[i].size() || t.substr(0, kKeys[i].size()) != kKeys[i] ||
            t[kKeys[i].size()] != '=') {
            why = "expected " + std::string(kKeys[i]) + "=";
            return std::nullopt;
        }
        values[i] = t.substr(kKeys[i].size() + 1);
    }
    auto ts = parse_timestamp(values[0]);
    if (!ts) {
        why = "bad timestamp";
        return std::nullopt;
    }
    e.ts = *ts;
    e.host = values[1];
    e.prog = values[2];
    e.lvl = values[3];
    e.evnt = values[4];
    e.qid = values[5];
    for (std::size_t i = kKeys.size(); i < tokens.size(); ++i) {
        std::string_view t = tokens[i];
        std::size_t eq = t.find('=');
        if (eq == std::string_view::npos) {
            why = "extra field without '='";
            return std::nullopt;
        }
        e.extra.emplace_back(t.substr(0, eq), t.substr(eq + 1));
    }
    try {
        validate_event(e);
    } catch (const std::invalid_argument& err) {
        why = err.what();
        return std::nullopt;
    }
    return e;
}

} // namespace

ParsedLog parse_log(std::string_view text) {
    ParsedLog out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        std::string why;
        if (auto e = parse_line(line, why)) {
            out.events.push_back(std::move(*e));
        } else {
            out.diagnostics.push_back({line_no, why});
        }
    }
    return out;
}

ParsedLog read_log_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot open log " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_log(ss.str());
}

// ---------------------------------------------------------------------------
// Sinks

void MemorySink::emit(const LogEvent& event) {
    std::lock_guard lock(mu_);
    if (closed_) {
        throw Error(Errc::SinkClosed, "memory sink");
    }
    events_.push_back(event);
}

void MemorySink::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
}

std::vector<LogEvent> MemorySink::snapshot() const {
    std::lock_guard lock(mu_);
    return events_;
}

std::size_t MemorySink::size() const {
    std::lock_guard lock(mu_);
    return events_.size();
}

FileSink::FileSink(const std::filesystem::path& path, bool append) {
    file_ = std::fopen(path.c_str(), append ? "ab" : "wb");
    if (!file_) {
        throw Error(Errc::IoError, "cannot open log " + path.string());
    }
    line_.reserve(256);
}

FileSink::~FileSink() { close(); }

void FileSink::emit(const LogEvent& event) {
    std::lock_guard lock(mu_);
    if (!file_) {
        throw Error(Errc::SinkClosed, "file sink");
    }
    line_ = serialize_event(event);
    line_ += '\n';
    std::fwrite(line_.data(), 1, line_.size(), file_);
}

void FileSink::flush() {
    std::lock_guard lock(mu_);
    if (file_) {
        std::fflush(file_);
    }
}

void FileSink::close() {
    std::lock_guard lock(mu_);
    if (file_) {
        std::fclose(file_);
        file_ = nullptr;
    }
}

void TeeSink::emit(const LogEvent& event) {
    for (auto* s : sinks_) {
        s->emit(event);
    }
}

void TeeSink::flush() {
    for (auto* s : sinks_) {
        s->flush();
    }
}

void TeeSink::close() {
    for (auto* s : sinks_) {
        s->close();
    }
}

void emit(EventSink& sink, const LogEvent& event) { sink.emit(event); }

LogEvent EventSource::make(WallTime ts, std::string evnt, std::string qid,
                           std::string lvl) const {
    LogEvent e;
    e.ts = ts;
    e.host = host;
    e.prog = prog;
    e.lvl = std::move(lvl);
    e.evnt = std::move(evnt);
    e.qid = std::move(qid);
    return e;
}

std::string local_host_token() {
    char buf[256] = {};
    if (gethostname(buf, sizeof buf - 1) != 0 || buf[0] == '\0') {
        return "localhost";
    }
    std::string h(buf);
    std::replace_if(h.begin(), h.end(), [](char c) { return c == ' ' || c == '\t'; }, '_');
    return h;
}

// ---------------------------------------------------------------------------
// Lifelines

Micros PhaseLifeline::ort() const {
    return at(Phase::ClientEndConnect).end - at(Phase::ClientConnect).start;
}

Micros PhaseLifeline::rpt() const {
    Micros sum{0};
    for (Phase p : kServerPhases) {
        sum += duration(p);
    }
    return sum;
}

Correlation correlate(const std::vector<LogEvent>& events) {
    struct Slot {
        std::optional<WallTime> start;
        std::optional<WallTime> end;
        bool duplicate = false;
    };
    using Slots = std::array<Slot, kPhaseCount>;
    std::map<std::string, Slots> by_qid;

    for (const auto& e : events) {
        std::optional<std::pair<Phase, Boundary>> marker;
        try {
            marker = phase_marker(e.evnt);
        } catch (const std::invalid_argument&) {
            continue;
        }
        if (!marker) {
            continue;
        }
        Slot& slot = by_qid[e.qid][phase_index(marker->first)];
        auto& field = marker->second == Boundary::Start ? slot.start : slot.end;
        if (field) {
            slot.duplicate = true;
        }
        field = e.ts;
    }

    Correlation out;
    for (auto& [qid, slots] : by_qid) {
        PhaseLifeline life;
        life.qid = qid;
        std::string reason;
        for (Phase p : kAllPhases) {
            const Slot& s = slots[phase_index(p)];
            if (s.duplicate) {
                reason = "duplicate " + std::string(phase_name(p));
                break;
            }
            if (!s.start || !s.end) {
                reason = "missing " + phase_event_name(p, s.start ? Boundary::End : Boundary::Start);
                break;
            }
            if (*s.end < *s.start) {
                reason = std::string(phase_name(p)) + " ends before it starts";
                break;
            }
            life.phases[phase_index(p)] = {*s.start, *s.end};
        }
        if (reason.empty()) {
            for (std::size_t i = 1; i < kServerPhases.size(); ++i) {
                if (life.at(kServerPhases[i]).start < life.at(kServerPhases[i - 1]).end) {
                    reason = "server phases overlap";
                    break;
                }
            }
        }
        if (reason.empty()) {
            out.complete.push_back(std::move(life));
        } else {
            out.incomplete.push_back({qid, std::move(reason)});
        }
    }
    return out;
}

DecompositionReport check_decomposition(const PhaseLifeline& life, Micros epsilon) {
    for (const auto& iv : life.phases) {
        if (iv.end < iv.start) {
            throw Error(Errc::IncompleteLifeline, life.qid);
        }
    }
    DecompositionReport r;
    r.ort = life.ort();
    r.client_connect = life.duration(Phase::ClientConnect);
    r.client_bind = life.duration(Phase::ClientBind);
    r.rpt = life.rpt();
    r.client_endconnect = life.duration(Phase::ClientEndConnect);
    r.residual = r.ort - (r.client_connect + r.client_bind + r.rpt + r.client_endconnect);
    r.pass = (r.residual < Micros{0} ? -r.residual : r.residual) <= epsilon;
    return r;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw Error(Errc::EmptyInput, "percentile of empty sample");
    }
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

DurationStats summarize_durations(const std::vector<double>& s) {
    if (s.empty()) {
        throw Error(Errc::EmptyInput, "no durations");
    }
    DurationStats d;
    double sum = 0;
    for (double v : s) {
        sum += v;
    }
    d.mean = sum / static_cast<double>(s.size());
    d.median = percentile(s, 0.5);
    d.p95 = percentile(s, 0.95);
    auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    d.min = *mn;
    d.max = *mx;
    return d;
}

PhaseStats phase_stats(const std::vector<PhaseLifeline>& lifelines) {
    if (lifelines.empty()) {
        throw Error(Errc::EmptyInput, "phase_stats needs at least one lifeline");
    }
    PhaseStats st;
    st.count = lifelines.size();
    std::vector<double> buf(lifelines.size());
    for (Phase p : kAllPhases) {
        for (std::size_t i = 0; i < lifelines.size(); ++i) {
            buf[i] = to_seconds(lifelines[i].duration(p));
        }
        st.phases[phase_index(p)] = summarize_durations(buf);
    }
    for (std::size_t i = 0; i < lifelines.size(); ++i) {
        buf[i] = to_seconds(lifelines[i].ort());
    }
    st.ort = summarize_durations(buf);
    for (std::size_t i = 0; i < lifelines.size(); ++i) {
        buf[i] = to_seconds(lifelines[i].rpt());
    }
    st.rpt = summarize_durations(buf);
    if (st.ort.mean > 0) {
        st.rpt_over_ort = st.rpt.mean / st.ort.mean;
        st.connect_fraction =
            (st.at(Phase::ClientConnect).mean + st.at(Phase::ClientEndConnect).mean) / st.ort.mean;
    }
    return st;
}

} // namespace mdslite
