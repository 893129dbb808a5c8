#include "mdslite/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "mdslite/error.hpp"

namespace mdslite {

namespace {

std::string fmt_seconds(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", s);
    return buf;
}

double seconds_of(std::chrono::milliseconds ms) { return static_cast<double>(ms.count()) / 1000.0; }

std::optional<double> process_cpu_seconds() {
    timespec ts{};
    if (clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts) != 0) {
        return std::nullopt;
    }
    return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

unsigned core_count() { return std::max(1u, std::thread::hardware_concurrency()); }

} // namespace

void validate(const BenchConfig& c) {
    if (c.users < 1 || c.users > kMaxUsers) {
        throw Error(Errc::MalformedConfig, "users must be in [1, " + std::to_string(kMaxUsers) + "]");
    }
    if (c.duration.count() <= 0) {
        throw Error(Errc::MalformedConfig, "duration must be > 0");
    }
    if (c.think.count() < 0) {
        throw Error(Errc::MalformedConfig, "think time must be >= 0");
    }
    if (c.sample_interval.count() <= 0) {
        throw Error(Errc::MalformedConfig, "sample interval must be > 0");
    }
    if (c.warmup.count() < 0 || c.warmup >= c.duration) {
        throw Error(Errc::MalformedConfig, "warmup must be in [0, duration)");
    }
    if (c.scenario.empty() || !is_log_token(c.scenario)) {
        throw Error(Errc::MalformedConfig, "scenario must be a token");
    }
}

double LoadProxy::update(double value, double dt_seconds) {
    const double keep = std::exp(-dt_seconds / window_);
    value_ = value_ * keep + value * (1.0 - keep);
    return value_;
}

WallTime RunWindow::deadline() const {
    return start + Micros{static_cast<std::int64_t>(std::llround(duration_s * 1e6))};
}

LogEvent bench_start_event(const EventSource& source, const RunWindow& run) {
    LogEvent e = source.make(run.start, std::string(kBenchStartEvent), "-");
    e.extra = {{"SCENARIO", run.scenario},
               {"USERS", std::to_string(run.users)},
               {"DURATION", fmt_seconds(run.duration_s)},
               {"THINK", fmt_seconds(run.think_s)},
               {"WARMUP", fmt_seconds(run.warmup_s)}};
    return e;
}

std::optional<RunWindow> parse_bench_start(const LogEvent& e) {
    if (e.evnt != kBenchStartEvent) {
        return std::nullopt;
    }
    const std::string* scenario = e.find_extra("SCENARIO");
    const std::string* users = e.find_extra("USERS");
    const std::string* duration = e.find_extra("DURATION");
    const std::string* think = e.find_extra("THINK");
    const std::string* warmup = e.find_extra("WARMUP");
    if (!scenario || !users || !duration || !think) {
        return std::nullopt;
    }
    try {
        RunWindow r;
        r.scenario = *scenario;
        r.users = std::stoi(*users);
        r.duration_s = std::stod(*duration);
        r.think_s = std::stod(*think);
        r.warmup_s = warmup ? std::stod(*warmup) : 0.0;
        r.start = e.ts;
        if (r.users < 1 || !(r.duration_s > 0)) {
            return std::nullopt;
        }
        return r;
    } catch (const std::logic_error&) {
        return std::nullopt;
    }
}

LifelineSummary summarize_run(const RunWindow& run, const std::vector<LogEvent>& events) {
    LifelineSummary out;
    const std::string connect_start = phase_event_name(Phase::ClientConnect, Boundary::Start);
    std::set<std::string> issued;
    std::unordered_set<std::string> failed;
    std::vector<LogEvent> mine;
    mine.reserve(events.size());
    for (const auto& e : events) {
        if (e.ts < run.start) {
            continue;
        }
        if (e.prog == "bench" && e.evnt == connect_start) {
            issued.insert(e.qid);
        }
        if (e.evnt == kQueryErrorEvent) {
            if (failed.insert(e.qid).second) {
                const std::string* cls = e.find_extra("CLASS");
                ++out.errors_by_class[cls ? *cls : "Unknown"];
            }
        }
        mine.push_back(e);
    }
    out.issued = issued.size();
    out.errors = failed.size();

    Correlation corr = correlate(mine);
    const WallTime deadline = run.deadline();
    const WallTime warm_end =
        run.start + Micros{static_cast<std::int64_t>(std::llround(run.warmup_s * 1e6))};
    std::optional<Micros> min_ort;
    std::size_t within = 0;
    for (auto& l : corr.complete) {
        if (!issued.count(l.qid) || failed.count(l.qid)) {
            continue;
        }
        ++out.complete;
        const Interval& ec = l.at(Phase::ClientEndConnect);
        if (ec.end <= deadline) {
            ++out.completed_in_window;
        }
        min_ort = min_ort ? std::min(*min_ort, l.ort()) : l.ort();
        Micros sum{0};
        for (Phase p : kServerPhases) {
            sum += l.duration(p);
        }
        out.rpt_identity_holds = out.rpt_identity_holds && sum == l.rpt();
        const auto report = check_decomposition(l, Micros{5000});
        const double residual = to_seconds(report.residual);
        out.max_residual = std::max(out.max_residual, std::abs(residual));
        within += report.pass ? 1 : 0;
        if (l.at(Phase::ClientConnect).start >= warm_end) {
            out.lifelines.push_back(std::move(l));
        }
    }
    std::size_t ok = 0;
    for (const auto& q : issued) {
        ok += failed.count(q) ? 0 : 1;
    }
    out.incomplete = ok - out.complete;
    out.residual_within_5ms = out.complete ? static_cast<double>(within) / out.complete : 0.0;
    out.min_ort = min_ort ? to_seconds(*min_ort) : 0.0;
    const double window = run.duration_s - run.warmup_s;
    std::size_t counted = 0;
    if (run.warmup_s > 0) {
        for (const auto& l : out.lifelines) {
            counted += l.at(Phase::ClientEndConnect).end <= deadline ? 1 : 0;
        }
    } else {
        counted = out.completed_in_window;
    }
    out.throughput = window > 0 ? static_cast<double>(counted) / window : 0.0;
    if (!out.lifelines.empty()) {
        out.stats = phase_stats(out.lifelines);
    }
    return out;
}

double RunReport::throughput_bound() const {
    const double denom = seconds_of(config.think) + min_ort;
    return denom > 0 ? config.users / denom : std::numeric_limits<double>::infinity();
}

namespace {

struct BenchState {
    std::atomic<int> in_flight{0};
    std::atomic<int> busy{0};
    std::atomic<std::uint64_t> completed_in_window{0};
    std::mutex mu;
    std::condition_variable cv;
    bool done = false;
};

void worker_loop(int id, const BenchConfig& cfg, WallTime deadline, EventSink& sink,
                 BenchState& state, WorkerTally& tally) {
    tally.worker = id;
    ClientOptions opts;
    opts.source = {local_host_token(), "bench"};
    opts.timeout = cfg.timeout;
    SearchRequest req{cfg.base, cfg.scope, cfg.filter, cfg.attributes, {}};
    std::uint64_t seq = 0;
    while (true) {
        // Think time runs from the previous response (or the run start).
        if (cfg.think.count() > 0) {
            const auto left = deadline - wall_now();
            if (left <= Micros{0}) {
                break;
            }
            std::this_thread::sleep_for(std::min<Micros>(left, cfg.think));
        }
        if (wall_now() >= deadline) {
            break;
        }
        req.query_id = "q-" + std::to_string(id) + "-" + std::to_string(++seq);
        ++tally.issued;
        ++state.busy;
        ++state.in_flight;
        try {
            ClientQueryResult res = client_query(cfg.target, cfg.credential, req, sink, opts);
            const Micros ort = res.phases.ort();
            tally.min_ort = tally.min_ort ? std::min(*tally.min_ort, ort) : ort;
            if (res.phases.end_connect.end <= deadline) {
                ++tally.completed_in_window;
                ++state.completed_in_window;
            } else {
                ++tally.completed_late;
            }
        } catch (const Error& e) {
            ++tally.errors;
            ++tally.errors_by_class[std::string(errc_name(e.code()))];
        }
        --state.in_flight;
        --state.busy;
    }
}

} // namespace

RunReport run_benchmark(const BenchConfig& config, const RunOptions& options) {
    validate(config);
    try {
        net::Socket probe = net::Socket::connect(config.target, std::chrono::seconds(5));
    } catch (const Error& e) {
        throw Error(Errc::TargetUnreachableAtStart, config.target.str() + ": " + e.what());
    }

    MemorySink memory;
    std::unique_ptr<FileSink> file;
    std::vector<EventSink*> sinks{&memory};
    if (!config.log_path.empty()) {
        file = std::make_unique<FileSink>(config.log_path, true);
        sinks.push_back(file.get());
    }
    if (options.client_sink) {
        sinks.push_back(options.client_sink);
    }
    TeeSink sink(sinks);

    RunReport report;
    report.config = config;
    RunWindow& run = report.window;
    run.scenario = config.scenario;
    run.users = config.users;
    run.duration_s = seconds_of(config.duration);
    run.think_s = seconds_of(config.think);
    run.warmup_s = seconds_of(config.warmup);
    run.start = wall_now();
    const EventSource source{local_host_token(), "bench"};
    sink.emit(bench_start_event(source, run));
    const WallTime deadline = run.deadline();
    const auto steady_start = std::chrono::steady_clock::now();

    BenchState state;
    std::vector<WorkerTally> tallies(static_cast<std::size_t>(config.users));
    std::vector<std::thread> workers;
    workers.reserve(tallies.size());
    for (int i = 0; i < config.users; ++i) {
        workers.emplace_back(worker_loop, i, std::cref(config), deadline, std::ref(sink),
                             std::ref(state), std::ref(tallies[static_cast<std::size_t>(i)]));
    }

    // Sampler.
    const unsigned cores = core_count();
    std::thread sampler([&] {
        LoadProxy load;
        auto next = steady_start + config.sample_interval;
        auto last = steady_start;
        std::optional<double> last_cpu = process_cpu_seconds();
        std::uint64_t last_completed = 0;
        std::unique_lock lock(state.mu);
        while (!state.done) {
            if (state.cv.wait_until(lock, next, [&] { return state.done; })) {
                break;
            }
            if (wall_now() > deadline) {
                break;
            }
            const auto now = std::chrono::steady_clock::now();
            const double dt = std::chrono::duration<double>(now - last).count();
            MetricsSample s;
            s.ts = wall_now();
            const std::uint64_t completed = state.completed_in_window.load();
            s.completed_in_window = completed - last_completed;
            last_completed = completed;
            s.in_flight = state.in_flight.load();
            s.busy_workers = state.busy.load();
            s.load_proxy = load.update(s.in_flight, dt);
            const std::optional<double> cpu = process_cpu_seconds();
            if (cpu && last_cpu && dt > 0) {
                s.cpu_proxy = std::clamp((*cpu - *last_cpu) / (dt * cores), 0.0, 1.0);
            }
            last_cpu = cpu;
            last = now;
            report.samples.push_back(s);
            next += config.sample_interval;
        }
    });

    for (auto& w : workers) {
        w.join();
    }
    {
        std::lock_guard lock(state.mu);
        state.done = true;
    }
    state.cv.notify_all();
    sampler.join();
    sink.flush();

    std::optional<Micros> min_ort;
    for (const auto& t : tallies) {
        report.issued += t.issued;
        report.completed_in_window += t.completed_in_window;
        report.errors += t.errors;
        for (const auto& [cls, n] : t.errors_by_class) {
            report.errors_by_class[cls] += n;
        }
        if (t.min_ort) {
            min_ort = min_ort ? std::min(*min_ort, *t.min_ort) : *t.min_ort;
        }
    }
    report.min_ort = min_ort ? to_seconds(*min_ort) : 0.0;
    report.throughput = static_cast<double>(report.completed_in_window) / run.duration_s;

    std::vector<LogEvent> events = memory.snapshot();
    if (options.server_events) {
        auto more = options.server_events();
        events.insert(events.end(), more.begin(), more.end());
    }
    for (const auto& path : options.server_logs) {
        auto parsed = read_log_file(path);
        events.insert(events.end(), parsed.events.begin(), parsed.events.end());
    }
    report.lifelines = summarize_run(run, events);
    if (config.warmup.count() > 0) {
        report.throughput = report.lifelines.throughput;
    }

    double load_sum = 0, cpu_sum = 0;
    std::size_t load_n = 0, cpu_n = 0;
    const WallTime warm_end = run.start + std::chrono::duration_cast<Micros>(config.warmup);
    for (const auto& s : report.samples) {
        if (s.ts < warm_end) {
            continue;
        }
        load_sum += s.load_proxy;
        ++load_n;
        if (s.cpu_proxy) {
            cpu_sum += *s.cpu_proxy;
            ++cpu_n;
        }
    }
    report.mean_load_proxy = load_n ? load_sum / load_n : 0.0;
    if (cpu_n) {
        report.mean_cpu_proxy = cpu_sum / cpu_n;
    }
    report.overloaded = report.mean_load_proxy / cores > 3.0;
    return report;
}

} // namespace mdslite
