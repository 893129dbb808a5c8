#include "mdslite/gris.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "mdslite/config.hpp"
#include "mdslite/error.hpp"

namespace mdslite {

// ---------------------------------------------------------------------------
// TTL

CacheTtl CacheTtl::seconds(double s) {
    if (!(s >= 0) || std::isinf(s)) {
        if (std::isinf(s) && s > 0) {
            return infinite();
        }
        throw Error(Errc::MalformedConfig, "cache ttl must be >= 0");
    }
    return CacheTtl(Micros{static_cast<std::int64_t>(std::llround(s * 1e6))}, false);
}

CacheTtl CacheTtl::parse(std::string_view text) {
    if (text == "inf" || text == "infinite" || text == "always") {
        return infinite();
    }
    try {
        std::size_t used = 0;
        double v = std::stod(std::string(text), &used);
        if (used != text.size()) {
            throw std::invalid_argument("trailing");
        }
        return seconds(v);
    } catch (const std::logic_error&) {
        throw Error(Errc::MalformedConfig, "bad cache ttl '" + std::string(text) + "'");
    }
}

bool CacheTtl::fresh(SteadyTime stored_at, SteadyTime now) const {
    if (infinite_) {
        return true;
    }
    return now - stored_at < value_;
}

std::string CacheTtl::str() const {
    if (infinite_) {
        return "inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", to_seconds(value_));
    return buf;
}

// ---------------------------------------------------------------------------
// Providers

std::vector<Entry> generate_entries(const ProviderSpec& spec, WallTime now) {
    static constexpr std::array<const char*, 4> kSpeeds = {"1133", "1208", "756", "2400"};
    std::mt19937_64 rng(spec.seed);
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(spec.entry_count));
    for (int i = 0; i < spec.entry_count; ++i) {
        Entry e{i == 0 ? spec.suffix
                       : spec.suffix.child({"mds-device-name", spec.name + "-" + std::to_string(i)}),
                {}, now};
        if (i == 0) {
            e.attributes["objectclass"] = {"MdsDeviceGroup"};
            e.attributes["mds-device-group-name"] = {spec.name};
        } else {
            e.attributes["objectclass"] = {"MdsCpu"};
            e.attributes["mds-cpu-speed-mhz"] = {kSpeeds[rng() % kSpeeds.size()]};
            e.attributes["mds-cpu-free-1minx100"] = {std::to_string(rng() % 100)};
        }
        const std::size_t base = serialized_size(e);
        // "mds-padding: " + fill + "\n"
        constexpr std::size_t kPadOverhead = 14;
        if (spec.entry_bytes > base + kPadOverhead) {
            std::string fill(spec.entry_bytes - base - kPadOverhead, 'x');
            for (auto& c : fill) {
                c = static_cast<char>('a' + rng() % 26);
            }
            e.attributes["mds-padding"] = {std::move(fill)};
        }
        out.push_back(std::move(e));
    }
    return out;
}

void FifoMutex::lock() {
    std::unique_lock lock(mu_);
    const std::uint64_t ticket = next_ticket_++;
    cv_.wait(lock, [&] { return serving_ == ticket; });
}

void FifoMutex::unlock() {
    std::lock_guard lock(mu_);
    ++serving_;
    cv_.notify_all();
}

std::vector<Entry> InformationProvider::execute(InvocationRecord* record) {
    std::lock_guard guard(exec_mu_);
    const WallTime start = wall_now();
    if (spec_.cost.count() > 0) {
        std::this_thread::sleep_for(spec_.cost);
    }
    ++executions_;
    if (spec_.fail) {
        if (record) {
            *record = {start, wall_now(), false};
        }
        throw Error(Errc::ProviderFailed, spec_.name);
    }
    auto entries = generate_entries(spec_, wall_now());
    if (record) {
        *record = {start, wall_now(), false};
    }
    return entries;
}

std::vector<Entry> InformationProvider::invoke(InvocationRecord* record) {
    if (!coalesce_) {
        return execute(record);
    }
    std::promise<std::vector<Entry>> promise;
    std::shared_future<std::vector<Entry>> flight;
    bool leader = false;
    {
        std::lock_guard lock(flight_mu_);
        if (in_flight_.valid()) {
            flight = in_flight_;
        } else {
            flight = promise.get_future().share();
            in_flight_ = flight;
            leader = true;
        }
    }
    if (!leader) {
        const WallTime start = wall_now();
        auto entries = flight.get();
        if (record) {
            *record = {start, wall_now(), true};
        }
        return entries;
    }
    try {
        auto entries = execute(record);
        promise.set_value(entries);
        std::lock_guard lock(flight_mu_);
        in_flight_ = {};
        return entries;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(flight_mu_);
        in_flight_ = {};
        throw;
    }
}

std::vector<Entry> invoke_provider(InformationProvider& provider, InvocationRecord* record) {
    return provider.invoke(record);
}

// ---------------------------------------------------------------------------
// Cache

RecordPtr RecordCache::lookup(const std::string& owner, SteadyTime now) const {
    RecordPtr rec = peek(owner);
    return rec && rec->fresh(now) ? rec : nullptr;
}

RecordPtr RecordCache::peek(const std::string& owner) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(owner);
    return it == records_.end() ? nullptr : it->second;
}

RecordPtr RecordCache::store(const std::string& owner, std::vector<Entry> entries,
                             const EntryName& suffix, SteadyTime now) {
    auto rec = std::make_shared<CacheRecord>();
    rec->owner = owner;
    rec->index = std::make_shared<const SearchIndex>(build_index(std::move(entries), suffix));
    rec->stored_at = now;
    rec->ttl = ttl_;
    RecordPtr out = rec;
    std::lock_guard lock(mu_);
    records_[owner] = out;
    return out;
}

void RecordCache::erase(const std::string& owner) {
    std::lock_guard lock(mu_);
    records_.erase(owner);
}

std::size_t RecordCache::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

RecordPtr cache_lookup(const RecordCache& cache, const std::string& owner, SteadyTime now) {
    return cache.lookup(owner, now);
}

RecordPtr cache_store(RecordCache& cache, const std::string& owner, std::vector<Entry> entries,
                      const EntryName& suffix, SteadyTime now) {
    return cache.store(owner, std::move(entries), suffix, now);
}

SearchResponse build_result(const std::vector<RecordHits>& hits, const SearchRequest& request) {
    std::vector<const Entry*> merged;
    std::size_t total = 0;
    for (const auto& h : hits) {
        total += h.entries.size();
    }
    merged.reserve(total);
    for (const auto& h : hits) {
        merged.insert(merged.end(), h.entries.begin(), h.entries.end());
    }
    std::stable_sort(merged.begin(), merged.end(), [](const Entry* a, const Entry* b) {
        return a->name.str() < b->name.str();
    });
    // Keep the latest-timestamped entry for each name.
    std::vector<const Entry*> unique;
    unique.reserve(merged.size());
    for (const Entry* e : merged) {
        if (!unique.empty() && unique.back()->name == e->name) {
            if (e->timestamp > unique.back()->timestamp) {
                unique.back() = e;
            }
            continue;
        }
        unique.push_back(e);
    }
    SearchResponse resp;
    resp.count = unique.size();
    if (request.attributes) {
        std::vector<Entry> projected;
        projected.reserve(unique.size());
        for (const Entry* e : unique) {
            projected.push_back(project(*e, request.attributes));
        }
        resp.body = serialize_entries(projected);
    } else {
        resp.body = serialize_entries(unique);
    }
    return resp;
}

// ---------------------------------------------------------------------------
// Config

GrisConfig parse_gris_config(std::string_view text) {
    GrisConfig cfg;
    bool have_suffix = false;
    for (const auto& line : parse_config_lines(text)) {
        try {
            if (line.key == "suffix") {
                cfg.suffix = EntryName::parse(line.value);
                have_suffix = true;
            } else if (line.key == "cache-ttl") {
                cfg.cache_ttl = CacheTtl::parse(line.value);
            } else if (line.key == "provider") {
                // name,<suffix with commas>,cost-ms,entry-count,entry-bytes,seed[,fail]
                std::vector<std::string> parts;
                std::size_t pos = 0;
                while (pos <= line.value.size()) {
                    std::size_t c = line.value.find(',', pos);
                    if (c == std::string::npos) {
                        c = line.value.size();
                    }
                    parts.push_back(line.value.substr(pos, c - pos));
                    pos = c + 1;
                }
                for (auto& p : parts) {
                    while (!p.empty() && p.front() == ' ') {
                        p.erase(p.begin());
                    }
                    while (!p.empty() && p.back() == ' ') {
                        p.pop_back();
                    }
                }
                ProviderSpec spec;
                if (!parts.empty() && parts.back() == "fail") {
                    spec.fail = true;
                    parts.pop_back();
                }
                if (parts.size() < 6) {
                    throw Error(Errc::MalformedConfig, "provider needs 6 fields");
                }
                const std::size_t n = parts.size();
                spec.name = parts[0];
                std::string suffix;
                for (std::size_t i = 1; i + 4 < n; ++i) {
                    if (i > 1) {
                        suffix += ", ";
                    }
                    suffix += parts[i];
                }
                spec.suffix = EntryName::parse(suffix);
                spec.cost = std::chrono::milliseconds(parse_config_uint(line, parts[n - 4]));
                spec.entry_count = static_cast<int>(parse_config_uint(line, parts[n - 3]));
                spec.entry_bytes = parse_config_uint(line, parts[n - 2]);
                spec.seed = parse_config_uint(line, parts[n - 1]);
                cfg.providers.push_back(std::move(spec));
            } else if (line.key == "listen") {
                cfg.listen = net::Address::parse(line.value);
            } else if (line.key == "log") {
                cfg.log_path = line.value;
            } else if (line.key == "register-to") {
                cfg.register_to = net::Address::parse(line.value);
            } else if (line.key == "register-ttl") {
                cfg.register_ttl = std::chrono::seconds(parse_config_uint(line, line.value));
            } else if (line.key == "coalesce") {
                cfg.coalesce = parse_config_bool(line);
            } else {
                throw Error(Errc::MalformedConfig, "unknown key");
            }
        } catch (const Error& e) {
            if (e.code() == Errc::MalformedConfig &&
                std::string_view(e.what()).find("line ") != std::string_view::npos) {
                throw;
            }
            throw Error(Errc::MalformedConfig, "line " + std::to_string(line.line) + ": " + e.what());
        }
    }
    if (!have_suffix) {
        throw Error(Errc::MalformedConfig, "missing suffix=");
    }
    validate(cfg);
    return cfg;
}

GrisConfig load_gris_config(const std::filesystem::path& path) {
    return parse_gris_config(read_text_file(path));
}

void validate(const GrisConfig& cfg) {
    for (std::size_t i = 0; i < cfg.providers.size(); ++i) {
        const auto& p = cfg.providers[i];
        if (p.name.empty() || !is_log_token(p.name)) {
            throw Error(Errc::MalformedConfig, "bad provider name '" + p.name + "'");
        }
        if (!p.suffix.is_under(cfg.suffix)) {
            throw Error(Errc::MalformedConfig, p.name + " suffix outside " + cfg.suffix.str());
        }
        if (p.entry_count < 1 || p.cost.count() < 0) {
            throw Error(Errc::MalformedConfig, p.name + ": entry-count >= 1 and cost >= 0");
        }
        for (std::size_t j = 0; j < i; ++j) {
            const auto& q = cfg.providers[j];
            if (q.name == p.name) {
                throw Error(Errc::MalformedConfig, "duplicate provider " + p.name);
            }
            if (p.suffix.is_under(q.suffix) || q.suffix.is_under(p.suffix)) {
                throw Error(Errc::MalformedConfig, p.name + " and " + q.name + " overlap");
            }
        }
    }
}

GrisConfig paper_shape_gris(const EntryName& suffix, CacheTtl ttl, std::chrono::milliseconds cost,
                            int providers, int entries_per_provider, std::size_t entry_bytes) {
    GrisConfig cfg;
    cfg.suffix = suffix;
    cfg.cache_ttl = ttl;
    for (int i = 0; i < providers; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "ip%02d", i);
        ProviderSpec p;
        p.name = name;
        p.suffix = suffix.child({"mds-device-group-name", name});
        p.cost = cost;
        p.entry_count = entries_per_provider;
        p.entry_bytes = entry_bytes;
        p.seed = 1000 + static_cast<std::uint64_t>(i);
        cfg.providers.push_back(std::move(p));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Service

GrisService::GrisService(const GrisConfig& config) : config_(config), cache_(config.cache_ttl) {
    validate(config_);
    for (const auto& p : config_.providers) {
        providers_.push_back(std::make_unique<InformationProvider>(p, config_.coalesce));
    }
}

void GrisService::warm() {
    for (auto& p : providers_) {
        cache_.store(p->spec().name, p->invoke(), p->spec().suffix, steady_now());
    }
}

std::uint64_t GrisService::provider_executions() const {
    std::uint64_t n = 0;
    for (const auto& p : providers_) {
        n += p->executions();
    }
    return n;
}

SearchResponse GrisService::handle_search(const SearchRequest& request, QueryTrace& trace) {
    // Server-InitSearch: validate and pick the providers the scope touches.
    const EntryName& base = request.base;
    if (!base.is_under(config_.suffix) && !config_.suffix.is_under(base)) {
        throw Error(Errc::NoSuchBase, base.str());
    }
    std::vector<InformationProvider*> relevant;
    bool base_exists = config_.suffix.is_under(base);
    for (auto& p : providers_) {
        const EntryName& ps = p->spec().suffix;
        if (ps.is_under(base) || base.is_under(ps)) {
            base_exists = true;
        }
        if (scope_intersects(ps, base, request.scope)) {
            relevant.push_back(p.get());
        }
    }
    if (request.scope != Scope::Subtree && !base_exists) {
        throw Error(Errc::NoSuchBase, base.str());
    }

    // Server-SearchIndex: answer what the cache holds fresh.
    trace.enter(Phase::ServerSearchIndex);
    std::vector<RecordHits> hits;
    std::vector<InformationProvider*> stale;
    const SteadyTime now = steady_now();
    for (auto* p : relevant) {
        if (RecordPtr rec = cache_.lookup(p->spec().name, now)) {
            hits.push_back({rec, rec->index->search_refs(base, request.scope, request.filter)});
        } else {
            stale.push_back(p);
        }
    }

    // Server-Invoking: refresh stale providers one after another.
    if (stale.empty()) {
        trace.skip(Phase::ServerInvoking);
    } else {
        trace.enter(Phase::ServerInvoking);
    }
    for (auto* p : stale) {
        InvocationRecord inv;
        std::vector<Entry> entries;
        try {
            entries = p->invoke(&inv);
        } catch (const Error& e) {
            trace.marker(inv.start, std::string(kInvokeBeginEvent), {{"PROVIDER", p->spec().name}},
                         "INFO", "provider");
            trace.marker(inv.end, std::string(kInvokeEndEvent), {{"PROVIDER", p->spec().name}},
                         "ERROR", "provider");
            throw Error(Errc::ServerError, std::string("provider failed: ") + e.what());
        }
        std::vector<std::pair<std::string, std::string>> extra{{"PROVIDER", p->spec().name}};
        if (inv.coalesced) {
            extra.emplace_back("COALESCED", "1");
        }
        trace.marker(inv.start, std::string(kInvokeBeginEvent), extra, "INFO", "provider");
        trace.marker(inv.end, std::string(kInvokeEndEvent), extra, "INFO", "provider");
        RecordPtr rec = cache_.store(p->spec().name, std::move(entries), p->spec().suffix,
                                     steady_now());
        hits.push_back({rec, rec->index->search_refs(base, request.scope, request.filter)});
    }

    // Server-GenResult: merge, project, serialize.
    if (!stale.empty()) {
        trace.enter(Phase::ServerGenResult);
    }
    SearchResponse resp = build_result(hits, request);
    trace.finish();
    return resp;
}

// ---------------------------------------------------------------------------
// Registrar

Registrar::Registrar(net::Address directory, net::Address endpoint, EntryName suffix,
                     std::chrono::seconds ttl, EventSink& sink, EventSource source)
    : directory_(std::move(directory)), endpoint_(std::move(endpoint)), suffix_(std::move(suffix)),
      ttl_(ttl), sink_(sink), source_(std::move(source)) {
    thread_ = std::thread([this] { loop(); });
}

Registrar::~Registrar() { stop(); }

void Registrar::stop() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) {
        thread_.join();
    }
}

void Registrar::loop() {
    using namespace std::chrono_literals;
    const auto period = std::max<std::chrono::milliseconds>(
        std::chrono::duration_cast<std::chrono::milliseconds>(ttl_) / 3, 10ms);
    auto next = std::chrono::steady_clock::now();
    std::unique_lock lock(mu_);
    while (!stopping_) {
        lock.unlock();
        LogEvent ev = source_.make(wall_now(), "register", "-");
        ev.extra = {{"DIRECTORY", directory_.str()}, {"ENDPOINT", endpoint_.str()}};
        try {
            send_registration(directory_, endpoint_, suffix_, ttl_, 5s);
            ++renewals_;
        } catch (const Error& e) {
            ev.lvl = "ERROR";
            ev.extra.emplace_back("CLASS", std::string(errc_name(e.code())));
        }
        try {
            sink_.emit(ev);
        } catch (const Error&) {
        }
        next += period;
        lock.lock();
        cv_.wait_until(lock, next, [&] { return stopping_; });
    }
}

// ---------------------------------------------------------------------------
// Server handle

Authenticator GrisServer::default_authenticator() {
    Authenticator a;
    a.add(default_credential());
    return a;
}

std::unique_ptr<GrisServer> GrisServer::start(const GrisConfig& config, EventSink* sink,
                                              Authenticator auth) {
    std::unique_ptr<GrisServer> s(new GrisServer());
    if (sink) {
        s->sink_ = sink;
    } else if (!config.log_path.empty()) {
        s->file_sink_ = std::make_unique<FileSink>(config.log_path);
        s->sink_ = s->file_sink_.get();
    } else {
        s->sink_ = &s->null_sink_;
    }
    s->service_ = std::make_unique<GrisService>(config);
    ServerOptions opts;
    opts.source = {local_host_token(), "gris"};
    s->server_ = Server::start(config.listen, *s->service_, std::move(auth), *s->sink_, opts);
    if (config.register_to) {
        s->registrar_ = std::make_unique<Registrar>(*config.register_to, s->endpoint(),
                                                    config.suffix, config.register_ttl, *s->sink_,
                                                    EventSource{local_host_token(), "gris"});
    }
    return s;
}

GrisServer::~GrisServer() { stop(); }

net::Address GrisServer::endpoint() const {
    net::Address a = server_->address();
    if (a.host.empty() || a.host == "0.0.0.0") {
        a.host = "127.0.0.1";
    }
    return a;
}

void GrisServer::stop() {
    if (registrar_) {
        registrar_->stop();
    }
    if (server_) {
        server_->stop();
    }
    if (sink_) {
        sink_->flush();
    }
}

std::unique_ptr<GrisServer> run_gris(const GrisConfig& config, EventSink* sink) {
    return GrisServer::start(config, sink);
}

} // namespace mdslite
