#include "mdslite/giis.hpp"

#include <cmath>
#include <future>

#include "mdslite/config.hpp"
#include "mdslite/error.hpp"

namespace mdslite {

// ---------------------------------------------------------------------------
// Registration table

bool RegistrationTable::renew(const net::Address& endpoint, const EntryName& suffix, Micros ttl,
                              SteadyTime now) {
    if (ttl.count() <= 0) {
        throw Error(Errc::MalformedRegistration, "ttl must be positive");
    }
    if (!suffix.is_under(suffix_)) {
        throw Error(Errc::MalformedRegistration, suffix.str() + " is outside " + suffix_.str());
    }
    Registration r{endpoint, suffix, ttl, now};
    std::lock_guard lock(mu_);
    auto [it, added] = regs_.insert_or_assign(r.key(), r);
    return added;
}

std::vector<Registration> RegistrationTable::sweep(SteadyTime now) {
    std::vector<Registration> removed;
    std::lock_guard lock(mu_);
    for (auto it = regs_.begin(); it != regs_.end();) {
        if (!it->second.live(now)) {
            removed.push_back(it->second);
            it = regs_.erase(it);
        } else {
            ++it;
        }
    }
    return removed;
}

std::vector<Registration> RegistrationTable::live(SteadyTime now) const {
    std::vector<Registration> out;
    std::lock_guard lock(mu_);
    for (const auto& [key, r] : regs_) {
        if (r.live(now)) {
            out.push_back(r);
        }
    }
    return out;
}

std::vector<Registration> RegistrationTable::all() const {
    std::vector<Registration> out;
    std::lock_guard lock(mu_);
    for (const auto& [key, r] : regs_) {
        out.push_back(r);
    }
    return out;
}

std::size_t RegistrationTable::size() const {
    std::lock_guard lock(mu_);
    return regs_.size();
}

// ---------------------------------------------------------------------------
// Config

GiisConfig parse_giis_config(std::string_view text) {
    GiisConfig cfg;
    bool have_suffix = false;
    for (const auto& line : parse_config_lines(text)) {
        try {
            if (line.key == "suffix") {
                cfg.suffix = EntryName::parse(line.value);
                have_suffix = true;
            } else if (line.key == "cache-ttl") {
                cfg.cache_ttl = CacheTtl::parse(line.value);
            } else if (line.key == "sweep-interval") {
                const double s = parse_config_number(line);
                if (!(s > 0)) {
                    throw Error(Errc::MalformedConfig, "sweep-interval must be > 0");
                }
                cfg.sweep_interval = std::chrono::milliseconds(std::llround(s * 1000));
            } else if (line.key == "listen") {
                cfg.listen = net::Address::parse(line.value);
            } else if (line.key == "log") {
                cfg.log_path = line.value;
            } else if (line.key == "register-to") {
                cfg.register_to = net::Address::parse(line.value);
            } else if (line.key == "register-ttl") {
                cfg.register_ttl = std::chrono::seconds(parse_config_uint(line, line.value));
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
    return cfg;
}

GiisConfig load_giis_config(const std::filesystem::path& path) {
    return parse_giis_config(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Service

GiisService::GiisService(const GiisConfig& config, EventSink& sink, EventSource source)
    : config_(config), sink_(sink), source_(std::move(source)), table_(config.suffix),
      cache_(config.cache_ttl) {
    if (config_.sweep_interval.count() <= 0) {
        throw Error(Errc::MalformedConfig, "sweep-interval must be > 0");
    }
}

Message GiisService::handle_register(const Message& message) {
    try {
        const net::Address endpoint = net::Address::parse(message.require("endpoint"));
        const EntryName suffix = EntryName::parse(message.require("suffix"));
        const std::string& ttl_text = message.require("ttl-seconds");
        long long ttl = 0;
        try {
            std::size_t used = 0;
            ttl = std::stoll(ttl_text, &used);
            if (used != ttl_text.size()) {
                ttl = 0;
            }
        } catch (const std::logic_error&) {
            ttl = 0;
        }
        const bool added = table_.renew(endpoint, suffix,
                                        std::chrono::duration_cast<Micros>(std::chrono::seconds(ttl)),
                                        steady_now());
        if (added) {
            LogEvent ev = source_.make(wall_now(), std::string(kRegistrationAddedEvent), "-");
            ev.extra = {{"ENDPOINT", endpoint.str()}, {"TTL", std::to_string(ttl)}};
            try {
                sink_.emit(ev);
                sink_.flush();
            } catch (const Error&) {
            }
        }
        return make_message(MessageType::RegisterOk);
    } catch (const Error& e) {
        const Errc code = e.code() == Errc::MalformedRegistration ? e.code()
                                                                  : Errc::MalformedRegistration;
        return make_error(code, e.what());
    }
}

std::vector<Registration> GiisService::sweep(SteadyTime now) {
    auto removed = table_.sweep(now);
    for (const auto& r : removed) {
        cache_.erase(r.key());
        LogEvent ev = source_.make(wall_now(), std::string(kRegistrationExpiredEvent), "-");
        ev.extra = {{"ENDPOINT", r.endpoint.str()}};
        try {
            sink_.emit(ev);
        } catch (const Error&) {
        }
    }
    if (!removed.empty()) {
        sink_.flush();
    }
    return removed;
}

std::mutex& GiisService::member_mutex(const std::string& key) {
    std::lock_guard lock(members_mu_);
    auto& slot = member_mu_[key];
    if (!slot) {
        slot = std::make_unique<std::mutex>();
    }
    return *slot;
}

RecordPtr GiisService::consult(const Registration& reg, QueryTrace* trace) {
    const std::string key = reg.key();
    std::lock_guard member(member_mutex(key));
    // Another query may have refreshed this member while we waited.
    if (RecordPtr rec = cache_.lookup(key, steady_now())) {
        return rec;
    }
    SearchRequest req{reg.suffix, Scope::Subtree, Filter::presence("objectclass"), std::nullopt,
                      "giis-" + std::to_string(++consult_seq_)};
    ClientOptions opts;
    opts.source = source_;
    opts.timeout = config_.consult_timeout;
    const std::vector<std::pair<std::string, std::string>> tag{{"ENDPOINT", reg.endpoint.str()},
                                                               {"CONSULT", req.query_id}};
    const WallTime begin = wall_now();
    ++outbound_;
    NullSink quiet;
    try {
        ClientQueryResult res = client_query(reg.endpoint, config_.client_credential, req, quiet, opts);
        if (trace) {
            trace->marker(begin, std::string(kConsultBeginEvent), tag);
            trace->marker(wall_now(), std::string(kConsultDoneEvent), tag);
        }
        // The member may have been swept while we were talking to it.
        bool still_registered = false;
        for (const auto& r : table_.all()) {
            still_registered = still_registered || r.key() == key;
        }
        std::vector<Entry> entries;
        entries.reserve(res.entries.size());
        for (auto& e : res.entries) {
            if (e.name.is_under(reg.suffix)) {
                entries.push_back(std::move(e));
            }
        }
        if (!still_registered) {
            auto rec = std::make_shared<CacheRecord>();
            rec->owner = key;
            rec->index = std::make_shared<const SearchIndex>(build_index(std::move(entries), reg.suffix));
            rec->stored_at = steady_now();
            rec->ttl = cache_.ttl();
            return rec;
        }
        return cache_.store(key, std::move(entries), reg.suffix, steady_now());
    } catch (const Error& e) {
        if (trace) {
            auto failed = tag;
            failed.emplace_back("CLASS", std::string(errc_name(e.code())));
            trace->marker(begin, std::string(kConsultBeginEvent), tag);
            trace->marker(wall_now(), std::string(kConsultDoneEvent), failed, "ERROR");
        }
        return cache_.peek(key);
    }
}

std::vector<RecordPtr> GiisService::aggregate_refresh(const std::vector<Registration>& stale,
                                                      QueryTrace* trace) {
    std::vector<std::future<RecordPtr>> pending;
    pending.reserve(stale.size());
    for (const auto& reg : stale) {
        pending.push_back(std::async(std::launch::async, [this, reg, trace] {
            return consult(reg, trace);
        }));
    }
    std::vector<RecordPtr> out;
    for (auto& f : pending) {
        if (RecordPtr rec = f.get()) {
            out.push_back(std::move(rec));
        }
    }
    return out;
}

SearchResponse GiisService::handle_search(const SearchRequest& request, QueryTrace& trace) {
    // Server-InitSearch
    const EntryName& base = request.base;
    if (!base.is_under(config_.suffix) && !config_.suffix.is_under(base)) {
        throw Error(Errc::NoSuchBase, base.str());
    }
    const SteadyTime start = steady_now();
    bool base_exists = config_.suffix.is_under(base);
    std::vector<Registration> relevant;
    for (auto& reg : table_.live(start)) {
        if (reg.suffix.is_under(base) || base.is_under(reg.suffix)) {
            base_exists = true;
        }
        if (scope_intersects(reg.suffix, base, request.scope)) {
            relevant.push_back(std::move(reg));
        }
    }
    if (request.scope != Scope::Subtree && !base_exists) {
        throw Error(Errc::NoSuchBase, base.str());
    }

    // Server-SearchIndex
    trace.enter(Phase::ServerSearchIndex);
    std::vector<RecordHits> hits;
    std::vector<Registration> stale;
    const SteadyTime now = steady_now();
    for (auto& reg : relevant) {
        if (RecordPtr rec = cache_.lookup(reg.key(), now)) {
            hits.push_back({rec, rec->index->search_refs(base, request.scope, request.filter)});
        } else {
            stale.push_back(std::move(reg));
        }
    }

    // Server-Invoking
    if (stale.empty()) {
        trace.skip(Phase::ServerInvoking);
    } else {
        trace.enter(Phase::ServerInvoking);
        for (RecordPtr& rec : aggregate_refresh(stale, &trace)) {
            hits.push_back({rec, rec->index->search_refs(base, request.scope, request.filter)});
        }
        trace.enter(Phase::ServerGenResult);
    }

    // Server-GenResult
    SearchResponse resp = build_result(hits, request);
    trace.finish();
    return resp;
}

// ---------------------------------------------------------------------------
// Server handle

std::unique_ptr<GiisServer> GiisServer::start(const GiisConfig& config, EventSink* sink,
                                              Authenticator auth) {
    std::unique_ptr<GiisServer> s(new GiisServer());
    s->config_ = config;
    if (sink) {
        s->sink_ = sink;
    } else if (!config.log_path.empty()) {
        s->file_sink_ = std::make_unique<FileSink>(config.log_path);
        s->sink_ = s->file_sink_.get();
    } else {
        s->sink_ = &s->null_sink_;
    }
    EventSource source{local_host_token(), "giis"};
    s->service_ = std::make_unique<GiisService>(config, *s->sink_, source);
    ServerOptions opts;
    opts.source = source;
    s->server_ = Server::start(config.listen, *s->service_, std::move(auth), *s->sink_, opts);
    s->sweeper_ = std::thread([raw = s.get()] { raw->sweep_loop(); });
    if (config.register_to) {
        s->registrar_ = std::make_unique<Registrar>(*config.register_to, s->endpoint(), config.suffix,
                                                    config.register_ttl, *s->sink_, source);
    }
    return s;
}

GiisServer::~GiisServer() { stop(); }

net::Address GiisServer::endpoint() const {
    net::Address a = server_->address();
    if (a.host.empty() || a.host == "0.0.0.0") {
        a.host = "127.0.0.1";
    }
    return a;
}

void GiisServer::sweep_loop() {
    auto next = std::chrono::steady_clock::now() + config_.sweep_interval;
    std::unique_lock lock(mu_);
    while (true) {
        if (cv_.wait_until(lock, next, [&] { return stopping_; })) {
            return;
        }
        lock.unlock();
        auto removed = service_->sweep(steady_now());
        const WallTime at = wall_now();
        lock.lock();
        for (auto& r : removed) {
            swept_.push_back({at, std::move(r)});
        }
        next += config_.sweep_interval;
    }
}

std::vector<SweepRecord> GiisServer::swept() const {
    std::lock_guard lock(mu_);
    return swept_;
}

void GiisServer::stop() {
    if (registrar_) {
        registrar_->stop();
    }
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (sweeper_.joinable()) {
        sweeper_.join();
    }
    if (server_) {
        server_->stop();
    }
    if (sink_) {
        sink_->flush();
    }
}

std::unique_ptr<GiisServer> run_giis(const GiisConfig& config, EventSink* sink) {
    return GiisServer::start(config, sink);
}

} // namespace mdslite
