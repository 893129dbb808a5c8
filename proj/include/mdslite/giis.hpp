#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mdslite/directory.hpp"
#include "mdslite/gris.hpp"
#include "mdslite/net.hpp"
#include "mdslite/telemetry.hpp"
#include "mdslite/wire.hpp"

namespace mdslite {

struct Registration {
    net::Address endpoint;
    EntryName suffix;
    Micros ttl{0};
    SteadyTime last_renewal{};

    bool live(SteadyTime now) const { return now - last_renewal < ttl; }
    // Cache owner key: one record per (endpoint, suffix).
    std::string key() const { return endpoint.str() + "|" + suffix.str(); }
};

// Soft-state membership. Renewals and sweeps may race; the last writer of
// last_renewal wins.
class RegistrationTable {
public:
    explicit RegistrationTable(EntryName suffix) : suffix_(std::move(suffix)) {}

    // Creates or renews. Returns true when the registration is new.
    // Throws MalformedRegistration for ttl <= 0 or a suffix outside ours.
    bool renew(const net::Address& endpoint, const EntryName& suffix, Micros ttl, SteadyTime now);
    // Removes every registration with now - last_renewal >= ttl.
    std::vector<Registration> sweep(SteadyTime now);
    std::vector<Registration> live(SteadyTime now) const;
    std::vector<Registration> all() const;
    std::size_t size() const;

private:
    EntryName suffix_;
    mutable std::mutex mu_;
    std::map<std::string, Registration> regs_;
};

struct GiisConfig {
    EntryName suffix = EntryName::parse("mds-vo-name=local");
    CacheTtl cache_ttl = CacheTtl::seconds(900);
    std::chrono::milliseconds sweep_interval{5000};
    net::Address listen{"127.0.0.1", 0};
    std::filesystem::path log_path;
    Credential client_credential = default_credential();
    net::Timeout consult_timeout = std::chrono::seconds(30);
    // Optional upward registration (GIIS under another GIIS).
    std::optional<net::Address> register_to;
    std::chrono::seconds register_ttl{30};
};

// Keys: suffix, cache-ttl, sweep-interval (seconds), listen, log,
// register-to, register-ttl.
GiisConfig parse_giis_config(std::string_view text);
GiisConfig load_giis_config(const std::filesystem::path& path);

inline constexpr std::string_view kConsultBeginEvent = "gris-consult-begin";
inline constexpr std::string_view kConsultDoneEvent = "gris-consult-done";
inline constexpr std::string_view kRegistrationAddedEvent = "registration-added";
inline constexpr std::string_view kRegistrationExpiredEvent = "registration-expired";

class GiisService final : public SearchService {
public:
    GiisService(const GiisConfig& config, EventSink& sink, EventSource source);

    SearchResponse handle_search(const SearchRequest& request, QueryTrace& trace) override;
    Message handle_register(const Message& message) override;

    // Records for the given stale registrations, consulting each member at
    // most once. Members that fail contribute their stale record if one
    // exists, otherwise nothing.
    std::vector<RecordPtr> aggregate_refresh(const std::vector<Registration>& stale,
                                             QueryTrace* trace);

    std::vector<Registration> sweep(SteadyTime now);

    const GiisConfig& config() const { return config_; }
    RegistrationTable& registrations() { return table_; }
    RecordCache& cache() { return cache_; }
    std::uint64_t outbound_queries() const { return outbound_.load(); }

private:
    std::mutex& member_mutex(const std::string& key);
    RecordPtr consult(const Registration& reg, QueryTrace* trace);

    GiisConfig config_;
    EventSink& sink_;
    EventSource source_;
    RegistrationTable table_;
    RecordCache cache_;
    std::mutex members_mu_;
    std::map<std::string, std::unique_ptr<std::mutex>> member_mu_;
    std::atomic<std::uint64_t> outbound_{0};
    std::atomic<std::uint64_t> consult_seq_{0};
};

struct SweepRecord {
    WallTime at{};
    Registration registration;
};

class GiisServer {
public:
    static std::unique_ptr<GiisServer> start(const GiisConfig& config, EventSink* sink = nullptr,
                                             Authenticator auth = GrisServer::default_authenticator());
    ~GiisServer();

    const net::Address& address() const { return server_->address(); }
    net::Address endpoint() const;
    GiisService& service() { return *service_; }
    EventSink& sink() { return *sink_; }
    std::vector<SweepRecord> swept() const;
    void stop();

private:
    GiisServer() = default;
    void sweep_loop();

    GiisConfig config_;
    std::unique_ptr<FileSink> file_sink_;
    NullSink null_sink_;
    EventSink* sink_ = nullptr;
    std::unique_ptr<GiisService> service_;
    std::unique_ptr<Server> server_;
    std::unique_ptr<Registrar> registrar_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    bool stopping_ = false;
    std::vector<SweepRecord> swept_;
    std::thread sweeper_;
};

std::unique_ptr<GiisServer> run_giis(const GiisConfig& config, EventSink* sink = nullptr);

} // namespace mdslite
