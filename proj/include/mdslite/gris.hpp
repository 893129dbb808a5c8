#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mdslite/directory.hpp"
#include "mdslite/net.hpp"
#include "mdslite/telemetry.hpp"
#include "mdslite/wire.hpp"

namespace mdslite {

// Cache element time-to-live. Zero is never fresh; infinite is always fresh
// once filled.
class CacheTtl {
public:
    static CacheTtl zero() { return CacheTtl(Micros{0}, false); }
    static CacheTtl infinite() { return CacheTtl(Micros{0}, true); }
    static CacheTtl seconds(double s);
    // "inf", "0", or a non-negative number of seconds.
    static CacheTtl parse(std::string_view text);

    bool is_infinite() const { return infinite_; }
    Micros value() const { return value_; }
    bool fresh(SteadyTime stored_at, SteadyTime now) const;
    std::string str() const;

    bool operator==(const CacheTtl&) const = default;

private:
    CacheTtl(Micros v, bool inf) : value_(v), infinite_(inf) {}
    Micros value_;
    bool infinite_;
};

struct ProviderSpec {
    std::string name;
    EntryName suffix = EntryName::parse("mds-vo-name=local");
    std::chrono::milliseconds cost{0};
    int entry_count = 1;
    std::size_t entry_bytes = 200;
    std::uint64_t seed = 0;
    // Fault injection: every invocation throws ProviderFailed.
    bool fail = false;
};

// Deterministic entries for `spec` stamped with `now`. The first entry is
// the provider's suffix node; the rest are its children.
std::vector<Entry> generate_entries(const ProviderSpec& spec, WallTime now);

// Strict first-come-first-served mutex.
class FifoMutex {
public:
    void lock();
    void unlock();

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
};

struct InvocationRecord {
    WallTime start{};
    WallTime end{};
    bool coalesced = false;
};

// One information provider. Executions of the same provider never overlap:
// concurrent callers queue in arrival order.
class InformationProvider {
public:
    explicit InformationProvider(ProviderSpec spec, bool coalesce = false)
        : spec_(std::move(spec)), coalesce_(coalesce) {}

    const ProviderSpec& spec() const { return spec_; }

    // Waits for exclusive access, spends spec.cost, then generates entries.
    // With coalescing on, a caller that arrives while an execution is in
    // flight shares its result instead of queueing a new one.
    std::vector<Entry> invoke(InvocationRecord* record = nullptr);

    std::uint64_t executions() const { return executions_.load(); }

private:
    std::vector<Entry> execute(InvocationRecord* record);

    ProviderSpec spec_;
    bool coalesce_;
    FifoMutex exec_mu_;
    std::mutex flight_mu_;
    std::shared_future<std::vector<Entry>> in_flight_;
    std::atomic<std::uint64_t> executions_{0};
};

std::vector<Entry> invoke_provider(InformationProvider& provider,
                                   InvocationRecord* record = nullptr);

// Entry set for one provider (or one registered member) together with its
// search index.
struct CacheRecord {
    std::string owner;
    std::shared_ptr<const SearchIndex> index;
    SteadyTime stored_at{};
    CacheTtl ttl = CacheTtl::zero();

    const std::vector<Entry>& entries() const { return index->entries(); }
    bool fresh(SteadyTime now) const { return ttl.fresh(stored_at, now); }
};

using RecordPtr = std::shared_ptr<const CacheRecord>;

// Per-owner records, replaced atomically as a whole.
class RecordCache {
public:
    explicit RecordCache(CacheTtl ttl) : ttl_(ttl) {}

    CacheTtl ttl() const { return ttl_; }

    // The record if it is fresh at `now`, else nullptr (the stale marker).
    RecordPtr lookup(const std::string& owner, SteadyTime now) const;
    // The record regardless of freshness.
    RecordPtr peek(const std::string& owner) const;
    RecordPtr store(const std::string& owner, std::vector<Entry> entries, const EntryName& suffix,
                    SteadyTime now);
    void erase(const std::string& owner);
    std::size_t size() const;

private:
    CacheTtl ttl_;
    mutable std::mutex mu_;
    std::map<std::string, RecordPtr> records_;
};

RecordPtr cache_lookup(const RecordCache& cache, const std::string& owner, SteadyTime now);
RecordPtr cache_store(RecordCache& cache, const std::string& owner, std::vector<Entry> entries,
                      const EntryName& suffix, SteadyTime now);

// Matches found in one record; the record pointer keeps them alive.
struct RecordHits {
    RecordPtr record;
    std::vector<const Entry*> entries;
};

// Merges hits across records (a duplicated name keeps the entry with the
// latest timestamp), orders by name, projects and serializes.
SearchResponse build_result(const std::vector<RecordHits>& hits, const SearchRequest& request);

struct GrisConfig {
    EntryName suffix = EntryName::parse("mds-vo-name=local");
    std::vector<ProviderSpec> providers;
    CacheTtl cache_ttl = CacheTtl::infinite();
    net::Address listen{"127.0.0.1", 0};
    std::filesystem::path log_path;
    bool coalesce = false;
    std::optional<net::Address> register_to;
    std::chrono::seconds register_ttl{30};
};

// Line-oriented "key=value" config. Keys: suffix, cache-ttl, provider
// (name,suffix,cost-ms,entry-count,entry-bytes,seed[,fail]), listen, log,
// register-to, register-ttl, coalesce.
GrisConfig parse_gris_config(std::string_view text);
GrisConfig load_gris_config(const std::filesystem::path& path);
void validate(const GrisConfig& config);

// Ten providers under `suffix`, each owning one device group, sized so the
// full-tree answer stays under 10 KB.
GrisConfig paper_shape_gris(const EntryName& suffix, CacheTtl ttl,
                            std::chrono::milliseconds cost = std::chrono::milliseconds(50),
                            int providers = 10, int entries_per_provider = 4,
                            std::size_t entry_bytes = 230);

inline constexpr std::string_view kInvokeBeginEvent = "provider-invoke-begin";
inline constexpr std::string_view kInvokeEndEvent = "provider-invoke-done";

class GrisService final : public SearchService {
public:
    explicit GrisService(const GrisConfig& config);

    SearchResponse handle_search(const SearchRequest& request, QueryTrace& trace) override;

    const GrisConfig& config() const { return config_; }
    RecordCache& cache() { return cache_; }

    // Fills every provider's record once (used to pre-warm cached servers).
    void warm();

    std::uint64_t provider_executions() const;

private:
    GrisConfig config_;
    RecordCache cache_;
    std::vector<std::unique_ptr<InformationProvider>> providers_;
};

// Periodically sends REGISTER for (endpoint, suffix) to a directory server,
// every ttl/3, starting immediately.
class Registrar {
public:
    Registrar(net::Address directory, net::Address endpoint, EntryName suffix,
              std::chrono::seconds ttl, EventSink& sink, EventSource source);
    ~Registrar();
    void stop();

    std::uint64_t renewals() const { return renewals_.load(); }

private:
    void loop();

    net::Address directory_;
    net::Address endpoint_;
    EntryName suffix_;
    std::chrono::seconds ttl_;
    EventSink& sink_;
    EventSource source_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stopping_ = false;
    std::atomic<std::uint64_t> renewals_{0};
    std::thread thread_;
};

// A running GRIS: service + wire server + optional registrar.
class GrisServer {
public:
    // Logs to `sink` when given, otherwise to config.log_path (or nowhere).
    static std::unique_ptr<GrisServer> start(const GrisConfig& config, EventSink* sink = nullptr,
                                             Authenticator auth = default_authenticator());
    ~GrisServer();

    const net::Address& address() const { return server_->address(); }
    // Address advertised to directories (0.0.0.0 becomes 127.0.0.1).
    net::Address endpoint() const;
    GrisService& service() { return *service_; }
    EventSink& sink() { return *sink_; }
    void stop();

    static Authenticator default_authenticator();

private:
    GrisServer() = default;

    std::unique_ptr<FileSink> file_sink_;
    NullSink null_sink_;
    EventSink* sink_ = nullptr;
    std::unique_ptr<GrisService> service_;
    std::unique_ptr<Server> server_;
    std::unique_ptr<Registrar> registrar_;
};

std::unique_ptr<GrisServer> run_gris(const GrisConfig& config, EventSink* sink = nullptr);

} // namespace mdslite
