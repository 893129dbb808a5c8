#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "mdslite/directory.hpp"
#include "mdslite/error.hpp"
#include "mdslite/net.hpp"
#include "mdslite/telemetry.hpp"

namespace mdslite {

inline constexpr std::size_t kMaxFramePayload = 16u * 1024u * 1024u;
inline constexpr std::string_view kProtocolTag = "MDSLITE/1";

// On the wire: 4-byte big-endian length, then exactly that many payload bytes.
struct Frame {
    std::string payload;

    bool operator==(const Frame&) const = default;
};

std::string encode_frame(const Frame& frame);
Frame decode_frame(std::string_view bytes);

enum class MessageType {
    Bind,
    BindOk,
    BindErr,
    Search,
    Result,
    Register,
    RegisterOk,
    Error,
    Unbind,
    Unknown,
};

std::string_view message_type_token(MessageType t);
MessageType message_type_from_token(std::string_view token);

using Headers = std::vector<std::pair<std::string, std::string>>;

// "MDSLITE/1 <TYPE>\n", "key: value\n" lines, a blank line, then the body.
// The type is kept as its token so that unknown types survive a decode.
struct Message {
    std::string type;
    Headers headers;
    std::string body;

    MessageType kind() const { return message_type_from_token(type); }
    const std::string* header(std::string_view key) const;
    // Throws MalformedMessage if absent.
    const std::string& require(std::string_view key) const;

    bool operator==(const Message&) const = default;
};

Message make_message(MessageType type, Headers headers = {}, std::string body = {});

std::string encode_message(const Message& message);
Message decode_message(std::string_view payload);

Frame encode(const Message& message);
Message decode(const Frame& frame);

struct Credential {
    std::string identity;
    std::string secret;
};

// Shared-secret bind check.
class Authenticator {
public:
    Authenticator() = default;
    explicit Authenticator(std::map<std::string, std::string> accounts)
        : accounts_(std::move(accounts)) {}

    void add(const Credential& c) { accounts_[c.identity] = c.secret; }
    bool check(const Credential& c) const;

private:
    std::map<std::string, std::string> accounts_;
};

Credential default_credential();

Message make_search(const SearchRequest& request);
SearchRequest parse_search(const Message& message);
Message make_result(const std::string& qid, std::size_t count, std::string body);
Message make_error(Errc code, const std::string& text);

// Frame I/O over a socket. read_frame throws Oversize, Timeout, ProtocolError.
void write_frame(net::Socket& sock, const Message& message, net::Timeout timeout);
Message read_frame(net::Socket& sock, net::Timeout timeout);

// ---------------------------------------------------------------------------
// Server side

// Records the four contiguous server phases of one query plus free-form
// markers. Events are only emitted once the response is on the wire, so
// logging never lands inside a measured phase.
class QueryTrace {
public:
    QueryTrace(std::string qid, WallTime init_start);

    const std::string& qid() const { return qid_; }

    // Ends the current phase and starts `next` at the same instant. Phases
    // must be entered in server order.
    WallTime enter(Phase next);
    // Records `empty` as a zero-length phase and enters the phase after it,
    // all at one instant.
    WallTime skip(Phase empty);
    WallTime finish();
    bool finished() const { return finished_; }

    void marker(WallTime ts, std::string evnt,
                std::vector<std::pair<std::string, std::string>> extra = {},
                std::string lvl = "INFO", std::string prog = {});

    std::vector<LogEvent> events(const EventSource& source) const;

private:
    std::string qid_;
    std::size_t current_ = 0;  // index into kServerPhases
    std::array<Interval, 4> intervals_{};
    bool finished_ = false;
    mutable std::mutex mu_;
    std::vector<LogEvent> markers_;
};

struct SearchResponse {
    std::string body;
    std::size_t count = 0;
};

class SearchService {
public:
    virtual ~SearchService() = default;
    // Must move the trace through all four server phases before returning.
    virtual SearchResponse handle_search(const SearchRequest& request, QueryTrace& trace) = 0;
    // Default answers ERROR: the service does not accept registrations.
    virtual Message handle_register(const Message& message);
};

struct ServerOptions {
    EventSource source{local_host_token(), "gris"};
    net::Timeout io_timeout = std::chrono::seconds(300);
    net::Timeout idle_timeout = std::chrono::seconds(300);
};

class Server {
public:
    // Throws AddressInUse.
    static std::unique_ptr<Server> start(const net::Address& listen, SearchService& service,
                                         Authenticator auth, EventSink& sink,
                                         ServerOptions options = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    const net::Address& address() const { return address_; }

    // Stops accepting and waits for in-flight requests to finish.
    void stop();

    std::uint64_t connections_accepted() const { return accepted_.load(); }
    std::uint64_t searches_served() const;

private:
    struct Shared;

    Server() = default;
    void accept_loop();
    static void serve_connection(std::shared_ptr<Shared> shared, net::Socket sock);

    net::Listener listener_;
    net::Address address_;
    std::shared_ptr<Shared> shared_;
    std::thread acceptor_;
    std::atomic<std::uint64_t> accepted_{0};
    bool stopped_ = false;
};

std::unique_ptr<Server> serve(const net::Address& listen, SearchService& service,
                              Authenticator auth, EventSink& sink, ServerOptions options = {});

// ---------------------------------------------------------------------------
// Client side

struct ClientOptions {
    EventSource source{local_host_token(), "bench"};
    net::Timeout timeout = std::chrono::seconds(300);
};

struct ClientHalf {
    Interval connect;
    Interval bind;
    Interval end_connect;

    Micros ort() const { return end_connect.end - connect.start; }
};

struct ClientQueryResult {
    std::vector<Entry> entries;
    ClientHalf phases;
    std::size_t response_bytes = 0;
};

// connect -> BIND -> SEARCH -> RESULT -> disconnect, one connection per call.
// Emits the three client phases (and a query-error marker on failure) to
// `sink` after the connection is closed. Throws ConnectFailed, BindRejected,
// ProtocolError, ServerError or Timeout.
ClientQueryResult client_query(const net::Address& endpoint, const Credential& credential,
                               const SearchRequest& request, EventSink& sink,
                               const ClientOptions& options = {});

// Sends one REGISTER and waits for REGISTER-OK.
void send_registration(const net::Address& directory, const net::Address& endpoint,
                       const EntryName& suffix, std::chrono::seconds ttl, net::Timeout timeout);

inline constexpr std::string_view kQueryErrorEvent = "query-error";

} // namespace mdslite
