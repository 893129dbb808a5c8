#include "mdslite/wire.hpp"

#include <algorithm>
#include <array>

#include "mdslite/error.hpp"

namespace mdslite {

namespace {

constexpr std::array<std::pair<MessageType, std::string_view>, 9> kTypeTokens = {{
    {MessageType::Bind, "BIND"},
    {MessageType::BindOk, "BIND-OK"},
    {MessageType::BindErr, "BIND-ERR"},
    {MessageType::Search, "SEARCH"},
    {MessageType::Result, "RESULT"},
    {MessageType::Register, "REGISTER"},
    {MessageType::RegisterOk, "REGISTER-OK"},
    {MessageType::Error, "ERROR"},
    {MessageType::Unbind, "UNBIND"},
}};

bool is_type_token(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    });
}

bool is_header_key(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return static_cast<unsigned char>(c) > 0x20 && c != ':' && c != 0x7f;
    });
}

bool is_header_value(std::string_view s) {
    return s.find('\n') == std::string_view::npos && s.find('\r') == std::string_view::npos;
}

std::uint32_t read_be32(const char* p) {
    auto b = reinterpret_cast<const unsigned char*>(p);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

std::size_t parse_count(const std::string& text) {
    std::size_t v = 0;
    if (text.empty() || text.size() > 12 ||
        !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw Error(Errc::ProtocolError, "bad count header '" + text + "'");
    }
    for (char c : text) {
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// Frames and messages

std::string encode_frame(const Frame& frame) {
    if (frame.payload.size() > kMaxFramePayload) {
        throw Error(Errc::Oversize, std::to_string(frame.payload.size()) + " bytes");
    }
    std::string out;
    out.reserve(frame.payload.size() + 4);
    put_be32(out, static_cast<std::uint32_t>(frame.payload.size()));
    out += frame.payload;
    return out;
}

Frame decode_frame(std::string_view bytes) {
    if (bytes.size() < 4) {
        throw Error(Errc::MalformedFrame, "short frame header");
    }
    const std::uint32_t len = read_be32(bytes.data());
    if (len > kMaxFramePayload) {
        throw Error(Errc::Oversize, std::to_string(len) + " bytes declared");
    }
    if (len != bytes.size() - 4) {
        throw Error(Errc::MalformedFrame, "declared " + std::to_string(len) + " bytes, got " +
                                              std::to_string(bytes.size() - 4));
    }
    return Frame{std::string(bytes.substr(4))};
}

std::string_view message_type_token(MessageType t) {
    for (const auto& [type, token] : kTypeTokens) {
        if (type == t) {
            return token;
        }
    }
    return "UNKNOWN";
}

MessageType message_type_from_token(std::string_view token) {
    for (const auto& [type, tok] : kTypeTokens) {
        if (tok == token) {
            return type;
        }
    }
    return MessageType::Unknown;
}

const std::string* Message::header(std::string_view key) const {
    for (const auto& [k, v] : headers) {
        if (k == key) {
            return &v;
        }
    }
    return nullptr;
}

const std::string& Message::require(std::string_view key) const {
    if (const auto* v = header(key)) {
        return *v;
    }
    throw Error(Errc::MalformedMessage, type + " without '" + std::string(key) + "' header");
}

Message make_message(MessageType type, Headers headers, std::string body) {
    return Message{std::string(message_type_token(type)), std::move(headers), std::move(body)};
}

std::string encode_message(const Message& m) {
    if (!is_type_token(m.type)) {
        throw Error(Errc::MalformedMessage, "bad type token '" + m.type + "'");
    }
    std::string out;
    out.reserve(64 + m.body.size());
    out += kProtocolTag;
    out += ' ';
    out += m.type;
    out += '\n';
    for (const auto& [k, v] : m.headers) {
        if (!is_header_key(k) || !is_header_value(v)) {
            throw Error(Errc::MalformedMessage, "bad header '" + k + "'");
        }
        out += k;
        out += ": ";
        out += v;
        out += '\n';
    }
    out += '\n';
    out += m.body;
    return out;
}

Message decode_message(std::string_view payload) {
    Message m;
    std::size_t nl = payload.find('\n');
    if (nl == std::string_view::npos) {
        throw Error(Errc::MalformedMessage, "missing protocol line");
    }
    std::string_view first = payload.substr(0, nl);
    if (first.size() <= kProtocolTag.size() + 1 ||
        first.substr(0, kProtocolTag.size()) != kProtocolTag ||
        first[kProtocolTag.size()] != ' ') {
        throw Error(Errc::MalformedMessage, "bad protocol line");
    }
    m.type = std::string(first.substr(kProtocolTag.size() + 1));
    if (!is_type_token(m.type)) {
        throw Error(Errc::MalformedMessage, "bad type token '" + m.type + "'");
    }
    std::size_t pos = nl + 1;
    while (true) {
        nl = payload.find('\n', pos);
        if (nl == std::string_view::npos) {
            throw Error(Errc::MalformedMessage, "missing blank line after headers");
        }
        std::string_view line = payload.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) {
            break;
        }
        std::size_t sep = line.find(": ");
        if (sep == std::string_view::npos || !is_header_key(line.substr(0, sep)) ||
            !is_header_value(line.substr(sep + 2))) {
            throw Error(Errc::MalformedMessage, "bad header line");
        }
        m.headers.emplace_back(line.substr(0, sep), line.substr(sep + 2));
    }
    m.body = std::string(payload.substr(pos));
    return m;
}

Frame encode(const Message& message) {
    Frame f{encode_message(message)};
    if (f.payload.size() > kMaxFramePayload) {
        throw Error(Errc::Oversize, std::to_string(f.payload.size()) + " bytes");
    }
    return f;
}

Message decode(const Frame& frame) { return decode_message(frame.payload); }

bool Authenticator::check(const Credential& c) const {
    auto it = accounts_.find(c.identity);
    return it != accounts_.end() && it->second == c.secret;
}

Credential default_credential() { return Credential{"grid-user", "grid-secret"}; }

Message make_search(const SearchRequest& r) {
    std::string attrs = "*";
    if (r.attributes) {
        attrs.clear();
        for (std::size_t i = 0; i < r.attributes->size(); ++i) {
            if (i) {
                attrs += ',';
            }
            attrs += (*r.attributes)[i];
        }
    }
    return make_message(MessageType::Search, {{"base", r.base.str()},
                                              {"scope", std::string(scope_name(r.scope))},
                                              {"filter", r.filter.str()},
                                              {"attrs", attrs},
                                              {"qid", r.query_id}});
}

SearchRequest parse_search(const Message& m) {
    if (m.kind() != MessageType::Search) {
        throw Error(Errc::MalformedMessage, "expected SEARCH, got " + m.type);
    }
    try {
        SearchRequest r{EntryName::parse(m.require("base")), parse_scope(m.require("scope")),
                        Filter::parse(m.require("filter")), std::nullopt, m.require("qid")};
        const std::string& attrs = m.require("attrs");
        if (attrs != "*") {
            std::vector<std::string> list;
            std::size_t pos = 0;
            while (pos <= attrs.size()) {
                std::size_t comma = attrs.find(',', pos);
                if (comma == std::string::npos) {
                    comma = attrs.size();
                }
                list.push_back(attrs.substr(pos, comma - pos));
                pos = comma + 1;
            }
            r.attributes = std::move(list);
        }
        if (!is_log_token(r.query_id)) {
            throw Error(Errc::MalformedMessage, "bad qid");
        }
        return r;
    } catch (const Error& e) {
        if (e.code() == Errc::MalformedMessage) {
            throw;
        }
        throw Error(Errc::MalformedMessage, e.what());
    }
}

Message make_result(const std::string& qid, std::size_t count, std::string body) {
    return make_message(MessageType::Result,
                        {{"qid", qid}, {"status", "ok"}, {"count", std::to_string(count)}},
                        std::move(body));
}

Message make_error(Errc code, const std::string& text) {
    std::string clean = text;
    std::replace(clean.begin(), clean.end(), '\n', ' ');
    std::replace(clean.begin(), clean.end(), '\r', ' ');
    return make_message(MessageType::Error,
                        {{"code", std::string(errc_name(code))}, {"message", clean}});
}

void write_frame(net::Socket& sock, const Message& message, net::Timeout timeout) {
    sock.send_all(encode_frame(encode(message)), timeout);
}

Message read_frame(net::Socket& sock, net::Timeout timeout) {
    char hdr[4];
    sock.recv_exact(hdr, 4, timeout);
    const std::uint32_t len = read_be32(hdr);
    if (len > kMaxFramePayload) {
        throw Error(Errc::Oversize, std::to_string(len) + " bytes declared");
    }
    std::string payload(len, '\0');
    sock.recv_exact(payload.data(), len, timeout);
    return decode_message(payload);
}

// ---------------------------------------------------------------------------
// QueryTrace

QueryTrace::QueryTrace(std::string qid, WallTime init_start) : qid_(std::move(qid)) {
    intervals_[0].start = init_start;
}

WallTime QueryTrace::enter(Phase next) {
    const auto it = std::find(kServerPhases.begin(), kServerPhases.end(), next);
    const std::size_t idx = static_cast<std::size_t>(it - kServerPhases.begin());
    if (it == kServerPhases.end() || idx != current_ + 1 || finished_) {
        throw std::logic_error("server phases entered out of order");
    }
    const WallTime now = std::max(wall_now(), intervals_[current_].start);
    intervals_[current_].end = now;
    current_ = idx;
    intervals_[current_].start = now;
    return now;
}

WallTime QueryTrace::skip(Phase empty) {
    const WallTime at = enter(empty);
    if (current_ + 1 >= kServerPhases.size()) {
        throw std::logic_error("cannot skip the last server phase");
    }
    intervals_[current_].end = at;
    ++current_;
    intervals_[current_].start = at;
    return at;
}

WallTime QueryTrace::finish() {
    if (current_ != kServerPhases.size() - 1 || finished_) {
        throw std::logic_error("finish() before Server-GenResult");
    }
    const WallTime now = std::max(wall_now(), intervals_[current_].start);
    intervals_[current_].end = now;
    finished_ = true;
    return now;
}

void QueryTrace::marker(WallTime ts, std::string evnt,
                        std::vector<std::pair<std::string, std::string>> extra, std::string lvl,
                        std::string prog) {
    LogEvent e;
    e.ts = ts;
    e.prog = std::move(prog);
    e.lvl = std::move(lvl);
    e.evnt = std::move(evnt);
    e.qid = qid_;
    e.extra = std::move(extra);
    std::lock_guard lock(mu_);
    markers_.push_back(std::move(e));
}

std::vector<LogEvent> QueryTrace::events(const EventSource& source) const {
    std::vector<LogEvent> out;
    const std::size_t done = finished_ ? kServerPhases.size() : current_;
    for (std::size_t i = 0; i < done; ++i) {
        out.push_back(source.make(intervals_[i].start,
                                  phase_event_name(kServerPhases[i], Boundary::Start), qid_));
        out.push_back(source.make(intervals_[i].end,
                                  phase_event_name(kServerPhases[i], Boundary::End), qid_));
    }
    std::lock_guard lock(mu_);
    for (auto e : markers_) {
        e.host = source.host;
        if (e.prog.empty()) {
            e.prog = source.prog;
        }
        out.push_back(std::move(e));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const LogEvent& a, const LogEvent& b) { return a.ts < b.ts; });
    return out;
}

// ---------------------------------------------------------------------------
// Server

Message SearchService::handle_register(const Message&) {
    return make_error(Errc::ProtocolError, "this server does not accept registrations");
}

struct Server::Shared {
    Shared(SearchService& svc, Authenticator a, EventSink& s, ServerOptions o)
        : service(svc), auth(std::move(a)), sink(s), options(std::move(o)) {}

    SearchService& service;
    Authenticator auth;
    EventSink& sink;
    ServerOptions options;
    std::atomic<bool> stopping{false};
    std::mutex mu;
    std::condition_variable idle;
    std::size_t active = 0;
    std::atomic<std::uint64_t> searches{0};

    void release() {
        std::lock_guard lock(mu);
        --active;
        idle.notify_all();
    }

    void emit_all(const std::vector<LogEvent>& events) {
        for (const auto& e : events) {
            try {
                sink.emit(e);
            } catch (const Error&) {
                return;
            }
        }
        // Keep the on-disk log current for readers in other processes.
        sink.flush();
    }
};

std::unique_ptr<Server> Server::start(const net::Address& listen, SearchService& service,
                                      Authenticator auth, EventSink& sink, ServerOptions options) {
    std::unique_ptr<Server> s(new Server());
    s->listener_ = net::Listener::bind(listen);
    s->address_ = s->listener_.address();
    s->shared_ = std::make_shared<Shared>(service, std::move(auth), sink, std::move(options));
    s->acceptor_ = std::thread([raw = s.get()] { raw->accept_loop(); });
    return s;
}

std::unique_ptr<Server> serve(const net::Address& listen, SearchService& service,
                              Authenticator auth, EventSink& sink, ServerOptions options) {
    return Server::start(listen, service, std::move(auth), sink, std::move(options));
}

Server::~Server() { stop(); }

void Server::stop() {
    if (stopped_ || !shared_) {
        return;
    }
    stopped_ = true;
    shared_->stopping = true;
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    listener_.close();
    std::unique_lock lock(shared_->mu);
    shared_->idle.wait(lock, [&] { return shared_->active == 0; });
}

void Server::accept_loop() {
    using namespace std::chrono_literals;
    while (!shared_->stopping) {
        net::Socket sock = listener_.accept(50ms);
        if (!sock.valid()) {
            continue;
        }
        ++accepted_;
        {
            std::lock_guard lock(shared_->mu);
            ++shared_->active;
        }
        std::thread(serve_connection, shared_, std::move(sock)).detach();
    }
}

void Server::serve_connection(std::shared_ptr<Shared> shared, net::Socket sock) {
    using namespace std::chrono_literals;
    const auto& opt = shared->options;
    bool bound = false;
    struct Release {
        net::Socket& sock;
        Shared& shared;
        ~Release() {
            sock.close();
            shared.release();
        }
    } release{sock, *shared};

    auto reply = [&](const Message& m) {
        try {
            write_frame(sock, m, opt.io_timeout);
        } catch (const Error&) {
        }
    };

    try {
        const auto idle_deadline_from = [&] { return std::chrono::steady_clock::now() + opt.idle_timeout; };
        auto idle_deadline = idle_deadline_from();
        while (true) {
            // Wait for the next request without blocking shutdown.
            bool readable = false;
            while (!readable) {
                if (shared->stopping || std::chrono::steady_clock::now() > idle_deadline) {
                    break;
                }
                readable = sock.wait_readable(50ms);
            }
            if (!readable) {
                break;
            }
            Message msg;
            WallTime received;
            try {
                char hdr[4];
                sock.recv_exact(hdr, 4, opt.io_timeout);
                const std::uint32_t len = read_be32(hdr);
                if (len > kMaxFramePayload) {
                    reply(make_error(Errc::Oversize, "frame too large"));
                    break;
                }
                std::string payload(len, '\0');
                sock.recv_exact(payload.data(), len, opt.io_timeout);
                received = wall_now();
                msg = decode_message(payload);
            } catch (const Error& e) {
                if (e.code() == Errc::MalformedMessage) {
                    reply(make_error(e.code(), e.what()));
                }
                break;
            }

            switch (msg.kind()) {
            case MessageType::Bind: {
                const std::string* id = msg.header("identity");
                const std::string* secret = msg.header("secret");
                if (id && secret && shared->auth.check({*id, *secret})) {
                    bound = true;
                    reply(make_message(MessageType::BindOk));
                } else {
                    reply(make_message(MessageType::BindErr, {{"reason", "invalid credentials"}}));
                    return;
                }
                break;
            }
            case MessageType::Search: {
                if (!bound) {
                    reply(make_error(Errc::ProtocolError, "SEARCH before BIND"));
                    return;
                }
                std::unique_ptr<QueryTrace> trace;
                try {
                    SearchRequest req = parse_search(msg);
                    trace = std::make_unique<QueryTrace>(req.query_id, received);
                    SearchResponse resp = shared->service.handle_search(req, *trace);
                    if (!trace->finished()) {
                        throw std::logic_error("handler did not complete all server phases");
                    }
                    reply(make_result(req.query_id, resp.count, std::move(resp.body)));
                    ++shared->searches;
                } catch (const Error& e) {
                    reply(make_error(e.code(), e.what()));
                } catch (const std::exception& e) {
                    reply(make_error(Errc::ServerError, e.what()));
                }
                if (trace) {
                    shared->emit_all(trace->events(opt.source));
                }
                break;
            }
            case MessageType::Register:
                reply(shared->service.handle_register(msg));
                break;
            case MessageType::Unbind:
                return;
            default:
                reply(make_error(Errc::ProtocolError, "unexpected " + msg.type));
                return;
            }
            idle_deadline = idle_deadline_from();
        }
    } catch (...) {
    }
}

} // namespace mdslite

namespace mdslite {

std::uint64_t Server::searches_served() const { return shared_->searches.load(); }

// ---------------------------------------------------------------------------
// Client


ClientQueryResult client_query(const net::Address& endpoint, const Credential& credential,
                               const SearchRequest& request, EventSink& sink,
                               const ClientOptions& options) {
    const auto& src = options.source;
    const std::string& qid = request.query_id;
    ClientQueryResult out;
    ClientHalf& ph = out.phases;

    // Phases recorded so far; emitted once the connection is gone.
    std::vector<LogEvent> events;
    auto record = [&](Phase p, const Interval& iv) {
        events.push_back(src.make(iv.start, phase_event_name(p, Boundary::Start), qid));
        events.push_back(src.make(iv.end, phase_event_name(p, Boundary::End), qid));
    };
    auto flush = [&] {
        for (const auto& e : events) {
            try {
                sink.emit(e);
            } catch (const Error&) {
                break;
            }
        }
    };
    std::optional<Phase> open_phase;
    WallTime open_start{};
    auto fail = [&](const Error& err) {
        const WallTime now = wall_now();
        if (open_phase) {
            events.push_back(src.make(open_start, phase_event_name(*open_phase, Boundary::Start), qid));
            events.push_back(
                src.make(now, phase_event_name(*open_phase, Boundary::End), qid, "ERROR"));
        }
        LogEvent marker = src.make(now, std::string(kQueryErrorEvent), qid, "ERROR");
        marker.extra.emplace_back("CLASS", std::string(errc_name(err.code())));
        events.push_back(std::move(marker));
        flush();
    };

    net::Socket sock;
    try {
        open_phase = Phase::ClientConnect;
        open_start = wall_now();
        sock = net::Socket::connect(endpoint, options.timeout);
        ph.connect = {open_start, wall_now()};
        record(Phase::ClientConnect, ph.connect);

        open_phase = Phase::ClientBind;
        open_start = ph.connect.end;
        write_frame(sock, make_message(MessageType::Bind, {{"identity", credential.identity},
                                                           {"secret", credential.secret}}),
                    options.timeout);
        Message bind_reply = read_frame(sock, options.timeout);
        if (bind_reply.kind() == MessageType::BindErr) {
            throw Error(Errc::BindRejected, endpoint.str());
        }
        if (bind_reply.kind() == MessageType::Error) {
            throw Error(Errc::ServerError, bind_reply.header("message") ? *bind_reply.header("message") : "");
        }
        if (bind_reply.kind() != MessageType::BindOk) {
            throw Error(Errc::ProtocolError, "expected BIND-OK, got " + bind_reply.type);
        }
        ph.bind = {open_start, wall_now()};
        record(Phase::ClientBind, ph.bind);
        open_phase.reset();

        write_frame(sock, make_search(request), options.timeout);
        if (!sock.wait_readable(options.timeout)) {
            throw Error(Errc::Timeout, "waiting for RESULT from " + endpoint.str());
        }
        open_phase = Phase::ClientEndConnect;
        open_start = wall_now();
        char hdr[4];
        sock.recv_exact(hdr, 4, options.timeout);
        const std::uint32_t len = read_be32(hdr);
        if (len > kMaxFramePayload) {
            throw Error(Errc::ProtocolError, "oversize RESULT");
        }
        std::string payload(len, '\0');
        sock.recv_exact(payload.data(), len, options.timeout);
        Message reply;
        try {
            reply = decode_message(payload);
        } catch (const Error& e) {
            throw Error(Errc::ProtocolError, e.what());
        }
        if (reply.kind() == MessageType::Error) {
            const std::string* code = reply.header("code");
            const std::string* msg = reply.header("message");
            throw Error(Errc::ServerError,
                        (code ? *code : std::string("?")) + ": " + (msg ? *msg : std::string()));
        }
        if (reply.kind() != MessageType::Result) {
            throw Error(Errc::ProtocolError, "expected RESULT, got " + reply.type);
        }
        const std::string* rqid = reply.header("qid");
        if (!rqid || *rqid != qid) {
            throw Error(Errc::ProtocolError, "RESULT for wrong qid");
        }
        const std::string* count = reply.header("count");
        if (!count) {
            throw Error(Errc::ProtocolError, "RESULT without count");
        }
        const std::size_t expected = parse_count(*count);
        try {
            out.entries = parse_entries(reply.body);
        } catch (const Error& e) {
            throw Error(Errc::ProtocolError, e.what());
        }
        if (out.entries.size() != expected) {
            throw Error(Errc::ProtocolError, "count header disagrees with body");
        }
        out.response_bytes = payload.size();
        try {
            write_frame(sock, make_message(MessageType::Unbind), options.timeout);
        } catch (const Error&) {
        }
        sock.close();
        ph.end_connect = {open_start, wall_now()};
        record(Phase::ClientEndConnect, ph.end_connect);
        open_phase.reset();
    } catch (const Error& err) {
        sock.close();
        fail(err);
        throw;
    }
    flush();
    return out;
}

void send_registration(const net::Address& directory, const net::Address& endpoint,
                       const EntryName& suffix, std::chrono::seconds ttl, net::Timeout timeout) {
    net::Socket sock = net::Socket::connect(directory, timeout);
    write_frame(sock, make_message(MessageType::Register, {{"endpoint", endpoint.str()},
                                                           {"suffix", suffix.str()},
                                                           {"ttl-seconds", std::to_string(ttl.count())}}),
                timeout);
    Message reply = read_frame(sock, timeout);
    if (reply.kind() != MessageType::RegisterOk) {
        const std::string* msg = reply.header("message");
        throw Error(Errc::ServerError, "registration refused: " + (msg ? *msg : reply.type));
    }
    try {
        write_frame(sock, make_message(MessageType::Unbind), timeout);
    } catch (const Error&) {
    }
}

} // namespace mdslite
