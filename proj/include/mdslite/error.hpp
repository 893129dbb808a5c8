#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mdslite {

enum class Errc {
    MalformedName,
    MalformedEntry,
    MalformedFilter,
    DuplicateName,
    ForeignEntry,
    NoSuchBase,
    SinkClosed,
    IncompleteLifeline,
    EmptyInput,
    Oversize,
    MalformedFrame,
    MalformedMessage,
    ConnectFailed,
    BindRejected,
    ProtocolError,
    ServerError,
    Timeout,
    AddressInUse,
    ProviderFailed,
    MalformedRegistration,
    MalformedConfig,
    TargetUnreachableAtStart,
    NoCompleteLifelines,
    GridMismatch,
    IoError,
};

std::string_view errc_name(Errc code);

// Every failure surfaced by the library carries one of the codes above; the
// message is free text for humans.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace mdslite
