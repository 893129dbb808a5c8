#include "mdslite/error.hpp"

namespace mdslite {

std::string_view errc_name(Errc code) {
    switch (code) {
    case Errc::MalformedName: return "MalformedName";
    case Errc::MalformedEntry: return "MalformedEntry";
    case Errc::MalformedFilter: return "MalformedFilter";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::ForeignEntry: return "ForeignEntry";
    case Errc::NoSuchBase: return "NoSuchBase";
    case Errc::SinkClosed: return "SinkClosed";
    case Errc::IncompleteLifeline: return "IncompleteLifeline";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::Oversize: return "Oversize";
    case Errc::MalformedFrame: return "MalformedFrame";
    case Errc::MalformedMessage: return "MalformedMessage";
    case Errc::ConnectFailed: return "ConnectFailed";
    case Errc::BindRejected: return "BindRejected";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::ServerError: return "ServerError";
    case Errc::Timeout: return "Timeout";
    case Errc::AddressInUse: return "AddressInUse";
    case Errc::ProviderFailed: return "ProviderFailed";
    case Errc::MalformedRegistration: return "MalformedRegistration";
    case Errc::MalformedConfig: return "MalformedConfig";
    case Errc::TargetUnreachableAtStart: return "TargetUnreachableAtStart";
    case Errc::NoCompleteLifelines: return "NoCompleteLifelines";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

} // namespace mdslite
