#include "agentsim/error.hpp"

#include <array>
#include <utility>

namespace agentsim {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::Ok: return "Ok";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::MalformedPayload: return "MalformedPayload";
  case ErrorCode::FrameTooLarge: return "FrameTooLarge";
  case ErrorCode::TruncatedFrame: return "TruncatedFrame";
  case ErrorCode::Timeout: return "Timeout";
  case ErrorCode::ConnectionRefused: return "ConnectionRefused";
  case ErrorCode::ConnectionClosed: return "ConnectionClosed";
  case ErrorCode::AgentNotFound: return "AgentNotFound";
  case ErrorCode::TaskNotFound: return "TaskNotFound";
  case ErrorCode::BadFrame: return "BadFrame";
  case ErrorCode::CapacityExceeded: return "CapacityExceeded";
  case ErrorCode::Internal: return "Internal";
  case ErrorCode::UnknownAgentKind: return "UnknownAgentKind";
  case ErrorCode::BindFailure: return "BindFailure";
  case ErrorCode::KeyNotFound: return "KeyNotFound";
  case ErrorCode::AccessDenied: return "AccessDenied";
  case ErrorCode::DuplicateFunction: return "DuplicateFunction";
  case ErrorCode::UnknownFunction: return "UnknownFunction";
  case ErrorCode::InvocationFailed: return "InvocationFailed";
  case ErrorCode::CycleDetected: return "CycleDetected";
  case ErrorCode::ParseError: return "ParseError";
  case ErrorCode::InvalidProportions: return "InvalidProportions";
  case ErrorCode::BackendError: return "BackendError";
  case ErrorCode::MissingBackgroundTag: return "MissingBackgroundTag";
  case ErrorCode::AuthError: return "AuthError";
  case ErrorCode::MissingWinner: return "MissingWinner";
  case ErrorCode::MissingBackground: return "MissingBackground";
  case ErrorCode::MissingGroupInfo: return "MissingGroupInfo";
  case ErrorCode::UnparseableReport: return "UnparseableReport";
  case ErrorCode::OutOfRangeReport: return "OutOfRangeReport";
  case ErrorCode::EmptyReports: return "EmptyReports";
  case ErrorCode::IoError: return "IoError";
  case ErrorCode::DuplicateAddress: return "DuplicateAddress";
  case ErrorCode::ServerDead: return "ServerDead";
  case ErrorCode::ServerNotFound: return "ServerNotFound";
  case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 6> kWireNames{{
    {ErrorCode::AgentNotFound, "AGENT_NOT_FOUND"},
    {ErrorCode::TaskNotFound, "TASK_NOT_FOUND"},
    {ErrorCode::Timeout, "TIMEOUT"},
    {ErrorCode::BadFrame, "BAD_FRAME"},
    {ErrorCode::CapacityExceeded, "CAPACITY_EXCEEDED"},
    {ErrorCode::Internal, "INTERNAL"},
}};

} // namespace

std::string_view wire_error_name(ErrorCode code) noexcept {
  for (const auto &[c, name] : kWireNames)
    if (c == code)
      return name;
  return "INTERNAL";
}

ErrorCode error_code_from_wire(std::string_view name) noexcept {
  for (const auto &[c, n] : kWireNames)
    if (n == name)
      return c;
  return ErrorCode::Internal;
}

} // namespace agentsim
