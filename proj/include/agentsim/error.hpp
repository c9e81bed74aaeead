#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace agentsim {

// Values are stable: the C API exposes them unchanged as as_status.
enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  MalformedPayload = 2,
  FrameTooLarge = 3,
  TruncatedFrame = 4,
  Timeout = 5,
  ConnectionRefused = 6,
  ConnectionClosed = 7,
  AgentNotFound = 8,
  TaskNotFound = 9,
  BadFrame = 10,
  CapacityExceeded = 11,
  Internal = 12,
  UnknownAgentKind = 13,
  BindFailure = 14,
  KeyNotFound = 15,
  AccessDenied = 16,
  DuplicateFunction = 17,
  UnknownFunction = 18,
  InvocationFailed = 19,
  CycleDetected = 20,
  ParseError = 21,
  InvalidProportions = 22,
  BackendError = 23,
  MissingBackgroundTag = 24,
  AuthError = 25,
  MissingWinner = 26,
  MissingBackground = 27,
  MissingGroupInfo = 28,
  UnparseableReport = 29,
  OutOfRangeReport = 30,
  EmptyReports = 31,
  IoError = 32,
  DuplicateAddress = 33,
  ServerDead = 34,
  ServerNotFound = 35,
  ConfigError = 36,
};

std::string_view error_code_name(ErrorCode code) noexcept;

// Wire names for the RPC error codes (AGENT_NOT_FOUND, TIMEOUT, ...). Codes
// without a dedicated wire name travel as INTERNAL.
std::string_view wire_error_name(ErrorCode code) noexcept;
ErrorCode error_code_from_wire(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &message) {
  throw Error(code, message);
}

} // namespace agentsim
