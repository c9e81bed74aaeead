#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

namespace agentsim {

using json = nlohmann::json;

enum class Role { System, User, Assistant };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view text); // throws MalformedPayload

// Scalar metadata only; structured data belongs in the content.
using MetadataValue = std::variant<std::string, std::int64_t, double, bool>;
using Metadata = std::map<std::string, MetadataValue>;

std::string new_uuid();
std::int64_t now_millis();

// An immutable unit of inter-agent communication.
class Message {
public:
  // Assigns a fresh id and the current wall-clock timestamp.
  Message(std::string sender, Role role, std::string content,
          Metadata metadata = {});

  // Full constructor used by deserialization and tests.
  Message(std::string id, std::string sender, Role role, std::string content,
          Metadata metadata, std::int64_t timestamp);

  const std::string &id() const noexcept { return id_; }
  const std::string &sender() const noexcept { return sender_; }
  Role role() const noexcept { return role_; }
  const std::string &content() const noexcept { return content_; }
  const Metadata &metadata() const noexcept { return metadata_; }
  std::int64_t timestamp() const noexcept { return timestamp_; }

  std::optional<double> number(const std::string &key) const;
  std::optional<std::string> text(const std::string &key) const;

  friend bool operator==(const Message &, const Message &) = default;

private:
  std::string id_;
  std::string sender_;
  Role role_;
  std::string content_;
  Metadata metadata_;
  std::int64_t timestamp_;
};

// Deferred result of a remote computation. Copies share one resolution cell,
// so resolving any copy resolves all of them, and the cached value never
// changes once set.
class Placeholder {
public:
  Placeholder(std::string task_id, std::string host, int port);

  const std::string &task_id() const noexcept { return task_id_; }
  const std::string &host() const noexcept { return host_; }
  int port() const noexcept { return port_; }

  std::optional<Message> cached() const;
  // First writer wins; returns the value that ends up cached.
  Message set_cached(Message m) const;

  friend bool operator==(const Placeholder &a, const Placeholder &b) {
    return a.task_id_ == b.task_id_ && a.host_ == b.host_ && a.port_ == b.port_;
  }

private:
  struct Cell {
    mutable std::mutex mu;
    std::optional<Message> value;
  };

  std::string task_id_;
  std::string host_;
  int port_;
  std::shared_ptr<Cell> cell_;
};

using Payload = std::variant<Message, Placeholder>;

inline bool is_placeholder(const Payload &p) {
  return std::holds_alternative<Placeholder>(p);
}

json to_json(const Message &m);
json to_json(const Placeholder &p);
json to_json(const Payload &p);
Message message_from_json(const json &j);
Payload payload_from_json(const json &j);

// Canonical encoding: compact UTF-8 JSON with lexicographically sorted keys.
std::string serialize(const Payload &p);
Payload deserialize(std::string_view bytes);

// Shortest text that parses back to exactly the same double.
std::string format_number(double value);

} // namespace agentsim
