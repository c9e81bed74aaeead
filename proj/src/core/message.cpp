#include "agentsim/message.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <random>

#include "agentsim/error.hpp"

namespace agentsim {

std::string_view to_string(Role role) noexcept {
  switch (role) {
  case Role::System: return "system";
  case Role::User: return "user";
  case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view text) {
  if (text == "system") return Role::System;
  if (text == "user") return Role::User;
  if (text == "assistant") return Role::Assistant;
  fail(ErrorCode::MalformedPayload, "bad role: " + std::string(text));
}

std::string new_uuid() {
  thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  std::array<std::uint8_t, 16> b{};
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t r = rng();
    for (int k = 0; k < 8; ++k)
      b[i * 8 + k] = static_cast<std::uint8_t>(r >> (8 * k));
  }
  b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(36);
  for (int i = 0; i < 16; ++i) {
    if (i == 4 || i == 6 || i == 8 || i == 10)
      out.push_back('-');
    out.push_back(hex[b[i] >> 4]);
    out.push_back(hex[b[i] & 0x0F]);
  }
  return out;
}

std::int64_t now_millis() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch())
      .count();
}

std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc())
    return std::to_string(value);
  return std::string(buf.data(), end);
}

namespace {

void check_metadata(const Metadata &metadata) {
  for (const auto &[key, value] : metadata) {
    if (const auto *d = std::get_if<double>(&value); d && !std::isfinite(*d))
      fail(ErrorCode::InvalidArgument, "non-finite metadata value for " + key);
  }
}

} // namespace

Message::Message(std::string sender, Role role, std::string content,
                 Metadata metadata)
    : Message(new_uuid(), std::move(sender), role, std::move(content),
              std::move(metadata), now_millis()) {}

Message::Message(std::string id, std::string sender, Role role,
                 std::string content, Metadata metadata, std::int64_t timestamp)
    : id_(std::move(id)), sender_(std::move(sender)), role_(role),
      content_(std::move(content)), metadata_(std::move(metadata)),
      timestamp_(timestamp) {
  if (id_.empty())
    fail(ErrorCode::InvalidArgument, "message id must not be empty");
  check_metadata(metadata_);
}

std::optional<double> Message::number(const std::string &key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end())
    return std::nullopt;
  if (const auto *d = std::get_if<double>(&it->second))
    return *d;
  if (const auto *i = std::get_if<std::int64_t>(&it->second))
    return static_cast<double>(*i);
  return std::nullopt;
}

std::optional<std::string> Message::text(const std::string &key) const {
  auto it = metadata_.find(key);
  if (it == metadata_.end())
    return std::nullopt;
  if (const auto *s = std::get_if<std::string>(&it->second))
    return *s;
  return std::nullopt;
}

Placeholder::Placeholder(std::string task_id, std::string host, int port)
    : task_id_(std::move(task_id)), host_(std::move(host)), port_(port),
      cell_(std::make_shared<Cell>()) {
  if (task_id_.empty())
    fail(ErrorCode::InvalidArgument, "placeholder task_id must not be empty");
  if (port_ < 1 || port_ > 65535)
    fail(ErrorCode::InvalidArgument,
         "placeholder port out of range: " + std::to_string(port_));
}

std::optional<Message> Placeholder::cached() const {
  std::lock_guard lock(cell_->mu);
  return cell_->value;
}

Message Placeholder::set_cached(Message m) const {
  std::lock_guard lock(cell_->mu);
  if (!cell_->value)
    cell_->value = std::move(m);
  return *cell_->value;
}

json to_json(const Message &m) {
  json meta = json::object();
  for (const auto &[key, value] : m.metadata())
    std::visit([&, k = key](const auto &v) { meta[k] = v; }, value);
  return json{{"id", m.id()},           {"sender", m.sender()},
              {"role", to_string(m.role())}, {"content", m.content()},
              {"metadata", meta},       {"timestamp", m.timestamp()}};
}

json to_json(const Placeholder &p) {
  json j{{"__placeholder__", true},
         {"task_id", p.task_id()},
         {"host", p.host()},
         {"port", p.port()}};
  if (auto cached = p.cached())
    j["cached"] = to_json(*cached);
  return j;
}

json to_json(const Payload &p) {
  return std::visit([](const auto &v) { return to_json(v); }, p);
}

namespace {

const json &field(const json &j, const char *name) {
  auto it = j.find(name);
  if (it == j.end())
    fail(ErrorCode::MalformedPayload, std::string("missing field: ") + name);
  return *it;
}

const std::string &string_field(const json &j, const char *name) {
  const json &v = field(j, name);
  if (!v.is_string())
    fail(ErrorCode::MalformedPayload, std::string("field not a string: ") + name);
  return v.get_ref<const std::string &>();
}

std::int64_t integer_field(const json &j, const char *name) {
  const json &v = field(j, name);
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(INT64_MAX))
      fail(ErrorCode::MalformedPayload, std::string("integer overflow: ") + name);
    return static_cast<std::int64_t>(u);
  }
  if (!v.is_number_integer())
    fail(ErrorCode::MalformedPayload, std::string("field not an integer: ") + name);
  return v.get<std::int64_t>();
}

Metadata metadata_from_json(const json &j) {
  if (!j.is_object())
    fail(ErrorCode::MalformedPayload, "metadata must be an object");
  Metadata out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const json &v = it.value();
    if (v.is_string())
      out.emplace(it.key(), v.get<std::string>());
    else if (v.is_boolean())
      out.emplace(it.key(), v.get<bool>());
    else if (v.is_number_unsigned()) {
      const auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(INT64_MAX))
        fail(ErrorCode::MalformedPayload, "metadata integer overflow");
      out.emplace(it.key(), static_cast<std::int64_t>(u));
    } else if (v.is_number_integer())
      out.emplace(it.key(), v.get<std::int64_t>());
    else if (v.is_number_float())
      out.emplace(it.key(), v.get<double>());
    else
      fail(ErrorCode::MalformedPayload,
           "metadata values must be scalars: " + it.key());
  }
  return out;
}

} // namespace

Message message_from_json(const json &j) {
  if (!j.is_object())
    fail(ErrorCode::MalformedPayload, "message must be a JSON object");
  const std::string &id = string_field(j, "id");
  if (id.empty())
    fail(ErrorCode::MalformedPayload, "empty message id");
  try {
    return Message(id, string_field(j, "sender"),
                   role_from_string(string_field(j, "role")),
                   string_field(j, "content"),
                   metadata_from_json(field(j, "metadata")),
                   integer_field(j, "timestamp"));
  } catch (const Error &e) {
    if (e.code() == ErrorCode::MalformedPayload)
      throw;
    fail(ErrorCode::MalformedPayload, e.what());
  }
}

Payload payload_from_json(const json &j) {
  if (!j.is_object())
    fail(ErrorCode::MalformedPayload, "payload must be a JSON object");
  auto disc = j.find("__placeholder__");
  if (disc == j.end())
    return message_from_json(j);
  if (!disc->is_boolean() || !disc->get<bool>())
    fail(ErrorCode::MalformedPayload, "bad placeholder discriminator");
  const std::string &task_id = string_field(j, "task_id");
  const std::int64_t port = integer_field(j, "port");
  if (task_id.empty())
    fail(ErrorCode::MalformedPayload, "empty task_id");
  if (port < 1 || port > 65535)
    fail(ErrorCode::MalformedPayload, "port out of range: " + std::to_string(port));
  Placeholder p(task_id, string_field(j, "host"), static_cast<int>(port));
  if (auto c = j.find("cached"); c != j.end())
    p.set_cached(message_from_json(*c));
  return p;
}

std::string serialize(const Payload &p) {
  return to_json(p).dump(-1, ' ', false, json::error_handler_t::replace);
}

Payload deserialize(std::string_view bytes) {
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded())
    fail(ErrorCode::MalformedPayload, "payload is not valid JSON");
  return payload_from_json(j);
}

} // namespace agentsim
