#include "otgym/protocol.hpp"

#include <array>
#include <cmath>

namespace otgym::protocol {

using nlohmann::json;

std::string to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadJson: return "bad_json";
    case ErrorCode::BadEnvelope: return "bad_envelope";
    case ErrorCode::BadPayload: return "bad_payload";
    case ErrorCode::UnknownType: return "unknown_type";
    case ErrorCode::BadSeq: return "bad_seq";
    case ErrorCode::HelloRequired: return "hello_required";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::NotOperator: return "not_operator";
  }
  return "unknown";
}

bool is_client_type(std::string_view type) {
  static constexpr std::array<std::string_view, 6> types = {kHello, kOperatorInput, kModeChange,
                                                            kStart, kPause,         kReset};
  for (auto t : types) {
    if (t == type) return true;
  }
  return false;
}

Envelope parse_envelope(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ProtocolError(ErrorCode::BadJson, "message is not valid JSON");
  if (!j.is_object()) throw ProtocolError(ErrorCode::BadEnvelope, "message must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "type" && it.key() != "seq" && it.key() != "payload") {
      throw ProtocolError(ErrorCode::BadEnvelope, "unexpected envelope field '" + it.key() + "'");
    }
  }
  Envelope e;
  if (!j.contains("type") || !j["type"].is_string()) throw ProtocolError(ErrorCode::BadEnvelope, "'type' must be a string");
  if (!j.contains("seq") || !j["seq"].is_number_unsigned()) {
    throw ProtocolError(ErrorCode::BadEnvelope, "'seq' must be a non-negative integer");
  }
  e.type = j["type"].get<std::string>();
  e.seq = j["seq"].get<std::uint64_t>();
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw ProtocolError(ErrorCode::BadEnvelope, "'payload' must be an object");
    e.payload = j["payload"];
  }
  return e;
}

std::string encode(std::string_view type, std::uint64_t seq, const json& payload) {
  return json{{"type", type}, {"seq", seq}, {"payload", payload}}.dump();
}

json error_payload(ErrorCode code, const std::string& message, std::optional<std::uint64_t> ref_seq) {
  json p = {{"code", to_string(code)}, {"message", message}};
  p["ref_seq"] = ref_seq ? json(*ref_seq) : json(nullptr);
  return p;
}

namespace {

void only_keys(const json& p, std::initializer_list<const char*> keys, const char* what) {
  for (auto it = p.begin(); it != p.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) throw ProtocolError(ErrorCode::BadPayload, std::string(what) + ": unexpected field '" + it.key() + "'");
  }
}

}  // namespace

Vec2 parse_operator_input(const json& p) {
  only_keys(p, {"delta_p_h"}, kOperatorInput);
  const auto it = p.find("delta_p_h");
  if (it == p.end() || !it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
    throw ProtocolError(ErrorCode::BadPayload, "operator_input needs delta_p_h: [dx, dy]");
  }
  const Vec2 v{(*it)[0].get<double>(), (*it)[1].get<double>()};
  if (!std::isfinite(v.x) || !std::isfinite(v.y)) throw ProtocolError(ErrorCode::BadPayload, "delta_p_h must be finite");
  return v;
}

OperatingMode parse_mode_change(const json& p) {
  only_keys(p, {"mode"}, kModeChange);
  if (!p.contains("mode") || !p["mode"].is_string()) throw ProtocolError(ErrorCode::BadPayload, "mode_change needs mode");
  try {
    return operating_mode_from_string(p["mode"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(ErrorCode::BadPayload, e.what());
  }
}

std::optional<std::uint64_t> parse_reset(const json& p) {
  only_keys(p, {"seed"}, kReset);
  if (!p.contains("seed") || p["seed"].is_null()) return std::nullopt;
  const json& s = p["seed"];
  const bool ok = s.is_number_unsigned() || (s.is_number_integer() && s.get<std::int64_t>() >= 0);
  if (!ok) throw ProtocolError(ErrorCode::BadPayload, "reset seed must be a non-negative integer");
  return p["seed"].get<std::uint64_t>();
}

int parse_client_hello(const json& p) {
  only_keys(p, {"protocol", "client"}, kHello);
  if (!p.contains("protocol") || !p["protocol"].is_number_integer()) {
    throw ProtocolError(ErrorCode::BadPayload, "hello needs an integer protocol version");
  }
  if (p.contains("client") && !p["client"].is_string()) throw ProtocolError(ErrorCode::BadPayload, "client must be a string");
  return p["protocol"].get<int>();
}

void validate_client_message(const Envelope& e) {
  if (!is_client_type(e.type)) throw ProtocolError(ErrorCode::UnknownType, "unknown message type '" + e.type + "'");
  if (e.type == kHello) parse_client_hello(e.payload);
  else if (e.type == kOperatorInput) parse_operator_input(e.payload);
  else if (e.type == kModeChange) parse_mode_change(e.payload);
  else if (e.type == kReset) parse_reset(e.payload);
  else if (!e.payload.empty()) throw ProtocolError(ErrorCode::BadPayload, e.type + " takes an empty payload");
}

}  // namespace otgym::protocol
