#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "otgym/shared.hpp"

namespace otgym::protocol {

inline constexpr int kVersion = 1;
inline constexpr const char* kEndpoint = "/session";

// Client to server.
inline constexpr const char* kHello = "hello";
inline constexpr const char* kOperatorInput = "operator_input";
inline constexpr const char* kModeChange = "mode_change";
inline constexpr const char* kStart = "start";
inline constexpr const char* kPause = "pause";
inline constexpr const char* kReset = "reset";
// Server to client (hello is answered with hello).
inline constexpr const char* kStateUpdate = "state_update";
inline constexpr const char* kHapticUpdate = "haptic_update";
inline constexpr const char* kEpisodeResult = "episode_result";
inline constexpr const char* kAck = "ack";
inline constexpr const char* kError = "error";

/// Error codes carried in error payloads.
enum class ErrorCode { BadJson, BadEnvelope, BadPayload, UnknownType, BadSeq, HelloRequired, VersionMismatch, NotOperator };
std::string to_string(ErrorCode c);

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct Envelope {
  std::string type;
  std::uint64_t seq = 0;
  nlohmann::json payload = nlohmann::json::object();
};

/// Parses and checks the envelope shape; payload contents are checked per type.
Envelope parse_envelope(std::string_view text);
bool is_client_type(std::string_view type);

std::string encode(std::string_view type, std::uint64_t seq, const nlohmann::json& payload);

nlohmann::json error_payload(ErrorCode code, const std::string& message, std::optional<std::uint64_t> ref_seq = {});

/// operator_input payload: {"delta_p_h": [dx, dy]} in µm per tick.
Vec2 parse_operator_input(const nlohmann::json& payload);
/// mode_change payload: {"mode": "manual" | "autonomous" | "shared"}.
OperatingMode parse_mode_change(const nlohmann::json& payload);
/// reset payload: {} or {"seed": n}.
std::optional<std::uint64_t> parse_reset(const nlohmann::json& payload);
/// hello payload from a client: {"protocol": 1, "client": "..."}.
int parse_client_hello(const nlohmann::json& payload);

/// Throws UnknownType for non-client types and BadPayload when the payload does
/// not fit its type.
void validate_client_message(const Envelope& e);

}  // namespace otgym::protocol
