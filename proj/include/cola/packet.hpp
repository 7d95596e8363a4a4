// Canonical JSON encoding of RelayPacket.
//
//   { "schema_version": 1, "protocol": "1R"|"2R"|"2R-INF"|"3R", "round": int,
//     "site_index": int, "site_trail": [string], "n_cum": int,
//     "theta": {"gamma": [f64...], "beta": [f64, f64] | null},
//     "gamma_global": [f64...] | null, "beta_global": [f64, f64] | null,
//     "H_cum": {"dim": int, "rows": int, "cols": int, "data": [f64 row-major]},
//     "V_cum": {...} | null, "converged_so_far": bool }
//
// Keys are emitted in the order above with no insignificant whitespace.
// Floats use the shortest decimal that round-trips to the same binary64.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "cola/engine.hpp"

namespace cola {

std::string packet_to_json(const RelayPacket& packet);
/// Throws InputError on malformed JSON or invalid field presence.
RelayPacket packet_from_json(std::string_view json);

RelayPacket read_packet(const std::filesystem::path& path);
void write_packet(const std::filesystem::path& path, const RelayPacket& packet);

/// JSON string literal with the required escapes.
std::string json_quote(std::string_view text);

}  // namespace cola
