#include <cmath>
#include <limits>

#include "cola/packet.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cola;

namespace {

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

bool same_packet(const RelayPacket& a, const RelayPacket& b) {
  auto opt = [](const std::optional<Vector>& x, const std::optional<Vector>& y) {
    return x.has_value() == y.has_value() && (!x || same_bits(*x, *y));
  };
  const bool v = a.cumulants.v.has_value() == b.cumulants.v.has_value() &&
                 (!a.cumulants.v || same_bits(*a.cumulants.v, *b.cumulants.v));
  return a.schema_version == b.schema_version && a.protocol == b.protocol && a.round == b.round &&
         a.site_index == b.site_index && same_bits(a.gamma, b.gamma) && opt(a.beta, b.beta) &&
         opt(a.gamma_global, b.gamma_global) && opt(a.beta_global, b.beta_global) &&
         same_bits(a.cumulants.h, b.cumulants.h) && v && a.cumulants.n == b.cumulants.n &&
         a.cumulants.sites == b.cumulants.sites && a.converged_so_far == b.converged_so_far;
}

}  // namespace

TEST_SUITE("packet") {

TEST_CASE("round trip is bit exact for every protocol and round") {
  std::vector<SiteDataset> sites;
  for (int k = 0; k < 3; ++k) sites.push_back(test::simulated_site(120, 300 + k, "h\"" + std::to_string(k)));
  for (Protocol p : {Protocol::ThreeR, Protocol::TwoR, Protocol::TwoRInf, Protocol::OneR}) {
    const auto r = run_protocol(std::span<const SiteDataset>(sites), p, {});
    REQUIRE(r.converged);
    for (const auto& pk : r.final_packets) {
      const std::string text = packet_to_json(pk);
      const RelayPacket back = packet_from_json(text);
      CHECK(same_packet(pk, back));
      CHECK(packet_to_json(back) == text);
    }
  }
}

TEST_CASE("awkward doubles survive") {
  RelayPacket p = RelayPacket::start(Protocol::OneR, 2);
  p.gamma << std::numeric_limits<double>::denorm_min(), -0.0;
  *p.beta << 1.0 / 3.0, -std::numeric_limits<double>::max();
  p.cumulants.h(0, 1) = 5e-324;
  p.cumulants.h(3, 2) = 0.1 + 0.2;
  const RelayPacket back = packet_from_json(packet_to_json(p));
  CHECK(same_packet(p, back));
  CHECK(std::signbit(back.gamma(1)));
}

TEST_CASE("canonical layout") {
  const RelayPacket p = RelayPacket::start(Protocol::ThreeR, 2);
  CHECK(packet_to_json(p) ==
        "{\"schema_version\":1,\"protocol\":\"3R\",\"round\":1,\"site_index\":0,\"site_trail\":[],"
        "\"n_cum\":0,\"theta\":{\"gamma\":[0,0],\"beta\":null},\"gamma_global\":null,\"beta_global\":null,"
        "\"H_cum\":{\"dim\":2,\"rows\":2,\"cols\":2,\"data\":[0,0,0,0]},\"V_cum\":null,\"converged_so_far\":true}");
}

TEST_CASE("rejects malformed input") {
  const std::string good = packet_to_json(RelayPacket::start(Protocol::ThreeR, 2));
  CHECK_NOTHROW(packet_from_json(good));
  CHECK_THROWS_AS(packet_from_json("{"), InputError);
  CHECK_THROWS_AS(packet_from_json("[]"), InputError);
  auto edit = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  CHECK_THROWS_AS(packet_from_json(edit("\"schema_version\":1", "\"schema_version\":2")), InputError);
  CHECK_THROWS_AS(packet_from_json(edit("\"3R\"", "\"5R\"")), InputError);
  CHECK_THROWS_AS(packet_from_json(edit("\"beta\":null", "\"beta\":[0,0]")), InputError);
  CHECK_THROWS_AS(packet_from_json(edit("\"data\":[0,0,0,0]", "\"data\":[0,0,0]")), InputError);
  CHECK_THROWS_AS(packet_from_json(edit("\"n_cum\":0,", "")), InputError);
  CHECK_THROWS_AS(packet_from_json(edit("\"gamma\":[0,0]", "\"gamma\":[0,\"x\"]")), InputError);
}

TEST_CASE("non-finite values are refused") {
  RelayPacket p = RelayPacket::start(Protocol::OneR, 2);
  p.cumulants.h(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(packet_to_json(p), InputError);
}

TEST_CASE("json quoting") {
  CHECK(json_quote("a\"b\\c\n") == "\"a\\\"b\\\\c\\n\"");
  CHECK(json_quote(std::string(1, '\x01')) == "\"\\u0001\"");
}

}  // TEST_SUITE
