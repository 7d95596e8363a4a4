#include "cola/packet.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cola/csv.hpp"
#include "json.hpp"

namespace cola {

std::string json_quote(std::string_view text) {
  std::string out = "\"";
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    switch (ch) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\r':
        out += "\\r";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += ch;
        }
    }
  }
  out += '"';
  return out;
}

namespace {

void put_number(std::string& out, double v) {
  if (!std::isfinite(v)) throw InputError("relay packet: cannot encode a non-finite value");
  // "-0" would come back as the integer 0 and lose its sign.
  if (v == 0.0 && std::signbit(v)) {
    out += "-0.0";
    return;
  }
  out += format_double(v);
}

void put_vector(std::string& out, const Vector& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    put_number(out, v(i));
  }
  out += ']';
}

void put_optional_vector(std::string& out, const std::optional<Vector>& v) {
  if (v) {
    put_vector(out, *v);
  } else {
    out += "null";
  }
}

void put_matrix(std::string& out, const Matrix& m) {
  out += "{\"dim\":" + std::to_string(m.rows()) + ",\"rows\":" + std::to_string(m.rows()) +
         ",\"cols\":" + std::to_string(m.cols()) + ",\"data\":[";
  bool first = true;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!first) out += ',';
      first = false;
      put_number(out, m(r, c));
    }
  }
  out += "]}";
}

using json = nlohmann::json;

const json& field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(std::string("relay packet: missing field '") + key + "'");
  return *it;
}

double get_number(const json& j, const char* what) {
  if (!j.is_number()) throw InputError(std::string("relay packet: ") + what + " must be numeric");
  return j.get<double>();
}

Vector get_vector(const json& j, const char* what) {
  if (!j.is_array()) throw InputError(std::string("relay packet: ") + what + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_number(j[i], what);
  return v;
}

std::optional<Vector> get_optional_vector(const json& j, const char* what) {
  if (j.is_null()) return std::nullopt;
  return get_vector(j, what);
}

Matrix get_matrix(const json& j, const char* what) {
  if (!j.is_object()) throw InputError(std::string("relay packet: ") + what + " must be an object");
  const auto rows = field(j, "rows").get<long long>();
  const auto cols = field(j, "cols").get<long long>();
  const auto dim = field(j, "dim").get<long long>();
  if (rows < 0 || cols < 0 || rows != dim || cols != dim) {
    throw InputError(std::string("relay packet: ") + what + " must be square with rows = cols = dim");
  }
  const Vector data = get_vector(field(j, "data"), what);
  if (data.size() != rows * cols) {
    throw InputError(std::string("relay packet: ") + what + " data length does not match its shape");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data(r * cols + c);
  }
  return m;
}

}  // namespace

std::string packet_to_json(const RelayPacket& p) {
  validate_packet(p);
  std::string out;
  out.reserve(4096);
  out += "{\"schema_version\":" + std::to_string(p.schema_version);
  out += ",\"protocol\":" + json_quote(to_string(p.protocol));
  out += ",\"round\":" + std::to_string(p.round);
  out += ",\"site_index\":" + std::to_string(p.site_index);
  out += ",\"site_trail\":[";
  for (std::size_t i = 0; i < p.cumulants.sites.size(); ++i) {
    if (i) out += ',';
    out += json_quote(p.cumulants.sites[i]);
  }
  out += "],\"n_cum\":" + std::to_string(p.cumulants.n);
  out += ",\"theta\":{\"gamma\":";
  put_vector(out, p.gamma);
  out += ",\"beta\":";
  put_optional_vector(out, p.beta);
  out += "},\"gamma_global\":";
  put_optional_vector(out, p.gamma_global);
  out += ",\"beta_global\":";
  put_optional_vector(out, p.beta_global);
  out += ",\"H_cum\":";
  put_matrix(out, p.cumulants.h);
  out += ",\"V_cum\":";
  if (p.cumulants.v) {
    put_matrix(out, *p.cumulants.v);
  } else {
    out += "null";
  }
  out += ",\"converged_so_far\":";
  out += p.converged_so_far ? "true" : "false";
  out += '}';
  return out;
}

RelayPacket packet_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw InputError(std::string("relay packet: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("relay packet: top level must be an object");
  RelayPacket p;
  try {
    p.schema_version = field(j, "schema_version").get<int>();
    p.protocol = parse_protocol(field(j, "protocol").get<std::string>());
    p.round = field(j, "round").get<int>();
    p.site_index = field(j, "site_index").get<int>();
    for (const auto& s : field(j, "site_trail")) p.cumulants.sites.push_back(s.get<std::string>());
    p.cumulants.n = field(j, "n_cum").get<long long>();
    const auto& theta = field(j, "theta");
    p.gamma = get_vector(field(theta, "gamma"), "theta.gamma");
    p.beta = get_optional_vector(field(theta, "beta"), "theta.beta");
    p.gamma_global = get_optional_vector(field(j, "gamma_global"), "gamma_global");
    p.beta_global = get_optional_vector(field(j, "beta_global"), "beta_global");
    p.cumulants.h = get_matrix(field(j, "H_cum"), "H_cum");
    const auto& v = field(j, "V_cum");
    if (!v.is_null()) p.cumulants.v = get_matrix(v, "V_cum");
    p.converged_so_far = field(j, "converged_so_far").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(std::string("relay packet: ") + e.what());
  }
  validate_packet(p);
  return p;
}

RelayPacket read_packet(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open packet '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return packet_from_json(buf.str());
}

void write_packet(const std::filesystem::path& path, const RelayPacket& packet) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write packet '" + path.string() + "'");
  out << packet_to_json(packet) << '\n';
}

}  // namespace cola
