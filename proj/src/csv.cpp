#include "cola/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace cola {

std::string format_double(double value) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) {
    throw InputError("format_double: conversion failed");
  }
  return std::string(buf.data(), ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

[[noreturn]] void cell_error(std::size_t line_no, std::size_t col, std::string_view header,
                             const std::string& why) {
  std::ostringstream os;
  os << "CSV row " << line_no << ", column " << (col + 1) << " (" << header << "): " << why;
  throw InputError(os.str());
}

}  // namespace

SiteDataset parse_site_csv(std::string_view text, std::string site_id) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
    text.remove_prefix(3);
  }
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) {
    throw InputError("CSV is empty: expected header Y,A,X1,...,Xd");
  }

  const auto header = split_commas(lines[0]);
  if (header.size() < 2 || header[0] != "Y" || header[1] != "A") {
    throw InputError("CSV header must start with Y,A");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 2] != "X" + std::to_string(j + 1)) {
      throw InputError("CSV header column " + std::to_string(j + 3) + " must be X" +
                       std::to_string(j + 1) + ", got '" + std::string(header[j + 2]) + "'");
    }
  }

  const std::size_t n = lines.size() - 1;
  if (n == 0) {
    throw InputError("CSV has a header but no data rows");
  }
  Vector y(static_cast<Eigen::Index>(n));
  Vector a(static_cast<Eigen::Index>(n));
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = r + 2;
    const auto cells = split_commas(lines[r + 1]);
    if (cells.size() != header.size()) {
      std::ostringstream os;
      os << "CSV row " << line_no << ": expected " << header.size() << " cells, found "
         << cells.size();
      throw InputError(os.str());
    }
    const auto ri = static_cast<Eigen::Index>(r);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = cells[c];
      if (cell.empty()) cell_error(line_no, c, header[c], "missing value");
      if (c < 2) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || ptr != cell.data() + cell.size() || (v != 0 && v != 1)) {
          cell_error(line_no, c, header[c], "expected 0 or 1, got '" + std::string(cell) + "'");
        }
        (c == 0 ? y : a)(ri) = static_cast<double>(v);
      } else {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
          cell_error(line_no, c, header[c], "expected a decimal number, got '" + std::string(cell) + "'");
        }
        x(ri, static_cast<Eigen::Index>(c - 2)) = v;
      }
    }
  }
  return SiteDataset::create(std::move(y), std::move(a), std::move(x), std::move(site_id));
}

SiteDataset read_site_csv(const std::filesystem::path& path, std::string site_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open site CSV '" + path.string() + "'");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_site_csv(buf.str(), std::move(site_id));
}

SiteDataset read_site_csv(const std::filesystem::path& path) {
  return read_site_csv(path, path.stem().string());
}

std::string format_site_csv(const SiteDataset& dataset) {
  if (dataset.outcome_type() != OutcomeType::binary) {
    throw InputError("site CSV format carries binary outcomes only");
  }
  std::string out = "Y,A";
  const auto d = dataset.covariate_dim();
  for (std::size_t j = 0; j < d; ++j) out += ",X" + std::to_string(j + 1);
  out += '\n';
  const Matrix& x = dataset.covariates();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out += dataset.outcome()(i) == 1.0 ? '1' : '0';
    out += ',';
    out += dataset.treatment()(i) == 1.0 ? '1' : '0';
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out += ',';
      out += format_double(x(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_site_csv(const std::filesystem::path& path, const SiteDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write site CSV '" + path.string() + "'");
  }
  out << format_site_csv(dataset);
}

}  // namespace cola
