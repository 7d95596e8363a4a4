// Site dataset CSV format: header `Y,A,X1,...,Xd`, comma delimited, one
// subject per row. Y and A are integers in {0,1}; covariates are decimals.
// Any missing or malformed cell is a fatal InputError naming row and column.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "cola/model.hpp"

namespace cola {

SiteDataset parse_site_csv(std::string_view text, std::string site_id);
SiteDataset read_site_csv(const std::filesystem::path& path);
SiteDataset read_site_csv(const std::filesystem::path& path, std::string site_id);

/// Writes covariates (not the implicit intercept) with shortest round-trip
/// decimals, so parse(write(ds)) reproduces every value exactly.
std::string format_site_csv(const SiteDataset& dataset);
void write_site_csv(const std::filesystem::path& path, const SiteDataset& dataset);

/// Shortest decimal that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace cola
