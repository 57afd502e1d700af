#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace synthplankton {

/// One row of the results table.
struct RunReport {
  std::string gan_model;
  std::int64_t data_size = 0;
  std::string resolution;  // "HxW"
  std::int64_t iterations = 0;
  int batch_size = 0;
  std::string training_time;  // "DDd HHh MMm"
  double fid = 0.0;
  double kid = 0.0;
  std::string device_label;

  bool operator==(const RunReport&) const = default;
};

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

/// Whole minutes, e.g. 77400 s -> "00d 21h 30m".
std::string format_training_time(double seconds);

enum class TableFormat { csv, markdown };
TableFormat parse_table_format(const std::string& text);

/// Rows in input order. FID and KID use three decimals; the markdown form
/// bolds the smallest FID and the smallest KID (every tied cell).
std::string emit_table(std::span<const RunReport> reports, TableFormat format);

/// Inverse of the csv form of emit_table (numbers come back rounded to three
/// decimals).
std::vector<RunReport> parse_table_csv(const std::string& text);

}  // namespace synthplankton
