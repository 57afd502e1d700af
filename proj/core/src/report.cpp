#include "synthplankton/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "synthplankton/error.hpp"

namespace synthplankton {

namespace {

const std::vector<std::string> kColumns = {"GAN Model",  "Data Size", "Resolution", "Iterations", "Batch Size",
                                           "Training Time", "FID",    "KID",        "GPU Model"};

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void to_json(nlohmann::json& j, const RunReport& r) {
  j = {{"gan_model", r.gan_model},   {"data_size", r.data_size},         {"resolution", r.resolution},
       {"iterations", r.iterations}, {"batch_size", r.batch_size},       {"training_time", r.training_time},
       {"fid", r.fid},               {"kid", r.kid},                     {"device_label", r.device_label}};
}

void from_json(const nlohmann::json& j, RunReport& r) {
  j.at("gan_model").get_to(r.gan_model);
  j.at("data_size").get_to(r.data_size);
  j.at("resolution").get_to(r.resolution);
  j.at("iterations").get_to(r.iterations);
  j.at("batch_size").get_to(r.batch_size);
  j.at("training_time").get_to(r.training_time);
  j.at("fid").get_to(r.fid);
  j.at("kid").get_to(r.kid);
  j.at("device_label").get_to(r.device_label);
}

std::string format_training_time(double seconds) {
  if (!std::isfinite(seconds) || seconds < 0) seconds = 0;
  const auto minutes = static_cast<long long>(std::floor(seconds / 60.0));
  const long long d = minutes / (24 * 60);
  const long long h = (minutes / 60) % 24;
  const long long m = minutes % 60;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%02lldd %02lldh %02lldm", d, h, m);
  return buf;
}

TableFormat parse_table_format(const std::string& text) {
  if (text == "csv") return TableFormat::csv;
  if (text == "markdown" || text == "md") return TableFormat::markdown;
  throw Error("unknown table format '" + text + "' (expected csv or markdown)");
}

std::string emit_table(std::span<const RunReport> reports, TableFormat format) {
  if (reports.empty()) throw Error("emit_table: no reports");
  std::ostringstream out;
  if (format == TableFormat::csv) {
    for (std::size_t c = 0; c < kColumns.size(); ++c) out << (c ? "," : "") << kColumns[c];
    out << "\n";
    for (const auto& r : reports) {
      out << csv_field(r.gan_model) << ',' << r.data_size << ',' << csv_field(r.resolution) << ',' << r.iterations << ','
          << r.batch_size << ',' << csv_field(r.training_time) << ',' << fixed3(r.fid) << ',' << fixed3(r.kid) << ','
          << csv_field(r.device_label) << "\n";
    }
    return out.str();
  }

  double min_fid = reports[0].fid;
  double min_kid = reports[0].kid;
  for (const auto& r : reports) {
    min_fid = std::min(min_fid, r.fid);
    min_kid = std::min(min_kid, r.kid);
  }
  out << "|";
  for (const auto& c : kColumns) out << ' ' << c << " |";
  out << "\n|";
  for (std::size_t c = 0; c < kColumns.size(); ++c) out << (c == 1 || c == 3 || c == 4 || c == 6 || c == 7 ? "---:|" : "---|");
  out << "\n";
  for (const auto& r : reports) {
    const std::string fid = r.fid == min_fid ? "**" + fixed3(r.fid) + "**" : fixed3(r.fid);
    const std::string kid = r.kid == min_kid ? "**" + fixed3(r.kid) + "**" : fixed3(r.kid);
    out << "| " << md_cell(r.gan_model) << " | " << r.data_size << " | " << md_cell(r.resolution) << " | "
        << r.iterations << " | " << r.batch_size << " | " << md_cell(r.training_time) << " | " << fid << " | " << kid
        << " | " << md_cell(r.device_label) << " |\n";
  }
  return out.str();
}

std::vector<RunReport> parse_table_csv(const std::string& text) {
  auto rows = parse_csv_rows(text);
  if (rows.empty() || rows[0] != kColumns) throw Error("csv: missing or unexpected header");
  std::vector<RunReport> reports;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != kColumns.size())
      throw Error("csv: row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
    RunReport r;
    r.gan_model = f[0];
    r.data_size = std::stoll(f[1]);
    r.resolution = f[2];
    r.iterations = std::stoll(f[3]);
    r.batch_size = std::stoi(f[4]);
    r.training_time = f[5];
    r.fid = std::stod(f[6]);
    r.kid = std::stod(f[7]);
    r.device_label = f[8];
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace synthplankton
