#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace popinterp {

/// A parsed CSV file: header names and string cells. `lines[i]` is the
/// 1-based line number of row i (the header is line 1).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  /// Column index by name, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF, blank lines skipped.
/// Throws ValidationError on ragged rows or an unterminated quote.
CsvTable parse_csv(std::istream& in, const std::string& source = "<stream>");
CsvTable read_csv(const std::filesystem::path& path);

/// Shortest representation that reads back to the same double ("inf",
/// "-inf", "nan" for the special values).
std::string format_number(double v);

/// Parses a whole cell as a double. Accepts "inf"/"infinity" in any case.
std::optional<double> parse_number(std::string_view s);

/// Builds CSV text row by row with minimal quoting.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  CsvWriter& cell(std::string_view s);
  CsvWriter& cell(double v);
  CsvWriter& cell(std::size_t v);
  /// Empty cell.
  CsvWriter& blank();
  void end_row();
  const std::string& str() const { return text_; }

 private:
  std::string text_;
  bool first_ = true;
};

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);
std::string read_file(const std::filesystem::path& path);
/// fnv1a64 of the file contents, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Directory names safe for any geo id: [A-Za-z0-9._-] kept, others
/// replaced by '_'.
std::string safe_name(std::string_view id);

}  // namespace popinterp
