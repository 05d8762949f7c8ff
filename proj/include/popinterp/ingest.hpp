#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "popinterp/functionals.hpp"
#include "popinterp/io.hpp"

namespace popinterp {

enum class RowKind { bin, mean, median, quantile, gini, population };

std::string kind_name(RowKind k);
std::optional<RowKind> parse_kind(std::string_view s);

/// One validated estimate row. MOEs are converted on ingestion, so only the
/// standard error is kept; it is empty only on population rows published
/// without one.
struct EstimateTableRow {
  std::string geo_id;
  RowKind kind = RowKind::bin;
  std::optional<double> lower;
  /// +infinity for the open top bin.
  std::optional<double> upper;
  /// Quantile level; 0.5 on median rows.
  std::optional<double> tau;
  double value = 0.0;
  std::optional<double> se;
  bool held_out = false;
  /// Line number in the source file (not part of equality).
  std::size_t line = 0;

  bool operator==(const EstimateTableRow& o) const {
    return geo_id == o.geo_id && kind == o.kind && lower == o.lower && upper == o.upper &&
           tau == o.tau && value == o.value && se == o.se && held_out == o.held_out;
  }
};

constexpr double kMoeToSe = 1.645;

struct IngestOptions {
  /// Zero SEs become se_floor * max(|value|, 1).
  double se_floor = 1e-6;
};

struct EstimateTable {
  std::vector<EstimateTableRow> rows;
  /// Geo ids in order of first appearance.
  std::vector<std::string> geos;
  /// Geo ids whose bin values were read as percents.
  std::vector<std::string> percent_geos;
  std::vector<std::string> warnings;

  std::vector<const EstimateTableRow*> rows_for(const std::string& geo) const;
};

/// Reads the estimate schema
///   geo_id,kind,lower,upper,tau,value,moe,se[,held_out]
/// (column order free; lower/upper/tau/moe/se/held_out may be omitted when
/// never needed). Validation errors name the line.
EstimateTable parse_estimates(std::istream& in, const IngestOptions& opts = {},
                              const std::string& source = "<stream>");
EstimateTable ingest_estimates(const std::filesystem::path& path, const IngestOptions& opts = {});

/// Canonical CSV of a typed table: full header, se column only, explicit
/// held_out. Reading it back yields an identical table.
std::string canonical_estimates_csv(const EstimateTable& table);

/// Estimates of one area arranged for the models.
struct GeoEstimates {
  std::string geo_id;
  /// Contiguous bins covering [0, inf), as published (proportions).
  std::vector<EstimateRecord> bins;
  std::optional<EstimateRecord> mean;
  std::optional<EstimateRecord> median;
  /// Non-median quantiles that enter the likelihood.
  std::vector<EstimateRecord> quantiles;
  std::optional<double> population;
  std::optional<double> population_se;
  /// Rows excluded from the likelihood, kept for evaluation.
  std::vector<EstimateTableRow> held_out;
};

/// Throws ValidationError naming the geo for missing or non-contiguous bins,
/// duplicate mean/median/population rows or repeated quantile levels.
GeoEstimates geo_estimates(const EstimateTable& table, const std::string& geo);

/// Bin shares renormalized to sum to one.
std::vector<double> renormalized_bins(const std::vector<EstimateRecord>& bins);

struct PumsRow {
  double income;
  double weight;
  std::string puma_id;
  bool operator==(const PumsRow&) const = default;
};

/// Reads income,weight,puma_id. Incomes must be finite and >= 0, weights
/// finite and > 0.
std::vector<PumsRow> parse_pums(std::istream& in, const std::string& source = "<stream>");
std::vector<PumsRow> ingest_pums(const std::filesystem::path& path);

}  // namespace popinterp
