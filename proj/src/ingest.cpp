#include "popinterp/ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>

#include "popinterp/errors.hpp"
#include "popinterp/model.hpp"

namespace popinterp {

namespace {

constexpr std::array<std::string_view, 6> kKindNames{"bin",      "mean", "median",
                                                     "quantile", "gini", "population"};

constexpr std::array<std::string_view, 9> kEstimateColumns{
    "geo_id", "kind", "lower", "upper", "tau", "value", "moe", "se", "held_out"};

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<bool> parse_bool(std::string_view s) {
  const auto v = lowercase(s);
  if (v == "1" || v == "true" || v == "yes" || v == "y") return true;
  if (v == "0" || v == "false" || v == "no" || v == "n") return false;
  return std::nullopt;
}

}  // namespace

std::string kind_name(RowKind k) { return std::string(kKindNames[static_cast<std::size_t>(k)]); }

std::optional<RowKind> parse_kind(std::string_view s) {
  const auto v = lowercase(s);
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (v == kKindNames[i]) return static_cast<RowKind>(i);
  }
  return std::nullopt;
}

std::vector<const EstimateTableRow*> EstimateTable::rows_for(const std::string& geo) const {
  std::vector<const EstimateTableRow*> out;
  for (const auto& r : rows) {
    if (r.geo_id == geo) out.push_back(&r);
  }
  return out;
}

EstimateTable parse_estimates(std::istream& in, const IngestOptions& opts,
                              const std::string& source) {
  const CsvTable csv = parse_csv(in, source);
  for (const auto& h : csv.header) {
    if (std::find(kEstimateColumns.begin(), kEstimateColumns.end(), h) == kEstimateColumns.end()) {
      throw ValidationError(source + ": unknown column '" + h + "'");
    }
  }
  for (const char* required : {"geo_id", "kind", "value"}) {
    if (!csv.column(required)) {
      throw ValidationError(source + ": missing required column '" + required + "'");
    }
  }
  auto col = [&](std::string_view name) { return csv.column(name); };
  const auto c_geo = *col("geo_id"), c_kind = *col("kind"), c_value = *col("value");
  const auto c_lower = col("lower"), c_upper = col("upper"), c_tau = col("tau");
  const auto c_moe = col("moe"), c_se = col("se"), c_held = col("held_out");

  EstimateTable table;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& cells = csv.rows[i];
    const std::size_t line = csv.lines[i];
    auto fail = [&](const std::string& msg) -> ValidationError {
      return ValidationError(source + ": line " + std::to_string(line) + ": " + msg);
    };
    auto cell = [&](std::optional<std::size_t> c) -> std::string_view {
      return c ? std::string_view(cells[*c]) : std::string_view{};
    };
    auto number = [&](std::optional<std::size_t> c, const char* name) -> std::optional<double> {
      const auto s = cell(c);
      if (s.empty()) return std::nullopt;
      const auto v = parse_number(s);
      if (!v || std::isnan(*v)) throw fail(std::string("bad ") + name + " '" + std::string(s) + "'");
      return v;
    };

    EstimateTableRow row;
    row.line = line;
    row.geo_id = std::string(cell(c_geo));
    if (row.geo_id.empty()) throw fail("empty geo_id");
    const auto kind = parse_kind(cell(c_kind));
    if (!kind) throw fail("unknown kind '" + std::string(cell(c_kind)) + "'");
    row.kind = *kind;

    const auto value = number(c_value, "value");
    if (!value || !std::isfinite(*value)) throw fail("value must be a finite number");
    row.value = *value;

    const auto moe = number(c_moe, "moe");
    const auto se = number(c_se, "se");
    if (moe && se) throw fail("give either moe or se, not both");
    if (!moe && !se && row.kind != RowKind::population) throw fail("missing moe or se");
    if (moe) {
      if (!(*moe >= 0.0) || !std::isfinite(*moe)) throw fail("moe must be finite and >= 0");
      row.se = *moe / kMoeToSe;
    } else if (se) {
      if (!(*se >= 0.0) || !std::isfinite(*se)) throw fail("se must be finite and >= 0");
      row.se = *se;
    }

    const auto lower = number(c_lower, "lower");
    const auto upper = number(c_upper, "upper");
    const auto tau = number(c_tau, "tau");
    switch (row.kind) {
      case RowKind::bin:
        if (!lower || !std::isfinite(*lower) || *lower < 0.0) {
          throw fail("bin rows need a finite lower bound >= 0");
        }
        row.lower = *lower;
        row.upper = upper.value_or(HUGE_VAL);
        if (!(*row.upper > *lower)) throw fail("bin upper bound must exceed its lower bound");
        if (tau) throw fail("tau is only allowed on quantile and median rows");
        break;
      case RowKind::quantile:
      case RowKind::median:
        if (lower || upper) throw fail("lower/upper are only allowed on bin rows");
        if (row.kind == RowKind::quantile) {
          if (!tau || !(*tau > 0.0 && *tau < 1.0)) throw fail("quantile rows need tau in (0, 1)");
          row.tau = *tau;
          if (*tau == 0.5) row.kind = RowKind::median;
        } else {
          if (tau && *tau != 0.5) throw fail("median rows have tau 0.5");
          row.tau = 0.5;
        }
        break;
      default:
        if (lower || upper) throw fail("lower/upper are only allowed on bin rows");
        if (tau) throw fail("tau is only allowed on quantile and median rows");
        break;
    }
    if (row.kind == RowKind::population && row.value <= 0.0) {
      throw fail("population must be positive");
    }

    const auto held = cell(c_held);
    if (!held.empty()) {
      const auto b = parse_bool(held);
      if (!b) throw fail("bad held_out '" + std::string(held) + "'");
      row.held_out = *b;
    } else {
      row.held_out = row.kind == RowKind::gini || row.kind == RowKind::quantile;
    }
    if (row.kind == RowKind::gini && !row.held_out) {
      table.warnings.push_back(source + ": line " + std::to_string(line) +
                               ": gini rows are evaluation-only; treated as held out");
      row.held_out = true;
    }
    if (row.held_out && (row.kind == RowKind::bin || row.kind == RowKind::population)) {
      throw fail(kind_name(row.kind) + " rows cannot be held out");
    }

    if (std::find(table.geos.begin(), table.geos.end(), row.geo_id) == table.geos.end()) {
      table.geos.push_back(row.geo_id);
    }
    table.rows.push_back(std::move(row));
  }

  for (const auto& geo : table.geos) {
    bool percent = false;
    for (const auto& r : table.rows) {
      if (r.geo_id == geo && r.kind == RowKind::bin && r.value > 1.5) percent = true;
    }
    if (!percent) continue;
    table.percent_geos.push_back(geo);
    table.warnings.push_back(source + ": geo " + geo +
                             ": bin values above 1.5 read as percents and divided by 100");
    for (auto& r : table.rows) {
      if (r.geo_id != geo || r.kind != RowKind::bin) continue;
      r.value /= 100.0;
      if (r.se) *r.se /= 100.0;
    }
  }

  for (auto& r : table.rows) {
    if (r.se && *r.se == 0.0 && r.kind != RowKind::population) {
      r.se = opts.se_floor * std::max(std::abs(r.value), 1.0);
      table.warnings.push_back(source + ": line " + std::to_string(r.line) +
                               ": zero standard error floored at " + format_number(*r.se));
    }
    if (r.kind == RowKind::bin && (r.value < 0.0 || r.value > 1.0)) {
      throw ValidationError(source + ": line " + std::to_string(r.line) +
                            ": bin share outside [0, 1] after percent handling");
    }
  }
  return table;
}

EstimateTable ingest_estimates(const std::filesystem::path& path, const IngestOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_estimates(in, opts, path.string());
}

std::string canonical_estimates_csv(const EstimateTable& table) {
  CsvWriter w({kEstimateColumns.begin(), kEstimateColumns.end()});
  for (const auto& r : table.rows) {
    w.cell(r.geo_id).cell(kind_name(r.kind));
    if (r.lower) w.cell(*r.lower); else w.blank();
    if (r.upper && std::isfinite(*r.upper)) w.cell(*r.upper); else w.blank();
    if (r.tau) w.cell(*r.tau); else w.blank();
    w.cell(r.value).blank();
    if (r.se) w.cell(*r.se); else w.blank();
    w.cell(r.held_out ? "1" : "0");
    w.end_row();
  }
  return w.str();
}

GeoEstimates geo_estimates(const EstimateTable& table, const std::string& geo) {
  GeoEstimates g;
  g.geo_id = geo;
  auto fail = [&](const std::string& msg) { return ValidationError("geo " + geo + ": " + msg); };
  auto record = [&](const EstimateTableRow& r, EstimateKind kind) {
    EstimateRecord rec{kind, r.value, *r.se};
    try {
      validate(rec);
    } catch (const DomainError& e) {
      throw fail("line " + std::to_string(r.line) + ": " + e.what());
    }
    return rec;
  };

  std::vector<const EstimateTableRow*> bins;
  for (const auto* r : table.rows_for(geo)) {
    if (r->held_out) {
      g.held_out.push_back(*r);
      continue;
    }
    switch (r->kind) {
      case RowKind::bin:
        bins.push_back(r);
        break;
      case RowKind::mean:
        if (g.mean) throw fail("more than one mean row");
        g.mean = record(*r, MeanEstimate{});
        break;
      case RowKind::median:
        if (g.median) throw fail("more than one median row");
        g.median = record(*r, QuantileEstimate{0.5});
        break;
      case RowKind::quantile:
        for (const auto& q : g.quantiles) {
          if (std::get<QuantileEstimate>(q.kind).tau == *r->tau) {
            throw fail("repeated quantile level " + format_number(*r->tau));
          }
        }
        g.quantiles.push_back(record(*r, QuantileEstimate{*r->tau}));
        break;
      case RowKind::population:
        if (g.population) throw fail("more than one population row");
        g.population = r->value;
        g.population_se = r->se;
        break;
      case RowKind::gini:
        break;  // always held out
    }
  }
  if (bins.empty()) throw fail("no bin rows");
  std::stable_sort(bins.begin(), bins.end(),
                   [](const auto* a, const auto* b) { return *a->lower < *b->lower; });
  for (const auto* r : bins) g.bins.push_back(record(*r, BinProportion{*r->lower, *r->upper}));
  try {
    parse_bins(g.bins);
  } catch (const ValidationError& e) {
    throw fail(e.what());
  }
  return g;
}

std::vector<double> renormalized_bins(const std::vector<EstimateRecord>& bins) {
  std::vector<double> p;
  double total = 0.0;
  for (const auto& b : bins) {
    p.push_back(b.value);
    total += b.value;
  }
  if (!(total > 0.0)) throw DegenerateInputError("every bin estimate is zero");
  for (auto& v : p) v /= total;
  return p;
}

std::vector<PumsRow> parse_pums(std::istream& in, const std::string& source) {
  const CsvTable csv = parse_csv(in, source);
  const auto ci = csv.column("income"), cw = csv.column("weight"), cp = csv.column("puma_id");
  if (!ci || !cw || !cp) throw ValidationError(source + ": need columns income, weight, puma_id");
  std::vector<PumsRow> out;
  out.reserve(csv.rows.size());
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& cells = csv.rows[i];
    auto fail = [&](const std::string& msg) {
      return ValidationError(source + ": line " + std::to_string(csv.lines[i]) + ": " + msg);
    };
    const auto income = parse_number(cells[*ci]);
    const auto weight = parse_number(cells[*cw]);
    if (!income || !std::isfinite(*income) || *income < 0.0) {
      throw fail("income must be finite and >= 0");
    }
    if (!weight || !std::isfinite(*weight) || !(*weight > 0.0)) {
      throw fail("weight must be finite and > 0");
    }
    if (cells[*cp].empty()) throw fail("empty puma_id");
    out.push_back({*income, *weight, cells[*cp]});
  }
  return out;
}

std::vector<PumsRow> ingest_pums(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_pums(in, path.string());
}

}  // namespace popinterp
