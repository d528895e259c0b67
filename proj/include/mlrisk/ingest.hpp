#pragma once

// Loan records: calendar months, CSV parsing/writing, synthetic datasets and
// default-rate summaries.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mlrisk/csv.hpp"
#include "mlrisk/error.hpp"

namespace mlrisk {

/// A calendar month stored as a running month count (year * 12 + month - 1).
class YearMonth {
 public:
  static constexpr int kMinYear = 1980;
  static constexpr int kMaxYear = 2100;

  constexpr YearMonth() = default;

  static YearMonth from_year_month(int year, int month) {
    if (year < kMinYear || year > kMaxYear || month < 1 || month > 12) {
      throw ValidationError("month " + std::to_string(year) + "-" +
                            std::to_string(month) + " outside 1980-01..2100-12");
    }
    YearMonth ym;
    ym.serial_ = year * 12 + (month - 1);
    return ym;
  }

  /// Parses the strict `YYYY-MM` form.
  static YearMonth parse(std::string_view text) {
    auto digit = [](char c) { return c >= '0' && c <= '9'; };
    if (text.size() != 7 || text[4] != '-' ||
        !std::all_of(text.begin(), text.begin() + 4, digit) ||
        !digit(text[5]) || !digit(text[6])) {
      throw ValidationError("bad month '" + std::string(text) + "', expected YYYY-MM");
    }
    const int year = (text[0] - '0') * 1000 + (text[1] - '0') * 100 +
                     (text[2] - '0') * 10 + (text[3] - '0');
    const int month = (text[5] - '0') * 10 + (text[6] - '0');
    return from_year_month(year, month);
  }

  int year() const noexcept { return serial_ / 12; }
  int month() const noexcept { return serial_ % 12 + 1; }
  int serial() const noexcept { return serial_; }

  YearMonth plus_months(int n) const {
    YearMonth ym;
    ym.serial_ = serial_ + n;
    if (ym.year() < kMinYear || ym.year() > kMaxYear) {
      throw ValidationError("month arithmetic left the 1980..2100 range");
    }
    return ym;
  }

  /// Number of months from `other` to this month.
  int months_since(YearMonth other) const noexcept { return serial_ - other.serial_; }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year(), month());
    return buf;
  }

  friend constexpr auto operator<=>(YearMonth, YearMonth) = default;

 private:
  int serial_ = kMinYear * 12;
};

struct LoanRecord {
  std::string loan_id;
  YearMonth grant_month;
  std::string district;
  std::string product;
  bool defaulted = false;

  friend bool operator==(const LoanRecord&, const LoanRecord&) = default;
};

inline constexpr std::string_view kRecordHeader = "loan_id,grant_month,district,product,defaulted";

/// Reads the loan CSV. `source` names the input in error messages.
inline std::vector<LoanRecord> parse_records(std::istream& in,
                                             const std::string& source = "<stream>") {
  std::vector<LoanRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;

  auto fail = [&](const std::string& msg) -> ValidationError {
    return ValidationError(source + ":" + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kRecordHeader) {
        throw fail("expected header '" + std::string(kRecordHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> f;
    try {
      f = csv::split_line(line, line_no);
    } catch (const ValidationError& e) {
      throw ValidationError(source + ": " + e.what());
    }
    if (f.size() != 5) {
      throw fail("expected 5 fields, found " + std::to_string(f.size()));
    }
    LoanRecord r;
    r.loan_id = std::move(f[0]);
    if (r.loan_id.empty()) throw fail("empty loan_id");
    try {
      r.grant_month = YearMonth::parse(f[1]);
    } catch (const ValidationError& e) {
      throw fail(e.what());
    }
    r.district = std::move(f[2]);
    r.product = std::move(f[3]);
    if (r.district.empty()) throw fail("empty district");
    if (r.product.empty()) throw fail("empty product");
    if (f[4] == "1") {
      r.defaulted = true;
    } else if (f[4] != "0") {
      throw fail("defaulted must be 0 or 1, got '" + f[4] + "'");
    }
    if (!seen.insert(r.loan_id).second) throw fail("duplicate loan_id '" + r.loan_id + "'");
    out.push_back(std::move(r));
  }
  if (in.bad()) throw IoError(source + ": read failure");
  if (!header_seen) throw ValidationError(source + ": missing header");
  return out;
}

inline std::vector<LoanRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_records(in, path.string());
}

inline void write_records(std::ostream& os, std::span<const LoanRecord> records) {
  os << kRecordHeader << '\n';
  for (const auto& r : records) {
    os << csv::join(r.loan_id, r.grant_month.to_string(), r.district, r.product)
       << ',' << (r.defaulted ? '1' : '0') << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Multiplies the default probability of matching loans during
/// [first_month, last_month] (offsets from the config's start month).
struct RiskySegment {
  std::optional<std::size_t> product;
  std::optional<std::size_t> district;
  double multiplier = 1.0;
  int first_month = 0;
  int last_month = 0;

  bool matches(std::size_t p, std::size_t d, int month_offset) const noexcept {
    return (!product || *product == p) && (!district || *district == d) &&
           month_offset >= first_month && month_offset <= last_month;
  }
};

struct SynthConfig {
  std::size_t n_loans = 10000;
  std::size_t n_products = 10;
  std::size_t n_districts = 20;
  int span_months = 159;
  YearMonth start_month = YearMonth::from_year_month(2000, 1);
  double base_default_rate = 0.1;
  std::vector<RiskySegment> risky_segments;
  std::uint64_t seed = 1;

  /// Upper bound on any loan's default probability (all segments stacked).
  double max_default_probability() const {
    double p = base_default_rate;
    for (const auto& s : risky_segments) p *= std::max(1.0, s.multiplier);
    return p;
  }

  void validate() const {
    if (n_loans == 0 || n_products == 0 || n_districts == 0) {
      throw ValidationError("synth config: loan, product and district counts must be positive");
    }
    if (span_months < 1) throw ValidationError("synth config: span_months must be >= 1");
    // Fails if the span leaves the supported calendar range.
    (void)start_month.plus_months(span_months - 1);
    if (!(base_default_rate >= 0.0 && base_default_rate <= 1.0)) {
      throw ValidationError("synth config: base_default_rate must lie in [0, 1]");
    }
    for (const auto& s : risky_segments) {
      if (!std::isfinite(s.multiplier) || s.multiplier < 0.0) {
        throw ValidationError("synth config: segment multiplier must be finite and >= 0");
      }
      if (s.product && *s.product >= n_products) {
        throw ValidationError("synth config: segment product index out of range");
      }
      if (s.district && *s.district >= n_districts) {
        throw ValidationError("synth config: segment district index out of range");
      }
      if (s.first_month < 0 || s.last_month < s.first_month || s.last_month >= span_months) {
        throw ValidationError("synth config: segment month range must satisfy 0 <= first <= last < span");
      }
    }
    if (max_default_probability() > 1.0) {
      throw ValidationError("synth config: infeasible, stacked segment multipliers push the "
                            "default probability above 1");
    }
  }
};

namespace detail {
inline std::string padded_label(char prefix, std::size_t index, std::size_t count) {
  const int width = static_cast<int>(std::to_string(count > 0 ? count - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, std::max(width, 2), index);
  return buf;
}
}  // namespace detail

inline std::string product_label(std::size_t i, const SynthConfig& cfg) {
  return detail::padded_label('P', i, cfg.n_products);
}
inline std::string district_label(std::size_t i, const SynthConfig& cfg) {
  return detail::padded_label('D', i, cfg.n_districts);
}

/// Deterministic for a given config (including seed). Records come out in
/// grant-month order with sequential ids.
inline std::vector<LoanRecord> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> month_dist(0, cfg.span_months - 1);
  std::uniform_int_distribution<std::size_t> product_dist(0, cfg.n_products - 1);
  std::uniform_int_distribution<std::size_t> district_dist(0, cfg.n_districts - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Draw {
    int month;
    std::size_t product;
    std::size_t district;
  };
  std::vector<Draw> draws(cfg.n_loans);
  for (auto& d : draws) {
    d.month = month_dist(rng);
    d.product = product_dist(rng);
    d.district = district_dist(rng);
  }
  std::stable_sort(draws.begin(), draws.end(),
                   [](const Draw& a, const Draw& b) { return a.month < b.month; });

  const std::size_t id_width = std::max<std::size_t>(6, std::to_string(cfg.n_loans).size());
  std::vector<LoanRecord> out;
  out.reserve(cfg.n_loans);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto& d = draws[i];
    double p = cfg.base_default_rate;
    for (const auto& s : cfg.risky_segments) {
      if (s.matches(d.product, d.district, d.month)) p *= s.multiplier;
    }
    char id[48];
    std::snprintf(id, sizeof id, "L%0*zu", static_cast<int>(id_width), i + 1);
    LoanRecord r;
    r.loan_id = id;
    r.grant_month = cfg.start_month.plus_months(d.month);
    r.district = district_label(d.district, cfg);
    r.product = product_label(d.product, cfg);
    r.defaulted = unit(rng) < p;
    out.push_back(std::move(r));
  }
  return out;
}

inline void to_json(nlohmann::json& j, const RiskySegment& s) {
  j = nlohmann::json{{"multiplier", s.multiplier},
                     {"first_month", s.first_month},
                     {"last_month", s.last_month}};
  j["product"] = s.product ? nlohmann::json(*s.product) : nlohmann::json(nullptr);
  j["district"] = s.district ? nlohmann::json(*s.district) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, RiskySegment& s) {
  s = RiskySegment{};
  if (j.contains("product") && !j.at("product").is_null()) s.product = j.at("product").get<std::size_t>();
  if (j.contains("district") && !j.at("district").is_null()) s.district = j.at("district").get<std::size_t>();
  s.multiplier = j.at("multiplier").get<double>();
  s.first_month = j.at("first_month").get<int>();
  s.last_month = j.at("last_month").get<int>();
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_loans", c.n_loans},
                     {"n_products", c.n_products},
                     {"n_districts", c.n_districts},
                     {"span_months", c.span_months},
                     {"start_month", c.start_month.to_string()},
                     {"base_default_rate", c.base_default_rate},
                     {"risky_segments", c.risky_segments},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  if (j.contains("n_loans")) c.n_loans = j.at("n_loans").get<std::size_t>();
  if (j.contains("n_products")) c.n_products = j.at("n_products").get<std::size_t>();
  if (j.contains("n_districts")) c.n_districts = j.at("n_districts").get<std::size_t>();
  if (j.contains("span_months")) c.span_months = j.at("span_months").get<int>();
  if (j.contains("start_month")) c.start_month = YearMonth::parse(j.at("start_month").get<std::string>());
  if (j.contains("base_default_rate")) c.base_default_rate = j.at("base_default_rate").get<double>();
  if (j.contains("risky_segments")) c.risky_segments = j.at("risky_segments").get<std::vector<RiskySegment>>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

inline SynthConfig read_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    SynthConfig cfg = nlohmann::json::parse(in).get<SynthConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Default rates

struct RateFilter {
  std::optional<std::string> district;
  std::optional<std::string> product;
  std::optional<YearMonth> first_month;  // inclusive
  std::optional<YearMonth> last_month;   // inclusive

  bool matches(const LoanRecord& r) const {
    return (!district || r.district == *district) && (!product || r.product == *product) &&
           (!first_month || r.grant_month >= *first_month) &&
           (!last_month || r.grant_month <= *last_month);
  }
};

struct RateSummary {
  double rate = 0.0;
  std::size_t matches = 0;
  std::size_t defaults = 0;
  bool empty = true;  // no record matched; rate reported as 0
};

inline RateSummary default_rate(std::span<const LoanRecord> records, const RateFilter& filter = {}) {
  RateSummary s;
  for (const auto& r : records) {
    if (!filter.matches(r)) continue;
    ++s.matches;
    if (r.defaulted) ++s.defaults;
  }
  s.empty = s.matches == 0;
  s.rate = s.empty ? 0.0 : static_cast<double>(s.defaults) / static_cast<double>(s.matches);
  return s;
}

}  // namespace mlrisk
