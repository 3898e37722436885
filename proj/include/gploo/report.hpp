#pragma once

#include <string>

#include "gploo/hyper.hpp"
#include "gploo/loo.hpp"
#include "json.hpp"

namespace gploo {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// NaN and infinities become null.
Json number(double v);
Json to_json(const VectorXd& v);
Json to_json(const LooReport& r);
Json to_json(const ComparisonStats& c);
Json to_json(const Diagnostics& d);
Json to_json(const HyperParams& h);
Json to_json(const WeightedSampleSet& w);
Json to_json(const WeightDiagnostics& d);

/// Shortest decimal that round-trips, or "NA" for non-finite values.
std::string csv_number(double v);

/// Writes `doc` with two-space indentation and a trailing newline.
void write_json(const std::string& path, const Json& doc);
void write_text(const std::string& path, const std::string& text);

}  // namespace gploo
