#include <charconv>
#include <cmath>
#include <fstream>

#include "gploo/error.hpp"
#include "gploo/report.hpp"

namespace gploo {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json to_json(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

Json to_json(const LooReport& r) {
  Json j;
  j["method"] = r.method;
  j["n"] = r.n();
  j["sum_lpd"] = number(r.sum_lpd);
  if (r.p_eff) j["p_eff"] = number(*r.p_eff);
  j["lpd"] = to_json(r.lpd);
  j["cpo"] = to_json(r.cpo);
  if (r.pit) j["pit"] = to_json(*r.pit);
  Json f = Json::array();
  for (const PointFailure& p : r.failures) f.push_back({{"index", p.index}, {"reason", p.reason}});
  j["failures"] = f;
  j["unstable"] = r.unstable;
  j["warnings"] = r.warnings;
  return j;
}

Json to_json(const ComparisonStats& c) {
  Json j;
  j["bias"] = number(c.bias);
  j["std"] = number(c.std);
  j["n_compared"] = c.n_compared;
  j["excluded"] = c.excluded;
  j["delta"] = to_json(c.delta);
  return j;
}

Json to_json(const Diagnostics& d) {
  Json j;
  j["p_eff"] = number(d.p_eff);
  j["p_eff_over_n"] = number(d.p_eff_over_n);
  j["flagged_points"] = d.flagged_points;
  j["warnings"] = d.warnings;
  return j;
}

Json to_json(const HyperParams& h) {
  Json j = Json::object();
  const VectorXd c = h.constrained();
  for (std::size_t i = 0; i < h.names.size(); ++i)
    j[h.names[i]] = {{"log", number(h.values(i))}, {"value", number(c(i))}};
  return j;
}

Json to_json(const WeightedSampleSet& w) {
  Json j;
  j["source"] = to_string(w.source);
  j["size"] = w.size();
  j["names"] = w.names;
  Json s = Json::array();
  for (const VectorXd& v : w.samples) s.push_back(to_json(v));
  j["samples"] = s;
  j["log_weights"] = to_json(w.log_weights);
  j["normalized_weights"] = to_json(w.normalized_weights());
  j["warnings"] = w.warnings;
  return j;
}

Json to_json(const WeightDiagnostics& d) {
  Json j;
  j["min_relative_ess"] = number(d.min_relative_ess);
  j["relative_ess"] = to_json(d.relative_ess);
  if (d.khat) {
    j["khat_max"] = number(d.khat_max);
    j["khat"] = to_json(*d.khat);
  }
  j["warnings"] = d.warnings;
  return j;
}

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::InvalidInput, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorKind::InvalidInput, "failed writing '" + path + "'");
}

void write_json(const std::string& path, const Json& doc) { write_text(path, doc.dump(2) + "\n"); }

}  // namespace gploo
