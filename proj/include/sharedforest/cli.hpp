// Copyright 2026 The sharedforest Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration, posterior artifacts and the five commands behind the
// `sharedforest` executable: fit, predict, simulate, diagnose, compare.
//
// Every command writes into one output directory and finishes by writing
// manifest.json, which records the resolved configuration, the git blob hash
// of every input file and of every file written. Commands that read an
// artifact check it against the manifest next to it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sharedforest/data_io.hpp"
#include "sharedforest/error.hpp"
#include "sharedforest/evaluation.hpp"
#include "sharedforest/hash.hpp"
#include "sharedforest/models.hpp"
#include "sharedforest/tree_json.hpp"

namespace sharedforest::cli {

using nlohmann::json;

struct DataConfig {
  std::string train;
  DataSchema schema{"y", "", {}};
};

struct SimulateConfig {
  std::string design = "mixed";  // mixed | gamma_hurdle | lognormal_hurdle
  std::size_t n = 250;
  std::size_t p = 5;
  std::size_t test_n = 0;
  double sigma = 1.0;
  double sigma_theta = 4.0;
  HurdleDesign hurdle;
};

struct CompareConfig {
  std::vector<ComparisonCell> cells{{5, 4.0, 50}};
  std::size_t n = 250;
  double sigma = 1.0;
  std::size_t replications = 20;
  std::size_t loss_points = 10000;
  std::size_t threads = 0;
  bool lpml = true;
  std::size_t lpml_n = 500;
  std::size_t lpml_p = 10;
  HurdleDesign hurdle;
};

struct PredictConfig {
  std::string artifact;  // posterior.ndjson of a fit
  std::string data;
};

struct RunConfig {
  std::string command;
  ModelSpec model;
  ChainSettings chain;
  DataConfig data;
  SimulateConfig simulate;
  CompareConfig compare;
  PredictConfig predict;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

namespace detail {

/// Reads the fields of one JSON object, rejecting unknown keys and wrong
/// types with the dotted path of the field.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void get(const char* key, double& out) { read(key, [&](const json& v) {
      if (!v.is_number()) fail(key, "expected a number");
      out = v.get<double>();
    }); }
  void get(const char* key, std::size_t& out) { read(key, [&](const json& v) {
      if (!v.is_number_unsigned()) fail(key, "expected a nonnegative integer");
      out = v.get<std::size_t>();
    }); }
  void get(const char* key, bool& out) { read(key, [&](const json& v) {
      if (!v.is_boolean()) fail(key, "expected true or false");
      out = v.get<bool>();
    }); }
  void get(const char* key, std::string& out) { read(key, [&](const json& v) {
      if (!v.is_string()) fail(key, "expected a string");
      out = v.get<std::string>();
    }); }
  void get(const char* key, std::vector<std::string>& out) { read(key, [&](const json& v) {
      if (!v.is_array()) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }); }
  void get(const char* key, std::optional<double>& out) { read(key, [&](const json& v) {
      if (v.is_null()) out.reset();
      else if (v.is_number()) out = v.get<double>();
      else fail(key, "expected a number or null");
    }); }

  const json* object(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.push_back(key);
    return &j_.at(key);
  }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw ConfigError(child(k.c_str()) + ": unknown field");
  }

 private:
  template <class F>
  void read(const char* key, F&& f) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    f(j_.at(key));
  }
  [[noreturn]] void fail(const char* key, const std::string& msg) const { throw ConfigError(child(key) + ": " + msg); }
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void read_hurdle(const json& j, const std::string& path, HurdleDesign& h) {
  FieldReader r(j, path);
  std::string kind(to_string(h.kind));
  r.get("kind", kind);
  h.kind = parse_model_kind(kind);
  if (h.kind == ModelKind::MixedResponse) throw ConfigError(path + ".kind: must be a hurdle model");
  r.get("pi_offset", h.pi_offset);
  r.get("pi_slope", h.pi_slope);
  r.get("mean_offset", h.mean_offset);
  r.get("mean_slope", h.mean_slope);
  r.get("alpha", h.alpha);
  r.get("log_sd", h.log_sd);
  r.get("variance_ratio", h.variance_ratio);
  r.finish();
  if (!(h.alpha > 0.0) || !(h.log_sd > 0.0) || !(h.variance_ratio > 0.0))
    throw ConfigError(path + ": alpha, log_sd and variance_ratio must be positive");
}

inline json hurdle_to_json(const HurdleDesign& h) {
  return {{"kind", std::string(to_string(h.kind))}, {"pi_offset", h.pi_offset}, {"pi_slope", h.pi_slope},
          {"mean_offset", h.mean_offset}, {"mean_slope", h.mean_slope}, {"alpha", h.alpha},
          {"log_sd", h.log_sd}, {"variance_ratio", h.variance_ratio}};
}

inline void read_prior(const json& j, PriorConfig& p) {
  FieldReader r(j, "prior");
  r.get("num_trees", p.num_trees);
  r.get("gamma", p.tree.gamma);
  r.get("zeta", p.tree.zeta);
  r.get("k_mu", p.k_mu);
  r.get("k_lambda", p.k_lambda);
  r.get("a_lambda", p.a_lambda);
  r.get("a_lambda_gamma", p.a_lambda_gamma);
  r.get("alpha_scale", p.alpha_scale);
  r.get("k_theta", p.k_theta);
  r.get("theta0_prior_sd", p.theta0_prior_sd);
  r.get("sigma_scale", p.sigma_scale);
  r.get("lambda0_shape", p.lambda0_shape);
  r.get("lambda0_rate", p.lambda0_rate);
  r.get("sample_leaf_scale", p.sample_leaf_scale);
  r.get("sparse", p.sparse);
  r.get("update_xi", p.update_xi);
  r.get("xi", p.xi);
  r.get("xi_grid", p.xi_grid);
  if (const json* m = r.object("moves")) {
    FieldReader mr(*m, "prior.moves");
    mr.get("grow", p.moves.grow);
    mr.get("prune", p.moves.prune);
    mr.get("change", p.moves.change);
    mr.finish();
  }
  r.finish();
  p.check();
  p.forest().check();
}

inline json prior_to_json(const PriorConfig& p) {
  json j = {{"num_trees", p.num_trees}, {"gamma", p.tree.gamma}, {"zeta", p.tree.zeta}, {"k_mu", p.k_mu},
            {"k_lambda", p.k_lambda}, {"a_lambda", p.a_lambda}, {"alpha_scale", p.alpha_scale},
            {"k_theta", p.k_theta}, {"theta0_prior_sd", p.theta0_prior_sd}, {"sigma_scale", p.sigma_scale},
            {"lambda0_shape", p.lambda0_shape}, {"lambda0_rate", p.lambda0_rate},
            {"sample_leaf_scale", p.sample_leaf_scale}, {"sparse", p.sparse}, {"update_xi", p.update_xi},
            {"xi", p.xi}, {"xi_grid", p.xi_grid},
            {"moves", {{"grow", p.moves.grow}, {"prune", p.moves.prune}, {"change", p.moves.change}}}};
  j["a_lambda_gamma"] = p.a_lambda_gamma ? json(*p.a_lambda_gamma) : json(nullptr);
  return j;
}

/// NaN marks a global that does not apply to the model; JSON writes it as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double number_from(const json& j) { return j.is_null() ? kNotApplicable : j.get<double>(); }

}  // namespace detail

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"fit", "predict", "simulate", "diagnose", "compare"};
  return names;
}

inline RunConfig parse_config(const json& j) {
  RunConfig c;
  detail::FieldReader r(j, "");
  r.get("command", c.command);
  r.get("out", c.out);
  if (r.has("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
    r.object("seed");
  }
  if (const json* m = r.object("model")) {
    detail::FieldReader mr(*m, "model");
    std::string kind(to_string(c.model.kind));
    mr.get("kind", kind);
    c.model.kind = parse_model_kind(kind);
    mr.get("shared", c.model.shared);
    mr.finish();
  }
  if (const json* p = r.object("prior")) detail::read_prior(*p, c.model.prior);
  if (const json* ch = r.object("chain")) {
    detail::FieldReader cr(*ch, "chain");
    cr.get("iterations", c.chain.iterations);
    cr.get("burnin", c.chain.burnin);
    cr.get("thin", c.chain.thin);
    cr.get("chains", c.chain.chains);
    cr.finish();
  }
  if (const json* d = r.object("data")) {
    detail::FieldReader dr(*d, "data");
    dr.get("train", c.data.train);
    dr.get("response", c.data.schema.response);
    dr.get("binary", c.data.schema.binary);
    dr.get("predictors", c.data.schema.predictors);
    dr.finish();
  }
  if (const json* s = r.object("simulate")) {
    detail::FieldReader sr(*s, "simulate");
    sr.get("design", c.simulate.design);
    sr.get("n", c.simulate.n);
    sr.get("p", c.simulate.p);
    sr.get("test_n", c.simulate.test_n);
    sr.get("sigma", c.simulate.sigma);
    sr.get("sigma_theta", c.simulate.sigma_theta);
    if (const json* h = sr.object("hurdle")) detail::read_hurdle(*h, "simulate.hurdle", c.simulate.hurdle);
    sr.finish();
    parse_model_kind(c.simulate.design);
    if (c.simulate.p < 5) throw ConfigError("simulate.p: must be at least 5");
    if (c.simulate.n < 1) throw ConfigError("simulate.n: must be at least 1");
  }
  if (const json* cm = r.object("compare")) {
    detail::FieldReader cr(*cm, "compare");
    if (const json* cells = cr.object("cells")) {
      if (!cells->is_array() || cells->empty()) throw ConfigError("compare.cells: expected a nonempty array");
      c.compare.cells.clear();
      for (std::size_t k = 0; k < cells->size(); ++k) {
        ComparisonCell cell;
        cell.num_trees = c.model.prior.num_trees;
        detail::FieldReader er((*cells)[k], "compare.cells[" + std::to_string(k) + "]");
        er.get("p", cell.p);
        er.get("sigma_theta", cell.sigma_theta);
        er.get("num_trees", cell.num_trees);
        er.finish();
        if (cell.p < 5) throw ConfigError("compare.cells[" + std::to_string(k) + "].p: must be at least 5");
        c.compare.cells.push_back(cell);
      }
    }
    cr.get("n", c.compare.n);
    cr.get("sigma", c.compare.sigma);
    cr.get("replications", c.compare.replications);
    cr.get("loss_points", c.compare.loss_points);
    cr.get("threads", c.compare.threads);
    cr.get("lpml", c.compare.lpml);
    cr.get("lpml_n", c.compare.lpml_n);
    cr.get("lpml_p", c.compare.lpml_p);
    if (const json* h = cr.object("hurdle")) detail::read_hurdle(*h, "compare.hurdle", c.compare.hurdle);
    cr.finish();
    if (c.compare.replications == 0) throw ConfigError("compare.replications: must be at least 1");
    if (c.compare.lpml_p < 5) throw ConfigError("compare.lpml_p: must be at least 5");
  }
  if (const json* p = r.object("predict")) {
    detail::FieldReader pr(*p, "predict");
    pr.get("artifact", c.predict.artifact);
    pr.get("data", c.predict.data);
    pr.finish();
  }
  r.finish();
  return c;
}

/// The resolved configuration as recorded in outputs. The output directory is
/// left out so that results do not depend on where they are written.
inline json config_to_json(const RunConfig& c) {
  json cells = json::array();
  for (const auto& cell : c.compare.cells)
    cells.push_back({{"p", cell.p}, {"sigma_theta", cell.sigma_theta}, {"num_trees", cell.num_trees}});
  return {
      {"command", c.command},
      {"seed", c.seed ? json(*c.seed) : json(nullptr)},
      {"model", {{"kind", std::string(to_string(c.model.kind))}, {"shared", c.model.shared}}},
      {"prior", detail::prior_to_json(c.model.prior)},
      {"chain",
       {{"iterations", c.chain.iterations}, {"burnin", c.chain.burnin}, {"thin", c.chain.thin},
        {"chains", c.chain.chains}}},
      {"data",
       {{"train", c.data.train}, {"response", c.data.schema.response}, {"binary", c.data.schema.binary},
        {"predictors", c.data.schema.predictors}}},
      {"simulate",
       {{"design", c.simulate.design}, {"n", c.simulate.n}, {"p", c.simulate.p}, {"test_n", c.simulate.test_n},
        {"sigma", c.simulate.sigma}, {"sigma_theta", c.simulate.sigma_theta},
        {"hurdle", detail::hurdle_to_json(c.simulate.hurdle)}}},
      {"compare",
       {{"cells", cells}, {"n", c.compare.n}, {"sigma", c.compare.sigma},
        {"replications", c.compare.replications}, {"loss_points", c.compare.loss_points},
        {"threads", c.compare.threads}, {"lpml", c.compare.lpml}, {"lpml_n", c.compare.lpml_n},
        {"lpml_p", c.compare.lpml_p}, {"hurdle", detail::hurdle_to_json(c.compare.hurdle)}}},
      {"predict", {{"artifact", c.predict.artifact}, {"data", c.predict.data}}},
  };
}

inline json read_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "': invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Posterior artifact: posterior.ndjson holds a header line followed by one
// line per retained draw.

inline json snapshot_to_json(const ForestSnapshot& s) {
  json trees = json::array();
  for (const auto& t : s.trees) trees.push_back(tree_to_json(t));
  const Globals& g = s.globals;
  return {{"iteration", s.iteration},
          {"globals",
           {{"theta0", detail::number_or_null(g.theta0)}, {"sigma", detail::number_or_null(g.sigma)},
            {"lambda0", detail::number_or_null(g.lambda0)}, {"alpha", detail::number_or_null(g.alpha)},
            {"xi", detail::number_or_null(g.xi)}, {"leaf_scale", detail::number_or_null(g.leaf_scale)}}},
          {"split_xi", s.split_probs.xi},
          {"split_log_s", s.split_probs.log_s},
          {"trees", std::move(trees)}};
}

inline ForestSnapshot snapshot_from_json(const json& j) {
  ForestSnapshot s;
  s.iteration = j.at("iteration").get<std::size_t>();
  const json& g = j.at("globals");
  s.globals.theta0 = detail::number_from(g.at("theta0"));
  s.globals.sigma = detail::number_from(g.at("sigma"));
  s.globals.lambda0 = detail::number_from(g.at("lambda0"));
  s.globals.alpha = detail::number_from(g.at("alpha"));
  s.globals.xi = detail::number_from(g.at("xi"));
  s.globals.leaf_scale = detail::number_from(g.at("leaf_scale"));
  s.split_probs.xi = j.at("split_xi").get<double>();
  s.split_probs.log_s = j.at("split_log_s").get<std::vector<double>>();
  for (const auto& t : j.at("trees")) s.trees.push_back(tree_from_json(t));
  return s;
}

/// A fitted model as stored on disk.
struct Artifact {
  json header;
  FitResult fit;
  std::vector<std::string> predictors;
  std::vector<QuantileMap> maps;
};

inline json resolved_prior_to_json(const ResolvedPrior& p) {
  return {{"sigma_theta", p.sigma_theta}, {"leaf_sd", p.leaf_sd}, {"log_gamma_shape", p.log_gamma.shape},
          {"log_gamma_rate", p.log_gamma.rate}, {"kappa", p.kappa}, {"a_lambda", p.a_lambda}};
}

inline ResolvedPrior resolved_prior_from_json(const json& j) {
  ResolvedPrior p;
  p.sigma_theta = j.at("sigma_theta").get<double>();
  p.leaf_sd = j.at("leaf_sd").get<double>();
  p.log_gamma.shape = j.at("log_gamma_shape").get<double>();
  p.log_gamma.rate = j.at("log_gamma_rate").get<double>();
  p.kappa = j.at("kappa").get<double>();
  p.a_lambda = j.at("a_lambda").get<double>();
  return p;
}

inline void write_artifact(const std::string& path, const json& config, const json& inputs, const FitResult& fit,
                           const Dataset& data) {
  json maps = json::array();
  for (const auto& m : data.maps) maps.push_back({{"n", m.size()}, {"values", m.values()}, {"normalized", m.normalized()}});
  const ResponseScaling& sc = fit.observation.scaling();
  json header = {{"format", "sharedforest.posterior"},
                 {"version", 1},
                 {"config", config},
                 {"inputs", inputs},
                 {"model", {{"kind", std::string(to_string(fit.spec.kind))}, {"shared", fit.spec.shared}}},
                 {"resolved_prior", resolved_prior_to_json(fit.prior)},
                 {"scaling", {{"center", sc.center}, {"scale", sc.scale}}},
                 {"predictors", data.predictor_names},
                 {"maps", std::move(maps)},
                 {"draws", fit.draws.size()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorCode::MissingFile, "cannot write '" + path + "'");
  out << header.dump() << '\n';
  for (const auto& d : fit.draws) {
    json forests = json::array();
    for (const auto& f : d.forests) forests.push_back(snapshot_to_json(f));
    out << json{{"iteration", d.iteration}, {"forests", std::move(forests)}}.dump() << '\n';
  }
}

/// Checks `path` against the manifest in its directory, when there is one.
inline void verify_against_manifest(const std::string& path) {
  const std::filesystem::path p(path);
  const std::filesystem::path manifest = p.parent_path() / "manifest.json";
  if (!std::filesystem::exists(manifest)) return;
  const json m = read_json_file(manifest.string());
  const std::string name = p.filename().string();
  if (!m.contains("outputs") || !m["outputs"].contains(name)) return;
  const std::string expected = m["outputs"][name].get<std::string>();
  const std::string actual = git_file_hash(path);
  if (expected != actual)
    throw DataError(DataErrorCode::HashMismatch,
                    "'" + path + "' does not match its manifest (hash " + actual + ", expected " + expected + ")");
}

inline Artifact read_artifact(const std::string& path) {
  verify_against_manifest(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorCode::MissingFile, "cannot open artifact '" + path + "'");
  std::string line;
  Artifact a;
  try {
    if (!std::getline(in, line)) throw DataError(DataErrorCode::ParseError, "'" + path + "': empty artifact");
    a.header = json::parse(line);
    if (a.header.value("format", "") != "sharedforest.posterior")
      throw DataError(DataErrorCode::ParseError, "'" + path + "': not a posterior artifact");
    FitResult& f = a.fit;
    f.spec.kind = parse_model_kind(a.header.at("model").at("kind").get<std::string>());
    f.spec.shared = a.header.at("model").at("shared").get<bool>();
    f.prior = resolved_prior_from_json(a.header.at("resolved_prior"));
    f.observation = ObservationModel(ResponseScaling{f.spec.kind, a.header.at("scaling").at("center").get<double>(),
                                                     a.header.at("scaling").at("scale").get<double>()});
    f.layout = SlotLayout::make(f.spec.kind, f.spec.shared);
    a.predictors = a.header.at("predictors").get<std::vector<std::string>>();
    for (const auto& m : a.header.at("maps"))
      a.maps.push_back(QuantileMap::from_parts(m.at("n").get<std::size_t>(), m.at("values").get<std::vector<double>>(),
                                               m.at("normalized").get<std::vector<double>>()));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      PosteriorDraw d;
      d.iteration = j.at("iteration").get<std::size_t>();
      for (const auto& fj : j.at("forests")) d.forests.push_back(snapshot_from_json(fj));
      f.draws.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::ParseError, "'" + path + "': malformed artifact: " + e.what());
  } catch (const InvalidTreeError& e) {
    throw DataError(DataErrorCode::ParseError, "'" + path + "': malformed tree: " + e.what());
  }
  if (a.fit.draws.size() != a.header.at("draws").get<std::size_t>())
    throw DataError(DataErrorCode::ParseError, "'" + path + "': truncated artifact");
  return a;
}

// ---------------------------------------------------------------------------
// Output helpers.

/// Collects the files a command writes and their hashes.
class OutputDir {
 public:
  explicit OutputDir(std::string dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw DataError(DataErrorCode::MissingFile, "cannot write '" + path(name) + "'");
    out << text;
    out.close();
    record(name);
  }
  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }
  void record(const std::string& name) { outputs_[name] = git_file_hash(path(name)); }

  void write_manifest(const std::string& command, const json& config, const json& inputs) {
    json outputs = json::object();
    for (const auto& [k, v] : outputs_) outputs[k] = v;
    const json m = {{"command", command}, {"config", config}, {"inputs", inputs}, {"outputs", outputs}};
    std::ofstream out(path("manifest.json"), std::ios::binary);
    out << m.dump(2) << '\n';
  }

 private:
  std::string dir_;
  std::map<std::string, std::string> outputs_;
};

inline std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k) s += ',';
    s += cells[k];
  }
  return s + "\n";
}

inline std::string predictions_csv(const std::vector<Prediction>& preds) {
  std::string s = "row,pi_mean,pi_lower,pi_upper,m_mean,m_lower,m_upper,s_mean,s_lower,s_upper,"
                  "location_mean,location_lower,location_upper,scale_mean,scale_lower,scale_upper\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i + 1)};
    for (const IntervalSummary* v : {&preds[i].pi, &preds[i].mean, &preds[i].sd, &preds[i].location,
                                     &preds[i].log_scale_sd}) {
      cells.push_back(format_double(v->mean));
      cells.push_back(format_double(v->lower));
      cells.push_back(format_double(v->upper));
    }
    s += csv_line(cells);
  }
  return s;
}

inline std::string lpml_csv(const LpmlTable& t) {
  return "component,lpml,excluded\n" + csv_line({"Regression", format_double(t.regression.lpml),
                                                 std::to_string(t.regression.excluded)}) +
         csv_line({"Binary", format_double(t.binary.lpml), std::to_string(t.binary.excluded)}) +
         csv_line({"Total", format_double(t.total.lpml), std::to_string(t.total.excluded)});
}

inline json lpml_json(const LpmlTable& t) {
  return {{"Regression", t.regression.lpml}, {"Binary", t.binary.lpml}, {"Total", t.total.lpml},
          {"excluded", {{"Regression", t.regression.excluded}, {"Binary", t.binary.excluded},
                        {"Total", t.total.excluded}}}};
}

inline json residual_json(const ResidualResult& r) {
  json j = {{"count", r.residuals.size()}, {"clamped", r.num_clamped}};
  if (r.residuals.size() > 1) {
    double m = 0.0;
    for (double v : r.residuals) m += v;
    m /= static_cast<double>(r.residuals.size());
    double ss = 0.0;
    for (double v : r.residuals) ss += (v - m) * (v - m);
    j["mean"] = m;
    j["sd"] = std::sqrt(ss / static_cast<double>(r.residuals.size() - 1));
  }
  return j;
}

/// Recomputes the per-draw observation densities and posterior-mean cdfs of
/// the training rows from the stored draws.
inline void recompute_diagnostics(FitResult& fit, const Dataset& data) {
  const std::size_t n = data.n;
  const std::size_t s = fit.draws.size();
  if (s == 0) throw DataError(DataErrorCode::ParseError, "artifact holds no draws");
  const WorkingResponse w = preprocess_response(data.y, fit.spec.kind, data.binary);
  fit.log_binary.assign(s, std::vector<double>(n));
  fit.log_regression.assign(s, std::vector<double>(n));
  fit.mean_cdf.assign(n, 0.0);
  fit.mean_location.assign(n, 0.0);
  fit.mean_log_scale_sd.assign(n, 0.0);
  const ObservationModel& obs = fit.observation;
  for (std::size_t d = 0; d < s; ++d) {
    const Globals g = fit.draws[d].globals();
    for (std::size_t i = 0; i < n; ++i) {
      const FunctionValues f = evaluate_draw(fit.draws[d], fit.layout, data.row(i));
      fit.log_binary[d][i] = obs.log_binary(f, g, w.positive[i] != 0);
      fit.log_regression[d][i] = obs.log_regression(f, g, data.y[i]);
      if (obs.kind() == ModelKind::MixedResponse || data.y[i] > 0.0) {
        fit.mean_cdf[i] += obs.cdf(f, g, data.y[i]);
        const PointSummary ps = obs.summarize(f, g);
        fit.mean_location[i] += ps.location;
        fit.mean_log_scale_sd[i] += ps.log_scale_sd;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    fit.mean_cdf[i] /= static_cast<double>(s);
    fit.mean_location[i] /= static_cast<double>(s);
    fit.mean_log_scale_sd[i] /= static_cast<double>(s);
  }
}

inline std::string residuals_csv(const ResidualResult& r, std::span<const double> y) {
  std::string s = "row,y,residual,clamped\n";
  for (std::size_t k = 0; k < r.rows.size(); ++k)
    s += csv_line({std::to_string(r.rows[k] + 1), format_double(y[r.rows[k]]), format_double(r.residuals[k]),
                   r.clamped[k] ? "1" : "0"});
  return s;
}

inline std::string dataset_csv(const Dataset& d, bool with_binary) {
  std::vector<std::string> header = d.predictor_names;
  header.push_back("y");
  if (with_binary) header.push_back("z");
  std::string s = csv_line(header);
  for (std::size_t i = 0; i < d.n; ++i) {
    std::vector<std::string> cells;
    for (std::size_t k = 0; k < d.p; ++k) cells.push_back(format_double(d.raw_x[i * d.p + k]));
    cells.push_back(format_double(d.y[i]));
    if (with_binary) cells.push_back(format_double(d.binary[i]));
    s += csv_line(cells);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Commands.

inline std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw ConfigError("seed: required (pass --seed or set \"seed\" in the config)");
  return *c.seed;
}

inline Dataset load_training_data(const RunConfig& c) {
  if (c.data.train.empty()) throw ConfigError("data.train: required");
  DataSchema schema = c.data.schema;
  if (c.model.kind == ModelKind::MixedResponse && schema.binary.empty())
    throw ConfigError("data.binary: the mixed model needs a binary outcome column");
  if (c.model.kind != ModelKind::MixedResponse) schema.binary.clear();
  return load_csv(c.data.train, schema);
}

inline json move_report(const FitResult& fit) {
  json out = json::array();
  static constexpr const char* kNames[] = {"grow", "prune", "change"};
  for (std::size_t k = 0; k < fit.moves.size(); ++k) {
    json f = {{"forest", k}};
    for (std::size_t m = 0; m < 3; ++m) {
      const auto p = fit.moves[k].proposed[m];
      const auto a = fit.moves[k].accepted[m];
      f[kNames[m]] = {{"proposed", p}, {"accepted", a},
                      {"rate", p ? static_cast<double>(a) / static_cast<double>(p) : 0.0}};
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline void cmd_fit(const RunConfig& c) {
  const std::uint64_t seed = require_seed(c);
  c.chain.check();
  const Dataset data = load_training_data(c);
  const json config = config_to_json(c);
  const json inputs = {{c.data.train, git_file_hash(c.data.train)}};

  const FitResult fit = fit_model(data.x, data.p, data.y, data.binary, c.model, c.chain, seed, true);
  OutputDir out(c.out);
  write_artifact(out.path("posterior.ndjson"), config, inputs, fit, data);
  out.record("posterior.ndjson");

  const std::vector<Prediction> fitted = predict(fit, data.x, data.p);
  out.write_text("fitted.csv", predictions_csv(fitted));

  const LpmlTable table = lpml_table(fit);
  out.write_text("lpml_table.csv", lpml_csv(table));
  const ResidualResult resid = generalized_residuals(fit, data.y);

  json split = json::array();
  for (std::size_t k = 0; k < fit.split_prob_mean.size(); ++k) {
    json m = json::object();
    for (std::size_t j = 0; j < data.p; ++j) m[data.predictor_names[j]] = fit.split_prob_mean[k][j];
    split.push_back({{"forest", k}, {"mean", std::move(m)}});
  }
  const json report = {{"config", config},
                       {"inputs", inputs},
                       {"rows", data.n},
                       {"draws", fit.draws.size()},
                       {"resolved_prior", resolved_prior_to_json(fit.prior)},
                       {"acceptance", move_report(fit)},
                       {"split_probabilities", split},
                       {"lpml", lpml_json(table)},
                       {"residuals", residual_json(resid)}};
  out.write_json("report.json", report);

  std::ostringstream txt;
  txt << "model " << to_string(fit.spec.kind) << (fit.spec.shared ? " (shared forest)" : " (separate forests)")
      << "\nrows " << data.n << ", predictors " << data.p << ", retained draws " << fit.draws.size() << "\n\n";
  txt << "acceptance rates\n";
  for (const auto& f : report["acceptance"])
    txt << "  forest " << f["forest"].get<std::size_t>() << ": grow " << f["grow"]["rate"].get<double>()
        << ", prune " << f["prune"]["rate"].get<double>() << ", change " << f["change"]["rate"].get<double>()
        << "\n";
  txt << "\nsplit probabilities (posterior mean)\n";
  for (std::size_t k = 0; k < fit.split_prob_mean.size(); ++k) {
    txt << "  forest " << k << ":";
    for (std::size_t j = 0; j < data.p; ++j)
      txt << " " << data.predictor_names[j] << "=" << format_double(fit.split_prob_mean[k][j]);
    txt << "\n";
  }
  txt << "\nLPML  Regression " << format_double(table.regression.lpml) << "  Binary "
      << format_double(table.binary.lpml) << "  Total " << format_double(table.total.lpml) << "\n";
  out.write_text("report.txt", txt.str());
  out.write_manifest("fit", config, inputs);
}

/// Loads new predictor rows and maps them through the artifact's transforms.
inline Dataset load_for_artifact(const Artifact& a, const std::string& path, const std::string& response = {},
                                 const std::string& binary = {}) {
  const CsvTable table = read_csv(path);
  std::vector<std::string> missing;
  for (const auto& name : a.predictors)
    if (!table.find(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw DataError(DataErrorCode::SchemaMismatch, "'" + path + "' lacks predictor column(s) " + names +
                                                       " required by the fitted model");
  }
  Dataset d = dataset_from_table(table, DataSchema{response, binary, a.predictors}, !response.empty());
  if (d.n == 0) throw DataError(DataErrorCode::MissingValue, "'" + path + "' has no data rows");
  apply_predictor_maps(d, a.maps);
  return d;
}

inline void cmd_predict(const RunConfig& c) {
  require_seed(c);
  if (c.predict.artifact.empty()) throw ConfigError("predict.artifact: required");
  if (c.predict.data.empty()) throw ConfigError("predict.data: required");
  const Artifact a = read_artifact(c.predict.artifact);
  const Dataset d = load_for_artifact(a, c.predict.data);
  std::size_t clamped = 0;
  const std::vector<Prediction> preds = predict(a.fit, d.x, d.p, &clamped);
  const json config = config_to_json(c);
  const json inputs = {{c.predict.artifact, git_file_hash(c.predict.artifact)},
                       {c.predict.data, git_file_hash(c.predict.data)}};
  OutputDir out(c.out);
  out.write_text("predictions.csv", predictions_csv(preds));
  out.write_json("predict_report.json", {{"config", config},
                                         {"inputs", inputs},
                                         {"rows", d.n},
                                         {"draws", a.fit.draws.size()},
                                         {"raw_values_outside_training_range", clamped}});
  out.write_manifest("predict", config, inputs);
}

inline std::string truth_csv(const std::vector<PointSummary>& t) {
  std::string s = "row,pi,m,s,location,scale\n";
  for (std::size_t i = 0; i < t.size(); ++i)
    s += csv_line({std::to_string(i + 1), format_double(t[i].pi), format_double(t[i].mean), format_double(t[i].sd),
                   format_double(t[i].location), format_double(t[i].log_scale_sd)});
  return s;
}

/// Seeds: derive_seed(seed, 0) for the training rows, derive_seed(seed, 1) for
/// the test rows.
inline void cmd_simulate(const RunConfig& c) {
  const std::uint64_t seed = require_seed(c);
  const SimulateConfig& s = c.simulate;
  const ModelKind kind = parse_model_kind(s.design);
  const json config = config_to_json(c);
  OutputDir out(c.out);
  auto make = [&](std::size_t n, std::uint64_t stream, const std::string& name) {
    Rng rng(derive_seed(seed, stream));
    Dataset d;
    std::vector<PointSummary> truth(n);
    if (kind == ModelKind::MixedResponse) {
      SimulationSpec spec;
      spec.n = n;
      spec.p = s.p;
      spec.sigma = s.sigma;
      spec.sigma_theta = s.sigma_theta;
      d = simulate_mixed(spec, rng);
      for (std::size_t i = 0; i < n; ++i) {
        truth[i].pi = mixed_true_probability(d.row(i), s.sigma_theta);
        truth[i].mean = friedman(d.row(i));
        truth[i].sd = s.sigma;
        truth[i].location = truth[i].mean;
        truth[i].log_scale_sd = s.sigma;
      }
    } else {
      HurdleDesign h = s.hurdle;
      h.kind = kind;
      d = simulate_hurdle(h, n, s.p, rng);
      for (std::size_t i = 0; i < n; ++i) truth[i] = hurdle_truth(h, d.row(i));
    }
    out.write_text(name + ".csv", dataset_csv(d, kind == ModelKind::MixedResponse));
    out.write_text(name + "_truth.csv", truth_csv(truth));
  };
  make(s.n, 0, "train");
  if (s.test_n > 0) make(s.test_n, 1, "test");
  out.write_manifest("simulate", config, json::object());
}

inline void cmd_diagnose(const RunConfig& c) {
  require_seed(c);
  const std::string artifact = !c.predict.artifact.empty() ? c.predict.artifact : (std::filesystem::path(c.out) / "posterior.ndjson").string();
  Artifact a = read_artifact(artifact);
  const json& recorded = a.header.at("config");
  std::string train = c.data.train;
  if (train.empty()) train = recorded.at("data").at("train").get<std::string>();
  const std::string response = recorded.at("data").at("response").get<std::string>();
  const std::string binary =
      a.fit.spec.kind == ModelKind::MixedResponse ? recorded.at("data").at("binary").get<std::string>() : "";
  const std::string hash = git_file_hash(train);
  const json& rec_inputs = a.header.at("inputs");
  if (rec_inputs.contains(train) && rec_inputs[train].get<std::string>() != hash)
    throw DataError(DataErrorCode::HashMismatch, "'" + train + "' changed since the fit (hash " + hash + ", recorded " +
                                                     rec_inputs[train].get<std::string>() + ")");
  const Dataset d = load_for_artifact(a, train, response, binary);
  recompute_diagnostics(a.fit, d);
  const LpmlTable table = lpml_table(a.fit);
  const ResidualResult resid = generalized_residuals(a.fit, d.y);
  const json config = config_to_json(c);
  const json inputs = {{artifact, git_file_hash(artifact)}, {train, hash}};

  std::string cpo = "row,log_cpo_regression,log_cpo_binary,log_cpo_total\n";
  for (std::size_t i = 0; i < d.n; ++i)
    cpo += csv_line({std::to_string(i + 1), format_double(table.regression.log_cpo[i]),
                     format_double(table.binary.log_cpo[i]), format_double(table.total.log_cpo[i])});
  OutputDir out(c.out);
  out.write_text("lpml_table.csv", lpml_csv(table));
  out.write_text("cpo.csv", cpo);
  out.write_text("residuals.csv", residuals_csv(resid, d.y));
  out.write_json("diagnostics.json", {{"config", config},
                                      {"inputs", inputs},
                                      {"draws", a.fit.draws.size()},
                                      {"lpml", lpml_json(table)},
                                      {"residuals", residual_json(resid)}});
  out.write_manifest("diagnose", config, inputs);
}

/// Seeds: the loss grid uses `seed` as its master seed (see
/// run_share_comparison); the LPML data use derive_seed(seed, 2^32) and both
/// of its fits derive_seed(seed, 2^32 + 1).
inline void cmd_compare(const RunConfig& c) {
  const std::uint64_t seed = require_seed(c);
  c.chain.check();
  const CompareConfig& cc = c.compare;
  const json config = config_to_json(c);
  OutputDir out(c.out);

  ComparisonConfig grid;
  grid.cells = cc.cells;
  grid.n = cc.n;
  grid.sigma = cc.sigma;
  grid.replications = cc.replications;
  grid.chain = c.chain;
  grid.chain.chains = 1;
  grid.prior = c.model.prior;
  grid.loss_points = cc.loss_points;
  grid.seed = seed;
  grid.threads = cc.threads;
  const ComparisonResult res = run_share_comparison(grid);

  std::string records =
      "cell,p,sigma_theta,num_trees,replicate,data_seed,fit_seed,loss_seed,shared_loss,separate_loss\n";
  for (const auto& r : res.records) {
    const ComparisonCell& cell = cc.cells[r.cell];
    records += csv_line({std::to_string(r.cell), std::to_string(cell.p), format_double(cell.sigma_theta),
                         std::to_string(cell.num_trees), std::to_string(r.replicate), std::to_string(r.data_seed),
                         std::to_string(r.fit_seed), std::to_string(r.loss_seed), format_double(r.shared_loss),
                         format_double(r.separate_loss)});
  }
  std::string summary = "p,sigma_theta,num_trees,shared_mean,shared_se,separate_mean,separate_se\n";
  json cells = json::array();
  for (const auto& s : res.summaries) {
    summary += csv_line({std::to_string(s.cell.p), format_double(s.cell.sigma_theta), std::to_string(s.cell.num_trees),
                         format_double(s.shared_mean), format_double(s.shared_se), format_double(s.separate_mean),
                         format_double(s.separate_se)});
    cells.push_back({{"p", s.cell.p}, {"sigma_theta", s.cell.sigma_theta}, {"num_trees", s.cell.num_trees},
                     {"shared_mean", s.shared_mean}, {"shared_se", s.shared_se},
                     {"separate_mean", s.separate_mean}, {"separate_se", s.separate_se}});
  }
  out.write_text("comparison_records.csv", records);
  out.write_text("comparison_summary.csv", summary);
  json result = {{"config", config}, {"cells", cells}};

  if (cc.lpml) {
    Rng rng(derive_seed(seed, std::uint64_t{1} << 32));
    const Dataset d = simulate_hurdle(cc.hurdle, cc.lpml_n, cc.lpml_p, rng);
    ModelSpec spec = c.model;
    spec.kind = cc.hurdle.kind;
    LpmlTable tables[2];
    for (int k = 0; k < 2; ++k) {
      spec.shared = k == 0;
      const FitResult fit =
          fit_model(d.x, d.p, d.y, {}, spec, c.chain, derive_seed(seed, (std::uint64_t{1} << 32) + 1), true);
      tables[k] = lpml_table(fit);
    }
    std::string t = "component,shared,not_shared\n";
    t += csv_line({"Regression", format_double(tables[0].regression.lpml), format_double(tables[1].regression.lpml)});
    t += csv_line({"Binary", format_double(tables[0].binary.lpml), format_double(tables[1].binary.lpml)});
    t += csv_line({"Total", format_double(tables[0].total.lpml), format_double(tables[1].total.lpml)});
    out.write_text("lpml_table.csv", t);
    result["lpml"] = {{"shared", lpml_json(tables[0])}, {"not_shared", lpml_json(tables[1])}};
  }
  out.write_json("comparison.json", result);
  out.write_manifest("compare", config, json::object());
}

inline void run(const RunConfig& c) {
  if (c.command == "fit") cmd_fit(c);
  else if (c.command == "predict") cmd_predict(c);
  else if (c.command == "simulate") cmd_simulate(c);
  else if (c.command == "diagnose") cmd_diagnose(c);
  else if (c.command == "compare") cmd_compare(c);
  else throw ConfigError("command: unknown '" + c.command + "' (fit | predict | simulate | diagnose | compare)");
}

}  // namespace sharedforest::cli
