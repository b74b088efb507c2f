#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "icl_lab/errors.hpp"
#include "icl_lab/experiments.hpp"
#include "icl_lab/serialization.hpp"

namespace icl {
namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& pointer, const std::string& what) {
  fail(ErrorKind::Schema, (pointer.empty() ? std::string("/") : pointer) + ": " + what);
}

// Object reader that records consumed keys and rejects the rest.
class Fields {
 public:
  Fields(const json& doc, std::string pointer) : doc_(doc), pointer_(std::move(pointer)) {
    if (!doc_.is_object()) schema_error(pointer_, "expected an object");
  }

  std::string path(const std::string& key) const { return pointer_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, std::size_t& out) {
    if (const json* j = find(key)) out = as_size(*j, path(key));
  }
  void get(const std::string& key, std::uint64_t& out, bool) {
    if (const json* j = find(key)) out = as_u64(*j, path(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* j = find(key)) {
      if (!j->is_number_integer()) schema_error(path(key), "expected an integer");
      const auto v = j->get<std::int64_t>();
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        schema_error(path(key), "integer out of range");
      }
      out = static_cast<int>(v);
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* j = find(key)) {
      if (!j->is_number()) schema_error(path(key), "expected a number");
      out = j->get<double>();
      if (!std::isfinite(out)) schema_error(path(key), "expected a finite number");
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* j = find(key)) {
      if (!j->is_boolean()) schema_error(path(key), "expected a boolean");
      out = j->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* j = find(key)) {
      if (!j->is_string()) schema_error(path(key), "expected a string");
      out = j->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* j = find(key)) {
      if (!j->is_array()) schema_error(path(key), "expected an array");
      out.clear();
      for (std::size_t i = 0; i < j->size(); ++i) {
        out.push_back(as_size((*j)[i], path(key) + "/" + std::to_string(i)));
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.count(key)) schema_error(path(key), "unknown key \"" + key + "\"");
    }
  }

  static std::uint64_t as_u64(const json& j, const std::string& where) {
    if (!j.is_number_integer()) schema_error(where, "expected a nonnegative integer");
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    const auto v = j.get<std::int64_t>();
    if (v < 0) schema_error(where, "expected a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  }
  static std::size_t as_size(const json& j, const std::string& where) {
    return static_cast<std::size_t>(as_u64(j, where));
  }

 private:
  const json& doc_;
  std::string pointer_;
  std::set<std::string> seen_;
};

const char* ablation_name(AblationKind k) {
  switch (k) {
    case AblationKind::None: return "none";
    case AblationKind::Retrieval: return "retrieval";
    case AblationKind::LabelPermute: return "label_permute";
    case AblationKind::Ood: return "ood";
  }
  return "none";
}

void parse_generator(const json& doc, const std::string& pointer, GeneratorSpec& g) {
  Fields f(doc, pointer);
  f.get("num_tasks", g.num_tasks);
  f.get("d_per_task", g.d_per_task);
  f.get("m", g.m);
  f.get("num_labels", g.num_labels);
  f.get("epsilon_r_target", g.epsilon_r_target);
  f.get("epsilon_d_target", g.epsilon_d_target);
  f.get("separation_target", g.separation_target);
  f.get("label_mass", g.label_mass);
  f.get("persistence", g.persistence);
  f.finish();
}

void parse_hmm_source(const json& doc, const std::string& pointer, HmmSource& h) {
  Fields f(doc, pointer);
  if (const json* g = f.find("generate")) parse_generator(*g, f.path("generate"), h.generate);
  f.get("generator_seed", h.generator_seed, true);
  f.get("path", h.path);
  f.finish();
  if (!h.path.empty() && doc.contains("generate")) {
    schema_error(pointer, "give either \"path\" or \"generate\", not both");
  }
}

void parse_demo_length(const json& doc, const std::string& pointer, DemoLengthPolicy& p) {
  if (doc.is_number()) {
    p = DemoLengthPolicy::fixed(Fields::as_size(doc, pointer));
    return;
  }
  Fields f(doc, pointer);
  f.get("min", p.min_len);
  f.get("max", p.max_len);
  f.finish();
}

}  // namespace

AssumptionRefused::AssumptionRefused(AssumptionReport report)
    : Error(ErrorKind::AssumptionRefusal,
            "model violates the structural assumptions (recurrence, anchor, delimiter, "
            "distinguishability); set allow_noncompliant to run anyway"),
      report_(std::move(report)) {}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return config_to_json(*this) == config_to_json(other);
}

void ExperimentConfig::validate() const {
  if (n_grid.empty()) schema_error("/n_grid", "must not be empty");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] == 0) schema_error("/n_grid/" + std::to_string(i), "must be positive");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) {
      schema_error("/n_grid/" + std::to_string(i), "n_grid must be strictly increasing");
    }
  }
  if (trials < 1) schema_error("/trials", "must be at least 1");
  if (!(delta > 0.0 && delta <= 1.0)) schema_error("/delta", "must lie in (0, 1]");
  if (demo_length.min_len == 0) schema_error("/demo_length/min", "must be at least 1");
  if (demo_length.min_len > demo_length.max_len) {
    schema_error("/demo_length", "min must not exceed max");
  }
  if (!(ridge.value >= 0.0)) schema_error("/ridge/value", "must be nonnegative");
  if (l_grid.empty()) schema_error("/l_grid", "must not be empty");
  for (std::size_t i = 0; i < l_grid.size(); ++i) {
    if (l_grid[i] == 0) schema_error("/l_grid/" + std::to_string(i), "must be positive");
  }
  if (ablation.n == 0) schema_error("/ablation/n", "must be positive");
  if (ablation.ood_n == 0) schema_error("/ablation/ood_n", "must be positive");
  if (ablation.pool_factor == 0) schema_error("/ablation/pool_factor", "must be positive");
  if (identity.ladder.empty()) schema_error("/identity/ladder", "must not be empty");
  for (std::size_t i = 0; i < identity.ladder.size(); ++i) {
    if (identity.ladder[i] == 0 || (i > 0 && identity.ladder[i] <= identity.ladder[i - 1])) {
      schema_error("/identity/ladder/" + std::to_string(i),
                   "ladder must be positive and strictly increasing");
    }
  }
  if (identity.seeds == 0) schema_error("/identity/seeds", "must be positive");
  if (identity.length == 0) schema_error("/identity/length", "must be positive");
  if (eq2.models == 0) schema_error("/eq2/models", "must be positive");
  if (eq2.max_states < 1) schema_error("/eq2/max_states", "must be positive");
  if (eq2.max_obs < 2) schema_error("/eq2/max_obs", "must be at least 2");
  if (eq2.max_length == 0) schema_error("/eq2/max_length", "must be positive");
  if (kl_length == 0) schema_error("/kl_length", "must be positive");
  if (!kl_exact && kl_samples < 2) schema_error("/kl_samples", "must be at least 2");
  if (recurrence_horizon == 0) schema_error("/recurrence_horizon", "must be positive");
  if (eta_max_length == 0) schema_error("/eta_max_length", "must be positive");
}

AssumptionConfig ExperimentConfig::assumption_config() const {
  AssumptionConfig a;
  a.demo_length = demo_length.max_len;
  a.recurrence_horizon = recurrence_horizon;
  a.kl_length = kl_length;
  a.eta_max_length = eta_max_length;
  a.l_grid = l_grid;
  a.ridge = ridge;
  a.delta_prob = delta;
  a.margin_samples = margin_samples;
  a.seed = seed;
  a.enumeration_cap = enumeration_cap;
  a.kl_exact = kl_exact;
  a.kl_samples = kl_samples;
  return a;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  Fields f(doc, "");
  if (const json* h = f.find("hmm")) parse_hmm_source(*h, "/hmm", c.hmm);
  f.get("n_grid", c.n_grid);
  f.get("trials", c.trials);
  f.get("delta", c.delta);
  if (const json* d = f.find("demo_length")) parse_demo_length(*d, "/demo_length", c.demo_length);
  if (const json* r = f.find("ridge")) {
    Fields rf(*r, "/ridge");
    rf.get("value", c.ridge.value);
    rf.get("relative", c.ridge.relative);
    rf.finish();
  }
  f.get("l_grid", c.l_grid);
  f.get("seed", c.seed, true);
  if (const json* a = f.find("ablation")) {
    Fields af(*a, "/ablation");
    std::string kind = ablation_name(c.ablation.kind);
    af.get("kind", kind);
    if (kind == "none") c.ablation.kind = AblationKind::None;
    else if (kind == "retrieval") c.ablation.kind = AblationKind::Retrieval;
    else if (kind == "label_permute") c.ablation.kind = AblationKind::LabelPermute;
    else if (kind == "ood") c.ablation.kind = AblationKind::Ood;
    else schema_error("/ablation/kind", "expected none | retrieval | label_permute | ood");
    af.get("source_task", c.ablation.source_task);
    af.get("n", c.ablation.n);
    af.get("ood_n", c.ablation.ood_n);
    af.get("pool_factor", c.ablation.pool_factor);
    af.finish();
  }
  if (const json* i = f.find("identity")) {
    Fields idf(*i, "/identity");
    idf.get("ladder", c.identity.ladder);
    idf.get("seeds", c.identity.seeds);
    idf.get("length", c.identity.length);
    idf.get("task", c.identity.task);
    idf.finish();
  }
  if (const json* e = f.find("eq2")) {
    Fields ef(*e, "/eq2");
    ef.get("models", c.eq2.models);
    ef.get("max_states", c.eq2.max_states);
    ef.get("max_obs", c.eq2.max_obs);
    ef.get("max_length", c.eq2.max_length);
    ef.get("sequences_per_model", c.eq2.sequences_per_model);
    ef.get("mass_check_cap", c.eq2.mass_check_cap, true);
    ef.finish();
  }
  f.get("allow_noncompliant", c.allow_noncompliant);
  f.get("enumeration_cap", c.enumeration_cap, true);
  f.get("kl_length", c.kl_length);
  std::string kl = c.kl_exact ? "exact" : "mc";
  f.get("kl_estimator", kl);
  if (kl != "exact" && kl != "mc") schema_error("/kl_estimator", "expected exact | mc");
  c.kl_exact = kl == "exact";
  f.get("kl_samples", c.kl_samples);
  f.get("recurrence_horizon", c.recurrence_horizon);
  f.get("eta_max_length", c.eta_max_length);
  f.get("margin_samples", c.margin_samples);
  std::string domain = c.score_domain == ScoreDomain::Labels ? "labels" : "all_observations";
  f.get("score_domain", domain);
  if (domain == "labels") c.score_domain = ScoreDomain::Labels;
  else if (domain == "all_observations") c.score_domain = ScoreDomain::AllObservations;
  else schema_error("/score_domain", "expected labels | all_observations");
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Schema, "/: malformed JSON: " + std::string(e.what()));
  }
  return parse_config(doc);
}

json config_to_json(const ExperimentConfig& c) {
  json hmm = {{"generator_seed", c.hmm.generator_seed}};
  if (c.hmm.path.empty()) {
    const auto& g = c.hmm.generate;
    hmm["generate"] = {{"num_tasks", g.num_tasks},
                       {"d_per_task", g.d_per_task},
                       {"m", g.m},
                       {"num_labels", g.num_labels},
                       {"epsilon_r_target", g.epsilon_r_target},
                       {"epsilon_d_target", g.epsilon_d_target},
                       {"separation_target", g.separation_target},
                       {"label_mass", g.label_mass},
                       {"persistence", g.persistence}};
  } else {
    hmm["path"] = c.hmm.path;
  }
  return {
      {"hmm", hmm},
      {"n_grid", c.n_grid},
      {"trials", c.trials},
      {"delta", c.delta},
      {"demo_length", {{"min", c.demo_length.min_len}, {"max", c.demo_length.max_len}}},
      {"ridge", {{"value", c.ridge.value}, {"relative", c.ridge.relative}}},
      {"l_grid", c.l_grid},
      {"seed", c.seed},
      {"ablation",
       {{"kind", ablation_name(c.ablation.kind)},
        {"source_task", c.ablation.source_task},
        {"n", c.ablation.n},
        {"ood_n", c.ablation.ood_n},
        {"pool_factor", c.ablation.pool_factor}}},
      {"identity",
       {{"ladder", c.identity.ladder},
        {"seeds", c.identity.seeds},
        {"length", c.identity.length},
        {"task", c.identity.task}}},
      {"eq2",
       {{"models", c.eq2.models},
        {"max_states", c.eq2.max_states},
        {"max_obs", c.eq2.max_obs},
        {"max_length", c.eq2.max_length},
        {"sequences_per_model", c.eq2.sequences_per_model},
        {"mass_check_cap", c.eq2.mass_check_cap}}},
      {"allow_noncompliant", c.allow_noncompliant},
      {"enumeration_cap", c.enumeration_cap},
      {"kl_length", c.kl_length},
      {"kl_estimator", c.kl_exact ? "exact" : "mc"},
      {"kl_samples", c.kl_samples},
      {"recurrence_horizon", c.recurrence_horizon},
      {"eta_max_length", c.eta_max_length},
      {"margin_samples", c.margin_samples},
      {"score_domain", c.score_domain == ScoreDomain::Labels ? "labels" : "all_observations"},
  };
}

std::string config_hash(const ExperimentConfig& config) {
  return sha256_hex(config_to_json(config).dump());
}

std::string sha256_hex(std::string_view text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int size = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &size, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Io, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < size; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

Hmm resolve_hmm(const ExperimentConfig& config) {
  if (!config.hmm.path.empty()) return load_hmm(config.hmm.path);
  return generate_compliant_hmm(config.hmm.generate, config.hmm.generator_seed);
}

}  // namespace icl
