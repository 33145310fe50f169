#include "crt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "crt/metrics.hpp"

namespace crt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

std::size_t parse_count(const std::string& v) { return parse_number<std::size_t>(v); }
double parse_real(const std::string& v) { return parse_number<double>(v); }

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + v + "' is not a boolean (true/false)");
}

std::vector<std::size_t> parse_counts(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_count(trim(item)));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field count_field(Member member) {
  return {[member](RunConfig& c, const std::string& v) { member(c) = parse_count(v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field real_field(Member member) {
  return {[member](RunConfig& c, const std::string& v) { member(c) = parse_real(v); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field bool_field(Member member) {
  return {[member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); },
          [member](const RunConfig& c) { return bool_text(member(const_cast<RunConfig&>(c))); }};
}

void add_branch_fields(std::vector<std::pair<std::string, Field>>& f, const std::string& prefix,
                       BranchConfig RunConfig::*branch) {
  f.emplace_back(prefix + ".prototypes",
                 count_field([branch](RunConfig& c) -> std::size_t& { return (c.*branch).prototypes; }));
  f.emplace_back(prefix + ".hidden",
                 count_field([branch](RunConfig& c) -> std::size_t& { return (c.*branch).hidden; }));
  f.emplace_back(prefix + ".embedding_dim",
                 count_field([branch](RunConfig& c) -> std::size_t& { return (c.*branch).embedding_dim; }));
  f.emplace_back(prefix + ".per_prototype_heads",
                 bool_field([branch](RunConfig& c) -> bool& { return (c.*branch).per_prototype_heads; }));
  f.emplace_back(prefix + ".ms_weight",
                 real_field([branch](RunConfig& c) -> double& { return (c.*branch).ms_weight; }));
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> f;
    f.emplace_back("seed", Field{[](RunConfig& c, const std::string& v) {
                                   c.seed = parse_number<std::uint64_t>(v);
                                 },
                                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.emplace_back("data.n_classes", count_field([](RunConfig& c) -> std::size_t& { return c.data.n_classes; }));
    f.emplace_back("data.samples_per_class",
                   count_field([](RunConfig& c) -> std::size_t& { return c.data.samples_per_class; }));
    f.emplace_back("data.height", count_field([](RunConfig& c) -> std::size_t& { return c.data.height; }));
    f.emplace_back("data.width", count_field([](RunConfig& c) -> std::size_t& { return c.data.width; }));
    f.emplace_back("data.dim", count_field([](RunConfig& c) -> std::size_t& { return c.data.dim; }));
    f.emplace_back("data.class_sep", real_field([](RunConfig& c) -> double& { return c.data.class_sep; }));
    f.emplace_back("data.noise_sigma", real_field([](RunConfig& c) -> double& { return c.data.noise_sigma; }));
    f.emplace_back("data.part_count", count_field([](RunConfig& c) -> std::size_t& { return c.data.part_count; }));
    f.emplace_back("data.train_fraction", real_field([](RunConfig& c) -> double& { return c.train_fraction; }));
    f.emplace_back("train.epochs", count_field([](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    f.emplace_back("train.steps_per_epoch",
                   count_field([](RunConfig& c) -> std::size_t& { return c.train.steps_per_epoch; }));
    f.emplace_back("train.learning_rate",
                   real_field([](RunConfig& c) -> double& { return c.train.learning_rate; }));
    f.emplace_back("train.optimizer",
                   Field{[](RunConfig& c, const std::string& v) {
                           if (v == "adam") {
                             c.train.optimizer = OptimizerKind::adam;
                           } else if (v == "sgd") {
                             c.train.optimizer = OptimizerKind::sgd;
                           } else {
                             throw ConfigError("'" + v + "' is not an optimizer (sgd, adam)");
                           }
                         },
                         [](const RunConfig& c) {
                           return std::string(c.train.optimizer == OptimizerKind::adam ? "adam" : "sgd");
                         }});
    f.emplace_back("train.adam_beta1", real_field([](RunConfig& c) -> double& { return c.train.adam_beta1; }));
    f.emplace_back("train.adam_beta2", real_field([](RunConfig& c) -> double& { return c.train.adam_beta2; }));
    f.emplace_back("train.adam_epsilon", real_field([](RunConfig& c) -> double& { return c.train.adam_epsilon; }));
    f.emplace_back("train.batch_classes",
                   count_field([](RunConfig& c) -> std::size_t& { return c.train.batch_classes; }));
    f.emplace_back("train.batch_per_class",
                   count_field([](RunConfig& c) -> std::size_t& { return c.train.batch_per_class; }));
    f.emplace_back("model.branches", count_field([](RunConfig& c) -> std::size_t& { return c.branch_count; }));
    f.emplace_back("model.share_head_weights",
                   bool_field([](RunConfig& c) -> bool& { return c.share_head_weights; }));
    add_branch_fields(f, "branch1", &RunConfig::branch1);
    add_branch_fields(f, "branch2", &RunConfig::branch2);
    f.emplace_back("loss.consistency_weight",
                   real_field([](RunConfig& c) -> double& { return c.train.loss.consistency_weight; }));
    f.emplace_back("loss.diversity_weight",
                   real_field([](RunConfig& c) -> double& { return c.train.loss.diversity_weight; }));
    f.emplace_back("loss.alpha", real_field([](RunConfig& c) -> double& { return c.train.loss.alpha; }));
    f.emplace_back("loss.beta", real_field([](RunConfig& c) -> double& { return c.train.loss.beta; }));
    f.emplace_back("loss.margin", real_field([](RunConfig& c) -> double& { return c.train.loss.margin; }));
    f.emplace_back("loss.mining_epsilon",
                   real_field([](RunConfig& c) -> double& { return c.train.loss.mining_epsilon; }));
    f.emplace_back("eval.ks", Field{[](RunConfig& c, const std::string& v) { c.ks = parse_counts(v); },
                                    [](const RunConfig& c) {
                                      std::string s;
                                      for (std::size_t i = 0; i < c.ks.size(); ++i) {
                                        if (i) s += ',';
                                        s += std::to_string(c.ks[i]);
                                      }
                                      return s;
                                    }});
    f.emplace_back("output.dir", Field{[](RunConfig& c, const std::string& v) { c.output_dir = v; },
                                       [](const RunConfig& c) { return c.output_dir; }});
    return f;
  }();
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      try {
        field.set(*this, value);
      } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields()) out.push_back(name);
  return out;
}

void RunConfig::finalize() {
  data.seed = seed;
  train.seed = seed;
  if (branch_count < 1 || branch_count > 2) throw ConfigError("key 'model.branches': must be 1 or 2");
  train.loss.ms_weights = {branch1.ms_weight};
  if (branch_count == 2) train.loss.ms_weights.push_back(branch2.ms_weight);
  data.validate();
  train.validate();
  branch1.validate();
  if (branch_count == 2) branch2.validate();
  if (ks.empty()) throw ConfigError("key 'eval.ks': at least one cutoff required");
  for (std::size_t k : ks) {
    if (k < 1) throw ConfigError("key 'eval.ks': cutoffs must be >= 1");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("key 'data.train_fraction': must lie in (0, 1)");
  }
}

std::vector<BranchConfig> RunConfig::branch_configs() const {
  std::vector<BranchConfig> out{branch1};
  if (branch_count == 2) out.push_back(branch2);
  return out;
}

ModelState RunConfig::make_model() const {
  return ModelState::create(branch_configs(), data.dim, share_head_weights, seed);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  apply_config_text(cfg, text, source);
  return cfg;
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

}  // namespace crt
