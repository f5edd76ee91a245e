#include "atfs/harness/config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "atfs/io.hpp"

namespace atfs::harness {

using nlohmann::json;

namespace {

// Typed access to one JSON object; every error names the field's pointer.
class Reader {
 public:
  Reader(const json& j, std::string pointer) : j_(j), pointer_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(where(), "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) throw ConfigError(pointer_ + "/" + k, "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader object(const char* key) const {
    static const json empty = json::object();
    return Reader(has(key) ? j_.at(key) : empty, pointer_ + "/" + key);
  }

  const json& raw(const char* key) const { return j_.at(key); }
  std::string at(const char* key) const { return pointer_ + "/" + key; }

  double number(const char* key, double def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(at(key), "must be finite");
    return d;
  }

  std::uint64_t count(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(at(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  int integer(const char* key, int def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    return v.get<int>();
  }

  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, const std::string& def) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  const std::string& where() const { return pointer_; }

 private:
  const json& j_;
  std::string pointer_;
};

// Runs a validate() call and re-throws its message against a pointer.
template <class F>
void check(const std::string& pointer, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(pointer, e.what());
  }
}

AttackConfig read_attack(const Reader& r, AttackConfig def, bool with_loss) {
  if (with_loss) {
    r.allow({"epsilon", "step_size", "steps", "random_start", "loss"});
  } else {
    r.allow({"epsilon", "step_size", "steps", "random_start"});
  }
  AttackConfig a = def;
  a.epsilon = r.number("epsilon", def.epsilon);
  a.step_size = r.number("step_size", def.step_size);
  a.steps = r.integer("steps", def.steps);
  a.random_start = r.boolean("random_start", def.random_start);
  if (with_loss) {
    check(r.at("loss"), [&] { a.loss = parse_attack_loss(r.string("loss", attack_loss_name(def.loss))); });
  }
  check(r.where(), [&] { a.validate(); });
  return a;
}

json attack_json(const AttackConfig& a, bool with_loss) {
  json j{{"epsilon", a.epsilon}, {"step_size", a.step_size}, {"steps", a.steps},
         {"random_start", a.random_start}};
  if (with_loss) j["loss"] = attack_loss_name(a.loss);
  return j;
}

void check_split_name(const Reader& r, const char* key, const std::string& v) {
  if (v != "train" && v != "val" && v != "test") {
    throw ConfigError(r.at(key), "expected one of train, val, test");
  }
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  const Reader root(doc, "");
  root.allow({"schema_version", "seed", "dataset", "model", "train", "eval", "analysis", "output_dir"});
  if (root.integer("schema_version", kConfigSchemaVersion) != kConfigSchemaVersion) {
    throw ConfigError(root.at("schema_version"),
                      "unsupported version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  }
  RunConfig cfg;
  cfg.seed = root.count("seed", 0);
  cfg.output_dir = root.string("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) throw ConfigError(root.at("output_dir"), "must not be empty");

  {
    const Reader r = root.object("dataset");
    r.allow({"name", "train", "val", "test", "classes", "dim", "noise", "seed"});
    DatasetSpec& d = cfg.dataset;
    d.name = r.string("name", d.name);
    d.train = r.count("train", d.train);
    d.val = r.count("val", d.val);
    d.test = r.count("test", d.test);
    d.classes = r.count("classes", d.classes);
    d.dim = r.count("dim", d.dim);
    d.noise = r.number("noise", d.noise);
    d.seed = r.count("seed", d.seed);
    if (d.name == "mnist-subset" || d.name == "cifar10-subset") {
      if (r.has("classes") && d.classes != 10) throw ConfigError(r.at("classes"), "fixed at 10");
      d.classes = 10;
    } else if (d.name == "synthetic-moons") {
      if (r.has("classes") && d.classes != 2) throw ConfigError(r.at("classes"), "fixed at 2");
      d.classes = 2;
    }
    check(r.where(), [&] { d.validate(); });
  }
  {
    const Reader r = root.object("model");
    r.allow({"architecture", "hidden", "depth", "width", "base_width", "feature_dim"});
    ModelSpec& m = cfg.model;
    m.architecture = r.string("architecture", m.architecture);
    m.hidden = r.count("hidden", m.hidden);
    m.depth = r.count("depth", m.depth);
    m.width = r.count("width", m.width);
    m.base_width = r.count("base_width", m.base_width);
    m.feature_dim = r.count("feature_dim", m.feature_dim);
    check(r.where(), [&] { m.validate(); });
  }
  {
    const Reader r = root.object("train");
    r.allow({"epochs", "batch_size", "lr", "milestones", "lr_divisor", "momentum", "weight_decay",
             "lambda_adv", "lambda_fs", "eta1", "eta2", "eta3", "temperature", "variant",
             "trades_weight", "mart_weight", "attack", "selection_attack"});
    TrainConfig& t = cfg.train;
    t.epochs = r.integer("epochs", t.epochs);
    t.batch_size = r.count("batch_size", t.batch_size);
    t.schedule.base = r.number("lr", t.schedule.base);
    t.schedule.divisor = r.number("lr_divisor", t.schedule.divisor);
    if (r.has("milestones")) {
      const json& ms = r.raw("milestones");
      if (!ms.is_array()) throw ConfigError(r.at("milestones"), "expected an array of integers");
      t.schedule.milestones.clear();
      for (std::size_t i = 0; i < ms.size(); ++i) {
        if (!ms[i].is_number_integer()) {
          throw ConfigError(r.at("milestones") + "/" + std::to_string(i), "expected an integer");
        }
        t.schedule.milestones.push_back(ms[i].get<int>());
      }
    }
    t.momentum = r.number("momentum", t.momentum);
    t.weight_decay = r.number("weight_decay", t.weight_decay);
    t.lambda_adv = r.number("lambda_adv", t.lambda_adv);
    t.lambda_fs = r.number("lambda_fs", t.lambda_fs);
    t.link_weights.eta1 = r.number("eta1", t.link_weights.eta1);
    t.link_weights.eta2 = r.number("eta2", t.link_weights.eta2);
    t.link_weights.eta3 = r.number("eta3", t.link_weights.eta3);
    t.fs.temperature = r.number("temperature", t.fs.temperature);
    check(r.at("variant"), [&] { t.adv.variant = parse_adv_variant(r.string("variant", "at")); });
    t.adv.trades_weight = r.number("trades_weight", t.adv.trades_weight);
    t.adv.mart_weight = r.number("mart_weight", t.adv.mart_weight);
    t.attack = read_attack(r.object("attack"), t.attack, false);
    t.attack.loss = inner_attack_loss(t.adv.variant);
    t.selection_attack = read_attack(r.object("selection_attack"), t.selection_attack, true);
    t.seed = cfg.seed;
    check(r.where(), [&] { t.validate(); });
  }
  {
    const Reader r = root.object("eval");
    r.allow({"suite", "split"});
    cfg.eval.split = r.string("split", cfg.eval.split);
    check_split_name(r, "split", cfg.eval.split);
    if (r.has("suite")) {
      const json& s = r.raw("suite");
      if (!s.is_array() || s.empty()) throw ConfigError(r.at("suite"), "expected a non-empty array");
      cfg.eval.suite.clear();
      std::set<std::string> names;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const Reader a(s[i], r.at("suite") + "/" + std::to_string(i));
        a.allow({"name", "kind", "epsilon", "step_size", "steps", "random_start", "loss"});
        AttackSpec spec;
        check(a.at("kind"), [&] { spec.kind = parse_attack_kind(a.string("kind", "pgd")); });
        spec.name = a.string("name", attack_kind_name(spec.kind));
        if (!names.insert(spec.name).second) throw ConfigError(a.at("name"), "duplicate attack name");
        AttackConfig def;
        def.random_start = false;
        def.loss = spec.kind == AttackKind::kCw ? AttackLoss::kCwMargin : AttackLoss::kCrossEntropy;
        if (spec.kind == AttackKind::kFgsm) {
          def.steps = 1;
          def.step_size = def.epsilon;
        }
        json copy = s[i];
        copy.erase("name");
        copy.erase("kind");
        spec.config = read_attack(Reader(copy, a.where()), def, true);
        cfg.eval.suite.push_back(spec);
      }
    }
  }
  {
    const Reader r = root.object("analysis");
    r.allow({"alpha", "beta", "pairs", "segment_points", "max_attempts", "l2_attack", "feature_attack",
             "split", "max_samples"});
    ThicknessConfig& th = cfg.analysis.thickness;
    th.alpha = r.number("alpha", th.alpha);
    th.beta = r.number("beta", th.beta);
    th.pairs = r.count("pairs", th.pairs);
    th.segment_points = r.count("segment_points", th.segment_points);
    th.max_attempts = r.count("max_attempts", th.max_attempts);
    {
      const Reader l2 = r.object("l2_attack");
      l2.allow({"epsilon", "step_size", "steps"});
      th.attack.epsilon = l2.number("epsilon", th.attack.epsilon);
      th.attack.step_size = l2.number("step_size", th.attack.step_size);
      th.attack.steps = l2.integer("steps", th.attack.steps);
    }
    th.seed = cfg.seed;
    check(r.where(), [&] { th.validate(); });
    cfg.analysis.feature_attack = read_attack(r.object("feature_attack"), cfg.analysis.feature_attack, true);
    cfg.analysis.split = r.string("split", cfg.analysis.split);
    check_split_name(r, "split", cfg.analysis.split);
    cfg.analysis.max_samples = r.count("max_samples", 0);
  }
  return cfg;
}

json to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json suite = json::array();
  for (const AttackSpec& a : cfg.eval.suite) {
    json j = attack_json(a.config, true);
    j["name"] = a.name;
    j["kind"] = attack_kind_name(a.kind);
    suite.push_back(j);
  }
  const ThicknessConfig& th = cfg.analysis.thickness;
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"dataset",
       {{"name", cfg.dataset.name},
        {"train", cfg.dataset.train},
        {"val", cfg.dataset.val},
        {"test", cfg.dataset.test},
        {"classes", cfg.dataset.classes},
        {"dim", cfg.dataset.dim},
        {"noise", cfg.dataset.noise},
        {"seed", cfg.dataset.seed}}},
      {"model",
       {{"architecture", cfg.model.architecture},
        {"hidden", cfg.model.hidden},
        {"depth", cfg.model.depth},
        {"width", cfg.model.width},
        {"base_width", cfg.model.base_width},
        {"feature_dim", cfg.model.resolved_feature_dim()}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.schedule.base},
        {"milestones", t.schedule.milestones},
        {"lr_divisor", t.schedule.divisor},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"lambda_adv", t.lambda_adv},
        {"lambda_fs", t.lambda_fs},
        {"eta1", t.link_weights.eta1},
        {"eta2", t.link_weights.eta2},
        {"eta3", t.link_weights.eta3},
        {"temperature", t.fs.temperature},
        {"variant", adv_variant_name(t.adv.variant)},
        {"trades_weight", t.adv.trades_weight},
        {"mart_weight", t.adv.mart_weight},
        {"attack", attack_json(t.attack, false)},
        {"selection_attack", attack_json(t.selection_attack, true)}}},
      {"eval", {{"suite", suite}, {"split", cfg.eval.split}}},
      {"analysis",
       {{"alpha", th.alpha},
        {"beta", th.beta},
        {"pairs", th.pairs},
        {"segment_points", th.segment_points},
        {"max_attempts", th.max_attempts},
        {"l2_attack",
         {{"epsilon", th.attack.epsilon}, {"step_size", th.attack.step_size}, {"steps", th.attack.steps}}},
        {"feature_attack", attack_json(cfg.analysis.feature_attack, true)},
        {"split", cfg.analysis.split},
        {"max_samples", cfg.analysis.max_samples}}},
  };
}

std::string canonical_text(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const RunConfig& cfg) {
  const json full = to_json(cfg);
  const json j{{"seed", full["seed"]}, {"dataset", full["dataset"]}, {"model", full["model"]},
               {"train", full["train"]}};
  return io::hex64(io::fnv1a64(j.dump()));
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("", "override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::string pointer;
  std::istringstream parts(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(parts, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) throw ConfigError(pointer, "empty key in override '" + path + "'");
    pointer += "/" + keys[i];
    if (!node->is_object()) throw ConfigError(pointer, "cannot descend into a non-object");
    if (i + 1 == keys.size()) {
      (*node)[keys[i]] = value;
    } else {
      node = &(*node)[keys[i]];
      if (node->is_null()) *node = json::object();
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  return parse_run_config(doc);
}

std::filesystem::path run_dir(const RunConfig& cfg) {
  return std::filesystem::path(cfg.output_dir) / ("run-" + config_hash(cfg));
}

}  // namespace atfs::harness
