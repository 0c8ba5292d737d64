#include "lcye/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lcye/rng.hpp"

namespace lcye {

using nlohmann::json;

namespace {

json integer(std::optional<double> min = {}, std::optional<double> max = {}) {
  json s = {{"type", "integer"}};
  if (min) s["minimum"] = *min;
  if (max) s["maximum"] = *max;
  return s;
}

json number(std::optional<double> min = {}, std::optional<double> max = {}, bool exclusive_min = false) {
  json s = {{"type", "number"}};
  if (min) s[exclusive_min ? "exclusiveMinimum" : "minimum"] = *min;
  if (max) s["maximum"] = *max;
  return s;
}

json boolean() { return {{"type", "boolean"}}; }
json string() { return {{"type", "string"}}; }
json one_of(std::vector<std::string> values) { return {{"type", "string"}, {"enum", values}}; }
json array_of(json items) { return {{"type", "array"}, {"items", std::move(items)}}; }
json object(json properties) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"additionalProperties", false}};
}

json build_schema() {
  const std::vector<std::string> archs = {"convnet_global", "convnet_parts"};
  const std::vector<std::string> mimic_modes = {"baseline", "online", "offline"};
  json s = object({
      {"seed", integer(0)},
      {"out_dir", string()},
      {"dataset", object({{"source", one_of({"synthetic", "market"})},
                          {"root", string()},
                          {"num_train_ids", integer(2)},
                          {"num_test_ids", integer(1)},
                          {"imgs_per_id", integer(4)},
                          {"num_cameras", integer(2)},
                          {"height", integer(32)},
                          {"width", integer(32)}})},
      {"victim", object({{"arch", one_of(archs)},
                         {"epochs", integer(0)},
                         {"batch_size", integer(4)},
                         {"ids_per_batch", integer(2)},
                         {"lr", number(0.0, {}, true)},
                         {"triplet_margin", number(0.0)},
                         {"augment", boolean()}})},
      {"knowledge", object({{"arch", one_of(archs)}, {"cross_dataset", boolean()}})},
      {"mimic", object({{"mode", one_of(mimic_modes)},
                        {"epochs", integer(0)},
                        {"lr", number(0.0, {}, true)},
                        {"batch_size", integer(4)},
                        {"ids_per_batch", integer(2)},
                        {"temperature", number(0.0, {}, true)},
                        {"steps_per_attack_step", integer(0)}})},
      {"attack", object({{"epochs", integer(0)},
                         {"batch_size", integer(4)},
                         {"ids_per_batch", integer(2)},
                         {"lr", number(0.0, {}, true)},
                         {"mis_rank", one_of({"cent", "xent", "etri", "xent_etri"})},
                         {"perception", one_of({"ssim", "ms_ssim"})},
                         {"ms_ssim_scales", integer(1, 5)},
                         {"alpha1", number(0.0)},
                         {"alpha2", number(0.0)},
                         {"alpha3", number(0.0)},
                         {"delta", number(0.0, 1.0)},
                         {"margin", number(0.0)},
                         {"etri_mean", boolean()},
                         {"eps", integer(1, 255)},
                         {"pixel_ratio", number(0.0, 1.0, true)},
                         {"relaxed", boolean()},
                         {"relax_factor", number(0.0, 1.0)},
                         {"mode", one_of({"untargeted", "targeted"})},
                         {"target_id", integer(-1)},
                         {"access", one_of({"white_box", "black_box"})}})},
      {"target", object({{"num_targets", integer(1)}, {"gamma", integer(2)}})},
      {"pgd", object({{"steps", integer(1)}, {"step_size", number(0.0, {}, true)}})},
      {"ablate", object({{"eps", array_of(integer(1, 255))},
                         {"ratios", array_of(number(0.0, 1.0, true))},
                         {"relaxed_ratios", array_of(number(0.0, 1.0, true))},
                         {"mimic_modes", array_of(one_of(mimic_modes))},
                         {"retrain", boolean()},
                         {"pgd", boolean()}})},
  });
  s["$schema"] = "http://json-schema.org/draft-07/schema#";
  s["title"] = "lcye experiment config";
  return s;
}

bool type_matches(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  if (type == "number") return v.is_number();
  throw std::logic_error("schema uses unsupported type " + type);
}

std::string key_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  auto it = j.find(key);
  return it == j.end() ? empty : *it;
}

}  // namespace

const json& config_schema() {
  static const json s = build_schema();
  return s;
}

void validate_against_schema(const json& doc, const json& schema, const std::string& path) {
  const std::string where = path.empty() ? "config" : path;
  if (auto t = schema.find("type"); t != schema.end() && !type_matches(doc, *t)) {
    throw std::invalid_argument(where + ": expected " + t->get<std::string>() + ", got " + doc.type_name());
  }
  if (auto e = schema.find("enum"); e != schema.end()) {
    bool found = false;
    for (const auto& v : *e) found = found || v == doc;
    if (!found) throw std::invalid_argument(where + ": value " + doc.dump() + " is not one of " + e->dump());
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (auto m = schema.find("minimum"); m != schema.end() && v < m->get<double>()) {
      throw std::invalid_argument(where + ": " + doc.dump() + " is below the minimum " + m->dump());
    }
    if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && v <= m->get<double>()) {
      throw std::invalid_argument(where + ": " + doc.dump() + " must be greater than " + m->dump());
    }
    if (auto m = schema.find("maximum"); m != schema.end() && v > m->get<double>()) {
      throw std::invalid_argument(where + ": " + doc.dump() + " is above the maximum " + m->dump());
    }
  }
  if (doc.is_object()) {
    const auto props = schema.find("properties");
    const bool closed = schema.value("additionalProperties", true) == false;
    for (const auto& [key, value] : doc.items()) {
      if (props != schema.end() && props->contains(key)) {
        validate_against_schema(value, props->at(key), key_path(path, key));
      } else if (closed) {
        throw std::invalid_argument("unknown config key: " + key_path(path, key));
      }
    }
  }
  if (doc.is_array()) {
    if (auto items = schema.find("items"); items != schema.end()) {
      for (std::size_t i = 0; i < doc.size(); ++i) {
        validate_against_schema(doc[i], *items, path + "[" + std::to_string(i) + "]");
      }
    }
  }
}

void ExperimentConfig::resolve() {
  const Rng root(seed);
  dataset.params.seed = seed;
  victim.seed = root.substream("victim").seed();
  mimic.seed = root.substream("mimic").seed();
  attack.seed = root.substream("attack").seed();
  target.seed = root.substream("target").seed();
  attack.attack.epsilon = eps / 255.0;
  pgd.epsilon = eps / 255.0;
}

void ExperimentConfig::validate() const {
  if (eps < 1 || eps > 255) throw std::invalid_argument("attack.eps: epsilon must be positive and at most 255");
  validate_against_schema(to_json(), config_schema());
  victim.validate();
  attack.validate();
  if (attack.mode == AttackMode::targeted && target_id >= dataset.params.num_train_ids) {
    throw std::invalid_argument("attack.target_id: " + std::to_string(target_id) + " has no memory row (N = " +
                                std::to_string(dataset.params.num_train_ids) + ")");
  }
  if (target.num_targets > dataset.params.num_train_ids) {
    throw std::invalid_argument("target.num_targets exceeds the number of memory rows");
  }
  if (dataset.source == "market" && dataset.root.empty()) {
    throw std::invalid_argument("dataset.root is required for a market layout");
  }
}

json ExperimentConfig::to_json() const {
  const auto& d = dataset.params;
  const auto& a = attack;
  std::vector<std::string> modes;
  for (auto m : ablate.mimic_modes) modes.push_back(to_string(m));
  return {
      {"seed", seed},
      {"out_dir", out_dir},
      {"dataset",
       {{"source", dataset.source},
        {"root", dataset.root},
        {"num_train_ids", d.num_train_ids},
        {"num_test_ids", d.num_test_ids},
        {"imgs_per_id", d.imgs_per_id},
        {"num_cameras", d.num_cameras},
        {"height", d.height},
        {"width", d.width}}},
      {"victim",
       {{"arch", to_string(victim_arch)},
        {"epochs", victim.epochs},
        {"batch_size", victim.batch_size},
        {"ids_per_batch", victim.ids_per_batch},
        {"lr", victim.lr},
        {"triplet_margin", victim.triplet_margin},
        {"augment", victim.augment}}},
      {"knowledge", {{"arch", to_string(knowledge.arch)}, {"cross_dataset", knowledge.cross_dataset}}},
      {"mimic",
       {{"mode", to_string(mimic_mode)},
        {"epochs", mimic.epochs},
        {"lr", mimic.lr},
        {"batch_size", mimic.batch_size},
        {"ids_per_batch", mimic.ids_per_batch},
        {"temperature", mimic.temperature},
        {"steps_per_attack_step", a.mimic_steps_per_attack_step}}},
      {"attack",
       {{"epochs", a.epochs},
        {"batch_size", a.batch_size},
        {"ids_per_batch", a.ids_per_batch},
        {"lr", a.lr},
        {"mis_rank", loss::to_string(a.mis_rank)},
        {"perception", loss::to_string(a.perception)},
        {"ms_ssim_scales", a.ms_ssim_scales},
        {"alpha1", a.weights.alpha1},
        {"alpha2", a.weights.alpha2},
        {"alpha3", a.weights.alpha3},
        {"delta", a.weights.delta},
        {"margin", a.weights.margin},
        {"etri_mean", a.etri_mean},
        {"eps", eps},
        {"pixel_ratio", a.attack.pixel_ratio},
        {"relaxed", a.attack.relaxed},
        {"relax_factor", a.attack.relax_factor},
        {"mode", to_string(a.mode)},
        {"target_id", target_id},
        {"access", to_string(a.access)}}},
      {"target", {{"num_targets", target.num_targets}, {"gamma", target.gamma}}},
      {"pgd", {{"steps", pgd.steps}, {"step_size", pgd.step_size * 255.0}}},
      {"ablate",
       {{"eps", ablate.eps},
        {"ratios", ablate.ratios},
        {"relaxed_ratios", ablate.relaxed_ratios},
        {"mimic_modes", modes},
        {"retrain", ablate.retrain},
        {"pgd", ablate.pgd}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  validate_against_schema(j, config_schema());
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);

  const json& d = section(j, "dataset");
  c.dataset.source = d.value("source", c.dataset.source);
  c.dataset.root = d.value("root", c.dataset.root);
  auto& dp = c.dataset.params;
  dp.num_train_ids = d.value("num_train_ids", dp.num_train_ids);
  dp.num_test_ids = d.value("num_test_ids", dp.num_test_ids);
  dp.imgs_per_id = d.value("imgs_per_id", dp.imgs_per_id);
  dp.num_cameras = d.value("num_cameras", dp.num_cameras);
  dp.height = d.value("height", dp.height);
  dp.width = d.value("width", dp.width);

  const json& v = section(j, "victim");
  c.victim_arch = parse_arch(v.value("arch", to_string(c.victim_arch)));
  c.victim.epochs = v.value("epochs", c.victim.epochs);
  c.victim.batch_size = v.value("batch_size", c.victim.batch_size);
  c.victim.ids_per_batch = v.value("ids_per_batch", c.victim.ids_per_batch);
  c.victim.lr = v.value("lr", c.victim.lr);
  c.victim.triplet_margin = v.value("triplet_margin", c.victim.triplet_margin);
  c.victim.augment = v.value("augment", c.victim.augment);

  const json& k = section(j, "knowledge");
  c.knowledge.arch = parse_arch(k.value("arch", to_string(c.knowledge.arch)));
  c.knowledge.cross_dataset = k.value("cross_dataset", c.knowledge.cross_dataset);

  const json& m = section(j, "mimic");
  c.mimic_mode = parse_mimic_mode(m.value("mode", to_string(c.mimic_mode)));
  c.mimic.epochs = m.value("epochs", c.mimic.epochs);
  c.mimic.lr = m.value("lr", c.mimic.lr);
  c.mimic.batch_size = m.value("batch_size", c.mimic.batch_size);
  c.mimic.ids_per_batch = m.value("ids_per_batch", c.mimic.ids_per_batch);
  c.mimic.temperature = m.value("temperature", c.mimic.temperature);

  auto& a = c.attack;
  const json& at = section(j, "attack");
  a.mimic_steps_per_attack_step = m.value("steps_per_attack_step", a.mimic_steps_per_attack_step);
  a.epochs = at.value("epochs", a.epochs);
  a.batch_size = at.value("batch_size", a.batch_size);
  a.ids_per_batch = at.value("ids_per_batch", a.ids_per_batch);
  a.lr = at.value("lr", a.lr);
  a.mis_rank = loss::parse_mis_rank(at.value("mis_rank", loss::to_string(a.mis_rank)));
  a.perception = loss::parse_perception(at.value("perception", loss::to_string(a.perception)));
  a.ms_ssim_scales = at.value("ms_ssim_scales", a.ms_ssim_scales);
  a.weights.alpha1 = at.value("alpha1", a.weights.alpha1);
  a.weights.alpha2 = at.value("alpha2", a.weights.alpha2);
  a.weights.alpha3 = at.value("alpha3", a.weights.alpha3);
  a.weights.delta = at.value("delta", a.weights.delta);
  a.weights.margin = at.value("margin", a.weights.margin);
  a.etri_mean = at.value("etri_mean", a.etri_mean);
  c.eps = at.value("eps", c.eps);
  a.attack.pixel_ratio = at.value("pixel_ratio", a.attack.pixel_ratio);
  a.attack.relaxed = at.value("relaxed", a.attack.relaxed);
  a.attack.relax_factor = at.value("relax_factor", a.attack.relax_factor);
  a.mode = parse_attack_mode(at.value("mode", to_string(a.mode)));
  c.target_id = at.value("target_id", c.target_id);
  a.access = parse_access(at.value("access", to_string(a.access)));

  const json& t = section(j, "target");
  c.target.num_targets = t.value("num_targets", c.target.num_targets);
  c.target.gamma = t.value("gamma", c.target.gamma);

  const json& p = section(j, "pgd");
  c.pgd.steps = p.value("steps", c.pgd.steps);
  c.pgd.step_size = p.value("step_size", c.pgd.step_size * 255.0) / 255.0;

  const json& ab = section(j, "ablate");
  c.ablate.eps = ab.value("eps", c.ablate.eps);
  c.ablate.ratios = ab.value("ratios", c.ablate.ratios);
  c.ablate.relaxed_ratios = ab.value("relaxed_ratios", c.ablate.relaxed_ratios);
  if (ab.contains("mimic_modes")) {
    c.ablate.mimic_modes.clear();
    for (const auto& s : ab.at("mimic_modes")) c.ablate.mimic_modes.push_back(parse_mimic_mode(s.get<std::string>()));
  }
  c.ablate.retrain = ab.value("retrain", c.ablate.retrain);
  c.ablate.pgd = ab.value("pgd", c.ablate.pgd);
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = cfg.to_json();
  j.erase("out_dir");
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << fnv1a64(j.dump());
  return o.str();
}

ExperimentConfig load_config(const std::string& path, const ConfigOverrides& ov) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config " + path + " is not valid JSON: " + e.what());
    }
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  if (ov.seed) {
    c.seed = *ov.seed;
  } else if (!j.contains("seed")) {
    if (const char* env = std::getenv("LCYE_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0') throw std::invalid_argument(std::string("LCYE_SEED is not an unsigned integer: ") + env);
      c.seed = v;
    }
  }
  if (ov.eps) c.eps = *ov.eps;
  if (ov.ratio) c.attack.attack.pixel_ratio = *ov.ratio;
  if (ov.relaxed) c.attack.attack.relaxed = true;
  if (ov.mode) c.attack.mode = parse_attack_mode(*ov.mode);
  if (ov.target_id) c.target_id = *ov.target_id;
  if (ov.out_dir) c.out_dir = *ov.out_dir;
  c.resolve();
  c.validate();
  return c;
}

}  // namespace lcye
