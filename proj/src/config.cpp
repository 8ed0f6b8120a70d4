#include "cilab/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "cilab/errors.hpp"
#include "cilab/rng.hpp"

namespace cilab {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string perturb_schedule_text(const std::vector<PerturbStep>& schedule) {
  std::string out;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (i > 0) out += ",";
    out += perturb_kind_name(schedule[i].kind) + ":" + format_double(schedule[i].strength);
  }
  return out;
}

std::vector<PerturbStep> parse_perturb_schedule(const std::string& text) {
  std::vector<PerturbStep> schedule;
  if (text.empty()) return schedule;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigurationError("perturb schedule entries must look like kind:strength, got " +
                               item);
    PerturbStep step;
    step.kind = perturb_kind_from_name(item.substr(0, colon));
    try {
      step.strength = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigurationError("bad perturbation strength in " + item);
    }
    schedule.push_back(step);
  }
  return schedule;
}

namespace {

std::string trim(const std::string& s) {
  const std::size_t begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const std::size_t end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

using KvMap = std::map<std::string, std::string>;  // "section.key" -> value

KvMap parse_kv(const std::string& text) {
  KvMap kv;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigurationError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigurationError("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigurationError("config line " + std::to_string(lineno) + ": key outside a section");
    const std::string key = section + "." + trim(t.substr(0, eq));
    if (kv.count(key))
      throw ConfigurationError("config: duplicate key " + key);
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

class KvReader {
 public:
  explicit KvReader(KvMap kv) : kv_(std::move(kv)) {}

  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback) {
    const auto v = take(key);
    if (!v) return fallback;
    try {
      return std::stoull(*v);
    } catch (const std::exception&) {
      throw ConfigurationError("config: " + key + " must be an unsigned integer, got " + *v);
    }
  }

  std::size_t take_size(const std::string& key, std::size_t fallback) {
    return static_cast<std::size_t>(take_u64(key, fallback));
  }

  double take_double(const std::string& key, double fallback) {
    const auto v = take(key);
    if (!v) return fallback;
    try {
      return std::stod(*v);
    } catch (const std::exception&) {
      throw ConfigurationError("config: " + key + " must be a number, got " + *v);
    }
  }

  bool take_bool(const std::string& key, bool fallback) {
    const auto v = take(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigurationError("config: " + key + " must be true or false, got " + *v);
  }

  std::string take_string(const std::string& key, const std::string& fallback) {
    const auto v = take(key);
    return v ? *v : fallback;
  }

  // Seed fields: explicit value wins, otherwise derive from the master.
  std::uint64_t take_seed(const std::string& key, std::uint64_t master, std::string_view tag) {
    const auto v = take(key);
    if (!v) return derive_seed(master, tag);
    try {
      return std::stoull(*v);
    } catch (const std::exception&) {
      throw ConfigurationError("config: " + key + " must be an unsigned integer, got " + *v);
    }
  }

  void require_empty() const {
    if (!kv_.empty())
      throw ConfigurationError("config: unknown key " + kv_.begin()->first);
  }

 private:
  KvMap kv_;
};

ExperimentConfig resolve(KvMap kv, std::optional<std::uint64_t> seed_override) {
  KvReader reader(std::move(kv));
  ExperimentConfig cfg;

  cfg.seed = reader.take_u64("experiment.seed", 0);
  if (seed_override) cfg.seed = *seed_override;
  const char* env_root = std::getenv("CILAB_OUT");
  cfg.output_root = reader.take_string("experiment.output_root", env_root ? env_root : "out");

  cfg.dataset.classes = reader.take_size("dataset.classes", 10);
  cfg.dataset.dim = reader.take_size("dataset.dim", 32);
  cfg.dataset.train_per_class = reader.take_size("dataset.train_per_class", 500);
  cfg.dataset.val_per_class = reader.take_size("dataset.val_per_class", 100);
  cfg.dataset.cluster_radius = reader.take_double("dataset.cluster_radius", 4.0);
  cfg.dataset.seed = reader.take_seed("dataset.seed", cfg.seed, "data");

  cfg.split_base = reader.take_size("split.base", 5);
  cfg.split_steps = reader.take_size("split.steps", 5);
  cfg.split_per_step = reader.take_size("split.per_step", 1);
  cfg.order_seed = reader.take_seed("split.order_seed", cfg.seed, "order");

  cfg.algorithm = algorithm_from_name(reader.take_string("algorithm.name", "naive"));
  cfg.hyper.branch_stage = reader.take_size("algorithm.branch_stage", 4);
  cfg.hyper.lambda = reader.take_double("algorithm.lambda", 1.0);
  cfg.hyper.temperature = reader.take_double("algorithm.temperature", 2.0);
  const std::string head = reader.take_string("algorithm.head", "cosine");
  if (head == "cosine") {
    cfg.hyper.head = HeadKind::kCosine;
  } else if (head == "linear") {
    cfg.hyper.head = HeadKind::kLinear;
  } else {
    throw ConfigurationError("config: algorithm.head must be cosine or linear, got " + head);
  }
  cfg.hyper.cosine_scale = reader.take_double("algorithm.scale", 24.0);
  cfg.hyper.scale_learnable = reader.take_bool("algorithm.scale_learnable", false);
  cfg.hyper.exemplar_capacity = reader.take_size("algorithm.exemplars_per_class", 20);

  cfg.hyper.epochs_base = reader.take_size("schedule.epochs_base", 60);
  cfg.hyper.epochs_inc = reader.take_size("schedule.epochs_inc", 30);
  cfg.hyper.epochs_exploit = reader.take_size("schedule.epochs_exploit", 10);
  cfg.hyper.lr = reader.take_double("schedule.lr", 0.1);
  cfg.hyper.decay_power = reader.take_double("schedule.decay_power", 0.9);
  cfg.hyper.batch_size = reader.take_size("schedule.batch_size", 64);
  cfg.hyper.weight_decay = reader.take_double("schedule.weight_decay", 5e-4);
  cfg.hyper.train_seed = reader.take_seed("schedule.train_seed", cfg.seed, "train");

  cfg.retrain.epochs = reader.take_size("analysis.retrain_epochs", 30);
  cfg.retrain.lr = reader.take_double("analysis.retrain_lr", 0.1);
  cfg.retrain.decay_power = reader.take_double("analysis.retrain_decay_power", 0.9);
  cfg.retrain.batch_size = reader.take_size("analysis.retrain_batch_size", 64);
  cfg.retrain.weight_decay = reader.take_double("analysis.retrain_weight_decay", 0.0);
  cfg.retrain_seed = reader.take_seed("analysis.retrain_seed", cfg.seed, "retrain");
  cfg.cka_batch_size = reader.take_size("analysis.cka_batch_size", 256);
  cfg.cka_passes = reader.take_size("analysis.cka_passes", 10);
  cfg.cka_seed = reader.take_seed("analysis.cka_seed", cfg.seed, "cka");
  cfg.tsne_perplexity = reader.take_double("analysis.tsne_perplexity", 30.0);
  cfg.tsne_iterations = reader.take_size("analysis.tsne_iterations", 500);
  cfg.tsne_stage = reader.take_size("analysis.tsne_stage", 0);
  cfg.tsne_classes = reader.take_size("analysis.tsne_classes", 5);
  cfg.tsne_per_class = reader.take_size("analysis.tsne_per_class", 20);
  cfg.tsne_seed = reader.take_seed("analysis.tsne_seed", cfg.seed, "tsne");
  cfg.perturb_schedule =
      parse_perturb_schedule(reader.take_string("analysis.perturb_schedule", ""));
  cfg.perturb_seed = reader.take_seed("analysis.perturb_seed", cfg.seed, "perturb");

  reader.require_empty();

  if (cfg.split_base + cfg.split_steps * cfg.split_per_step != cfg.dataset.classes)
    throw ConfigurationError(
        "config: split.base + split.steps * split.per_step must equal dataset.classes");
  if (!cfg.perturb_schedule.empty() && cfg.perturb_schedule.size() != cfg.split_steps)
    throw ConfigurationError("config: perturb_schedule length must equal split.steps");
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  return resolve(parse_kv(text), std::nullopt);
}

ExperimentConfig parse_config_text(const std::string& text, std::uint64_t seed_override) {
  return resolve(parse_kv(text), seed_override);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ExperimentConfig parse_config_file(const std::string& path, std::uint64_t seed_override) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), seed_override);
}

std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "seed = " << cfg.seed << "\n";
  out << "output_root = " << cfg.output_root << "\n";
  out << "\n[dataset]\n";
  out << "classes = " << cfg.dataset.classes << "\n";
  out << "dim = " << cfg.dataset.dim << "\n";
  out << "train_per_class = " << cfg.dataset.train_per_class << "\n";
  out << "val_per_class = " << cfg.dataset.val_per_class << "\n";
  out << "cluster_radius = " << format_double(cfg.dataset.cluster_radius) << "\n";
  out << "seed = " << cfg.dataset.seed << "\n";
  out << "\n[split]\n";
  out << "base = " << cfg.split_base << "\n";
  out << "steps = " << cfg.split_steps << "\n";
  out << "per_step = " << cfg.split_per_step << "\n";
  out << "order_seed = " << cfg.order_seed << "\n";
  out << "\n[algorithm]\n";
  out << "name = " << algorithm_name(cfg.algorithm) << "\n";
  out << "branch_stage = " << cfg.hyper.branch_stage << "\n";
  out << "lambda = " << format_double(cfg.hyper.lambda) << "\n";
  out << "temperature = " << format_double(cfg.hyper.temperature) << "\n";
  out << "head = " << (cfg.hyper.head == HeadKind::kCosine ? "cosine" : "linear") << "\n";
  out << "scale = " << format_double(cfg.hyper.cosine_scale) << "\n";
  out << "scale_learnable = " << (cfg.hyper.scale_learnable ? "true" : "false") << "\n";
  out << "exemplars_per_class = " << cfg.hyper.exemplar_capacity << "\n";
  out << "\n[schedule]\n";
  out << "epochs_base = " << cfg.hyper.epochs_base << "\n";
  out << "epochs_inc = " << cfg.hyper.epochs_inc << "\n";
  out << "epochs_exploit = " << cfg.hyper.epochs_exploit << "\n";
  out << "lr = " << format_double(cfg.hyper.lr) << "\n";
  out << "decay_power = " << format_double(cfg.hyper.decay_power) << "\n";
  out << "batch_size = " << cfg.hyper.batch_size << "\n";
  out << "weight_decay = " << format_double(cfg.hyper.weight_decay) << "\n";
  out << "train_seed = " << cfg.hyper.train_seed << "\n";
  out << "\n[analysis]\n";
  out << "retrain_epochs = " << cfg.retrain.epochs << "\n";
  out << "retrain_lr = " << format_double(cfg.retrain.lr) << "\n";
  out << "retrain_decay_power = " << format_double(cfg.retrain.decay_power) << "\n";
  out << "retrain_batch_size = " << cfg.retrain.batch_size << "\n";
  out << "retrain_weight_decay = " << format_double(cfg.retrain.weight_decay) << "\n";
  out << "retrain_seed = " << cfg.retrain_seed << "\n";
  out << "cka_batch_size = " << cfg.cka_batch_size << "\n";
  out << "cka_passes = " << cfg.cka_passes << "\n";
  out << "cka_seed = " << cfg.cka_seed << "\n";
  out << "tsne_perplexity = " << format_double(cfg.tsne_perplexity) << "\n";
  out << "tsne_iterations = " << cfg.tsne_iterations << "\n";
  out << "tsne_stage = " << cfg.tsne_stage << "\n";
  out << "tsne_classes = " << cfg.tsne_classes << "\n";
  out << "tsne_per_class = " << cfg.tsne_per_class << "\n";
  out << "tsne_seed = " << cfg.tsne_seed << "\n";
  out << "perturb_schedule = " << perturb_schedule_text(cfg.perturb_schedule) << "\n";
  out << "perturb_seed = " << cfg.perturb_seed << "\n";
  return out.str();
}

namespace {

std::uint64_t fnv_text(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  // The output root is an operational detail, not part of the
  // experiment's identity; drop it before hashing.
  std::stringstream ss(resolved_config_text(cfg));
  std::string line;
  std::string hashed;
  while (std::getline(ss, line)) {
    if (line.rfind("output_root", 0) == 0) continue;
    hashed += line;
    hashed += '\n';
  }
  return fnv_text(hashed);
}

std::uint64_t dataset_block_hash(const ExperimentConfig& cfg) {
  std::string text;
  text += "classes=" + std::to_string(cfg.dataset.classes) + "\n";
  text += "dim=" + std::to_string(cfg.dataset.dim) + "\n";
  text += "train_per_class=" + std::to_string(cfg.dataset.train_per_class) + "\n";
  text += "val_per_class=" + std::to_string(cfg.dataset.val_per_class) + "\n";
  text += "cluster_radius=" + format_double(cfg.dataset.cluster_radius) + "\n";
  text += "seed=" + std::to_string(cfg.dataset.seed) + "\n";
  return fnv_text(text);
}

}  // namespace cilab
