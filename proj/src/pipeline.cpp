#include "advtl/pipeline.hpp"

#include <fstream>
#include <iterator>
#include <ostream>
#include <set>

#include "advtl/rng.hpp"

namespace advtl {

namespace {

using nlohmann::json;

// Read-only view of a JSON object that reports errors with a dotted field path
// and rejects keys it was never asked about.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ != nullptr && !j_->is_object()) {
      throw ValidationError(fmt::format("{}: expected an object", display()));
    }
  }

  bool has(const char* key) const { return j_ != nullptr && j_->contains(key); }

  template <typename T>
  T get(const char* key, T fallback) const {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(j_->at(key), field(key));
  }

  template <typename T>
  T require(const char* key) const {
    seen_.insert(key);
    if (!has(key)) throw ValidationError(fmt::format("{}: required field is missing", field(key)));
    return convert<T>(j_->at(key), field(key));
  }

  const json* raw(const char* key) const {
    seen_.insert(key);
    return has(key) ? &j_->at(key) : nullptr;
  }

  Section child(const char* key) const {
    seen_.insert(key);
    return Section(has(key) ? &j_->at(key) : nullptr, field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& path() const { return path_; }

  // Call after every get/require/child on this section.
  void finish() const {
    if (j_ == nullptr) return;
    for (const auto& [key, value] : j_->items()) {
      if (!seen_.count(key)) throw ValidationError(fmt::format("{}: unknown field", field(key)));
    }
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ValidationError(fmt::format("{}: expected a number", where));
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ValidationError(fmt::format("{}: expected an integer", where));
        if constexpr (std::is_unsigned_v<T>) {
          if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ValidationError(fmt::format("{}: expected a non-negative integer", where));
          }
        }
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(fmt::format("{}: {}", where, e.what()));
    }
  }

  std::string display() const { return path_.empty() ? "<config>" : path_; }

  const json* j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

std::vector<BlockSpec> parse_blocks(const Section& s) {
  const json* blocks = s.raw("blocks");
  if (blocks == nullptr || !blocks->is_array() || blocks->empty()) {
    throw ValidationError(fmt::format("{}: expected a non-empty array", s.field("blocks")));
  }
  std::vector<BlockSpec> out;
  for (std::size_t i = 0; i < blocks->size(); ++i) {
    Section b(&blocks->at(i), fmt::format("{}[{}]", s.field("blocks"), i));
    BlockSpec spec;
    spec.name = b.require<std::string>("name");
    spec.widths = b.require<std::vector<int>>("widths");
    b.finish();
    out.push_back(std::move(spec));
  }
  s.finish();
  return out;
}

TrainConfig parse_train(const Section& s, TrainConfig base) {
  base.epochs = s.get("epochs", base.epochs);
  base.batch_clean = s.get("batch_clean", base.batch_clean);
  base.learning_rate = s.get("learning_rate", base.learning_rate);
  base.momentum = s.get("momentum", base.momentum);
  s.finish();
  try {
    base.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", s.path(), e.what()));
  }
  return base;
}

AttackConfig parse_attack(const Section& s, AttackConfig base) {
  base.epsilon = s.get("epsilon", base.epsilon);
  base.alpha = s.get("alpha", base.alpha);
  base.iterations = s.get("iterations", base.iterations);
  base.label_policy = parse_label_policy(s.get("label_policy", std::string(to_string(base.label_policy))));
  base.clip_lo = s.get("clip_lo", base.clip_lo);
  base.clip_hi = s.get("clip_hi", base.clip_hi);
  base.random_start = s.get("random_start", base.random_start);
  s.finish();
  return base;
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_clean", t.batch_clean},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum}};
}

json attack_json(const AttackConfig& a) {
  return {{"epsilon", a.epsilon},
          {"alpha", a.alpha},
          {"iterations", a.iterations},
          {"label_policy", std::string(to_string(a.label_policy))},
          {"clip_lo", a.clip_lo},
          {"clip_hi", a.clip_hi},
          {"random_start", a.random_start}};
}

json blocks_json(const std::vector<BlockSpec>& blocks) {
  auto arr = json::array();
  for (const auto& b : blocks) arr.push_back({{"name", b.name}, {"widths", b.widths}});
  return {{"blocks", arr}};
}

std::string hex16(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p, "cannot open");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path, "cannot move into place: " + ec.message());
}

bool combinable(TrainingMode m) { return m != TrainingMode::FgsmNoLl; }

constexpr TransferStrategy kStrategies[] = {TransferStrategy::FinalLayerOnly,
                                            TransferStrategy::LastBlock,
                                            TransferStrategy::FullNetwork};

}  // namespace

std::vector<Combination> all_combinations() {
  std::vector<Combination> out;
  const TrainingMode modes[] = {TrainingMode::Nat, TrainingMode::Fgsm, TrainingMode::Pgd};
  for (auto s : kStrategies) {
    for (auto src : modes) {
      for (auto tar : modes) out.push_back(Combination{src, tar, s});
    }
  }
  return out;
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  Section root(&j, "");
  c.seed = root.get<std::uint64_t>("seed", 0);

  {
    Section d = root.child("data");
    const auto kind = d.get<std::string>("kind", "synthetic");
    if (kind == "synthetic") {
      c.data.kind = DataConfig::Kind::Synthetic;
      auto& o = c.data.synth;
      o.dim = d.get("dim", o.dim);
      o.superclasses = d.get("superclasses", o.superclasses);
      o.fine_per_super = d.get("fine_per_super", o.fine_per_super);
      o.train_per_class = d.get("train_per_class", o.train_per_class);
      o.test_per_class = d.get("test_per_class", o.test_per_class);
      o.spread = d.get("spread", o.spread);
      o.radius = d.get("radius", o.radius);
      o.offset_scale = d.get("offset_scale", o.offset_scale);
      try {
        o.validate();
      } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("data: {}", e.what()));
      }
    } else if (kind == "csv") {
      c.data.kind = DataConfig::Kind::Csv;
      auto& p = c.data.csv;
      auto path = [&](const char* key) {
        std::filesystem::path v = d.require<std::string>(key);
        return v.is_relative() && !base_dir.empty() ? base_dir / v : v;
      };
      p.source_train = path("source_train");
      p.source_test = path("source_test");
      p.target_train = path("target_train");
      p.target_test = path("target_test");
      p.source_classes = d.require<int>("source_classes");
      p.target_classes = d.require<int>("target_classes");
      if (const json* r = d.raw("rescale")) {
        if (!r->is_array() || r->size() != 2 || !r->at(0).is_number() || !r->at(1).is_number()) {
          throw ValidationError("data.rescale: expected [lo, hi]");
        }
        p.rescale = RescaleRange{r->at(0).get<double>(), r->at(1).get<double>()};
      }
    } else {
      throw ValidationError(fmt::format("data.kind: unknown kind '{}' (expected synthetic|csv)", kind));
    }
    d.finish();
  }

  c.arch = parse_blocks(root.child("arch"));
  c.surrogate_arch = parse_blocks(root.child("surrogate_arch"));

  {
    Section t = root.child("training");
    const TrainConfig defaults = parse_train(t.child("default"), TrainConfig{});
    c.train_source = parse_train(t.child("source"), defaults);
    c.train_baseline = parse_train(t.child("baseline"), defaults);
    c.train_surrogate = parse_train(t.child("surrogate"), defaults);
    c.train_transfer = parse_train(t.child("transfer"), defaults);
    t.finish();
  }

  {
    Section a = root.child("attacks");
    AttackConfig fgsm_default;
    fgsm_default.iterations = 1;
    fgsm_default.alpha = fgsm_default.epsilon;
    c.fgsm = parse_attack(a.child("fgsm"), fgsm_default);
    c.pgd = parse_attack(a.child("pgd"), AttackConfig{});
    a.finish();
  }

  if (const json* b = root.raw("baselines")) {
    if (!b->is_array()) throw ValidationError("baselines: expected an array of modes");
    for (const auto& m : *b) {
      if (!m.is_string()) throw ValidationError("baselines: expected mode strings");
      c.baselines.push_back(parse_training_mode(m.get<std::string>()));
    }
  } else {
    c.baselines = {TrainingMode::Nat, TrainingMode::Fgsm, TrainingMode::FgsmNoLl, TrainingMode::Pgd};
  }

  if (const json* combos = root.raw("combinations")) {
    if (combos->is_string() && combos->get<std::string>() == "all") {
      c.combinations = all_combinations();
    } else if (combos->is_array()) {
      for (std::size_t i = 0; i < combos->size(); ++i) {
        Section e(&combos->at(i), fmt::format("combinations[{}]", i));
        Combination comb;
        comb.source = parse_training_mode(e.require<std::string>("source"));
        comb.target = parse_training_mode(e.require<std::string>("target"));
        comb.strategy = parse_strategy(e.require<std::string>("strategy"));
        e.finish();
        c.combinations.push_back(comb);
      }
    } else {
      throw ValidationError("combinations: expected \"all\" or an array");
    }
  } else {
    c.combinations = all_combinations();
  }
  if (root.has("output")) {
    std::filesystem::path out = root.get<std::string>("output", "");
    c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
  } else {
    root.raw("output");
  }
  root.finish();
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  if (data.kind == DataConfig::Kind::Synthetic) {
    const auto& o = data.synth;
    j["data"] = {{"kind", "synthetic"},
                 {"dim", o.dim},
                 {"superclasses", o.superclasses},
                 {"fine_per_super", o.fine_per_super},
                 {"train_per_class", o.train_per_class},
                 {"test_per_class", o.test_per_class},
                 {"spread", o.spread},
                 {"radius", o.radius},
                 {"offset_scale", o.offset_scale}};
  } else {
    const auto& p = data.csv;
    j["data"] = {{"kind", "csv"},
                 {"source_train", p.source_train.string()},
                 {"source_test", p.source_test.string()},
                 {"target_train", p.target_train.string()},
                 {"target_test", p.target_test.string()},
                 {"source_classes", p.source_classes},
                 {"target_classes", p.target_classes}};
    if (p.rescale) j["data"]["rescale"] = {p.rescale->lo, p.rescale->hi};
  }
  j["arch"] = blocks_json(arch);
  j["surrogate_arch"] = blocks_json(surrogate_arch);
  j["training"] = {{"source", train_json(train_source)},
                   {"baseline", train_json(train_baseline)},
                   {"surrogate", train_json(train_surrogate)},
                   {"transfer", train_json(train_transfer)}};
  j["attacks"] = {{"fgsm", attack_json(fgsm)}, {"pgd", attack_json(pgd)}};
  auto b = json::array();
  for (auto m : baselines) b.push_back(std::string(to_string(m)));
  j["baselines"] = b;
  auto combos = json::array();
  for (const auto& c : combinations) {
    combos.push_back({{"source", std::string(to_string(c.source))},
                      {"target", std::string(to_string(c.target))},
                      {"strategy", std::string(to_string(c.strategy))}});
  }
  j["combinations"] = combos;
  return j;
}

void RunConfig::validate() const {
  ArchSpec main{1, arch, 2};
  ArchSpec sur{1, surrogate_arch, 2};
  try {
    main.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("arch: {}", e.what()));
  }
  try {
    sur.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("surrogate_arch: {}", e.what()));
  }
  if (arch == surrogate_arch) {
    throw ValidationError("surrogate_arch: must differ from arch (black-box attacks need a "
                          "different architecture)");
  }
  for (const auto* t : {&train_source, &train_baseline, &train_surrogate, &train_transfer}) t->validate();
  try {
    fgsm.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("attacks.fgsm: {}", e.what()));
  }
  try {
    pgd.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("attacks.pgd: {}", e.what()));
  }
  std::set<TrainingMode> seen_baselines;
  for (auto m : baselines) {
    if (!seen_baselines.insert(m).second) {
      throw ValidationError(fmt::format("baselines: '{}' listed twice", to_string(m)));
    }
  }
  for (std::size_t i = 0; i < combinations.size(); ++i) {
    const auto& c = combinations[i];
    if (!combinable(c.source) || !combinable(c.target)) {
      throw ValidationError(
          fmt::format("combinations[{}]: modes must be nat, fgsm or pgd", i));
    }
    if (c.strategy == TransferStrategy::LastBlock && arch.size() < 2) {
      throw ValidationError(fmt::format(
          "combinations[{}]: last-block needs an arch with at least two blocks", i));
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (combinations[k] == c) {
        throw ValidationError(fmt::format("combinations[{}]: duplicates combinations[{}]", i, k));
      }
    }
  }
  if (baselines.empty() && combinations.empty()) {
    throw ValidationError("nothing to evaluate: baselines and combinations are both empty");
  }
}

std::string RunConfig::hash() const { return hex16(fnv1a(to_json().dump())); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return RunConfig::from_json(j, path.parent_path());
}

Run::Run(RunConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  dir_ = options_.output_root / config_.hash();
  for (const char* sub : {"checkpoints", "logs", "reports", "data"}) {
    std::error_code ec;
    std::filesystem::create_directories(dir_ / sub, ec);
    if (ec) throw IoError(dir_ / sub, "cannot create directory: " + ec.message());
  }
  manifest_ = {{"config_hash", config_.hash()}, {"config", config_.to_json()}, {"phases", json::object()}};
  if (std::filesystem::exists(manifest_path())) {
    try {
      const json existing = json::parse(read_bytes(manifest_path()));
      if (existing.contains("phases") && existing["phases"].is_object()) {
        manifest_["phases"] = existing["phases"];
      }
    } catch (const json::exception&) {
      say("manifest.json is unreadable; starting a fresh manifest");
    }
  }
}

void Run::say(const std::string& line) const {
  if (options_.log != nullptr) *options_.log << line << '\n' << std::flush;
}

std::string Run::command(const std::string& sub) const {
  return fmt::format("advtl {} --config {} --seed {} --out {}", sub,
                     options_.config_path.empty() ? "<config>" : options_.config_path.string(),
                     config_.seed, options_.output_root.string());
}

std::string Run::file_hash(const std::filesystem::path& p) const {
  return hex16(fnv1a(read_bytes(p)));
}

std::string Run::require(const std::filesystem::path& p, const std::string& cmd) const {
  if (!std::filesystem::exists(p)) throw MissingPrerequisite(p, cmd);
  return file_hash(p);
}

std::string Run::phase_key(const json& inputs) const { return hex16(fnv1a(inputs.dump())); }

bool Run::up_to_date(const std::string& phase, const std::string& key) const {
  const auto& phases = manifest_["phases"];
  if (!phases.contains(phase)) return false;
  const auto& entry = phases[phase];
  if (entry.value("key", std::string()) != key) return false;
  for (const auto& [rel, hash] : entry["outputs"].items()) {
    const auto p = dir_ / rel;
    if (!std::filesystem::exists(p) || file_hash(p) != hash.get<std::string>()) return false;
  }
  return true;
}

void Run::record(const std::string& phase, const std::string& key,
                 const std::vector<std::filesystem::path>& outputs) {
  json entry = {{"key", key}, {"outputs", json::object()}};
  for (const auto& p : outputs) {
    entry["outputs"][std::filesystem::relative(p, dir_).generic_string()] = file_hash(p);
  }
  manifest_["phases"][phase] = std::move(entry);
  write_atomic(manifest_path(), manifest_.dump(2) + "\n");
}

json Run::manifest() const { return manifest_; }

const TaskPair& Run::data() {
  if (data_) return *data_;
  if (config_.data.kind == DataConfig::Kind::Synthetic) {
    SynthOptions o = config_.data.synth;
    o.seed = derive_seed(config_.seed, "data");
    data_ = synth_task_pair(o);
  } else {
    const auto& p = config_.data.csv;
    TaskPair t;
    t.source_train = load_csv(p.source_train, p.source_classes, p.rescale);
    t.source_test = load_csv(p.source_test, p.source_classes, p.rescale);
    t.target_train = load_csv(p.target_train, p.target_classes, p.rescale);
    t.target_test = load_csv(p.target_test, p.target_classes, p.rescale);
    const int d = t.source_train.dim();
    for (const auto* ds : {&t.source_test, &t.target_train, &t.target_test}) {
      if (ds->dim() != d) {
        throw ValidationError(fmt::format("data: csv inputs have widths {} and {}", d, ds->dim()));
      }
    }
    data_ = std::move(t);
  }
  return *data_;
}

std::string Run::data_key() {
  json inputs = {{"phase", "data"}, {"seed", config_.seed}, {"data", config_.to_json()["data"]}};
  if (config_.data.kind == DataConfig::Kind::Csv) {
    const auto& p = config_.data.csv;
    for (const auto& f : {p.source_train, p.source_test, p.target_train, p.target_test}) {
      inputs["files"].push_back(file_hash(f));
    }
  }
  return phase_key(inputs);
}

ArchSpec Run::main_arch(int num_classes) const {
  return ArchSpec{data_ ? data_->source_train.dim() : 0, config_.arch, num_classes};
}

ArchSpec Run::surrogate_arch(int num_classes) const {
  return ArchSpec{data_ ? data_->source_train.dim() : 0, config_.surrogate_arch, num_classes};
}

AttackConfig Run::attack_config(AttackKind kind) const {
  AttackConfig a = kind == AttackKind::Fgsm ? config_.fgsm : config_.pgd;
  a.seed = derive_seed(config_.seed, kind == AttackKind::Fgsm ? "attack-fgsm" : "attack-pgd");
  return a;
}

TrainConfig Run::phase_config(const TrainConfig& base, TrainingMode mode, std::string_view stream) const {
  TrainConfig t = configure(base, mode, attack_config(AttackKind::Fgsm), attack_config(AttackKind::Pgd));
  t.seed = derive_seed(config_.seed, fmt::format("{}-train", stream));
  return t;
}

PhaseOutcome Run::prepare_data() {
  const std::string key = data_key();
  if (options_.resume && up_to_date("data", key)) {
    say("data: up to date");
    return PhaseOutcome::Skipped;
  }
  const TaskPair& t = data();
  std::filesystem::path out;
  if (config_.data.kind == DataConfig::Kind::Synthetic) {
    out = dir_ / "data" / "generative_record.json";
    write_atomic(out, t.record.to_json().dump(1) + "\n");
  } else {
    out = dir_ / "data" / "sources.json";
    const auto& p = config_.data.csv;
    json sources = json::object();
    for (const auto& f : {p.source_train, p.source_test, p.target_train, p.target_test}) {
      sources[f.string()] = file_hash(f);
    }
    write_atomic(out, sources.dump(2) + "\n");
  }
  record("data", key, {out});
  say(fmt::format("data: source {} classes x {} train, target {} classes x {} train, dim {}",
                  t.source_train.num_classes, t.source_train.size(), t.target_train.num_classes,
                  t.target_train.size(), t.source_train.dim()));
  return PhaseOutcome::Ran;
}

PhaseOutcome Run::train_phase(const std::string& phase, const std::string& stream, TrainingMode mode,
                              const ArchSpec& arch, const TrainConfig& base,
                              const LabeledDataset& train_set, const std::filesystem::path& ckpt) {
  const TrainConfig cfg = phase_config(base, mode, stream);
  json inputs = {{"phase", phase},
                 {"data", data_key()},
                 {"arch", blocks_json(arch.blocks)},
                 {"train", train_json(base)},
                 {"mode", std::string(to_string(mode))},
                 {"seed", config_.seed}};
  if (cfg.adversary) inputs["attack"] = attack_json(cfg.adversary->config);
  const std::string key = phase_key(inputs);
  if (options_.resume && up_to_date(phase, key)) {
    say(fmt::format("{}: up to date", phase));
    return PhaseOutcome::Skipped;
  }
  const auto net = BlockNetwork::init(arch, derive_seed(config_.seed, fmt::format("{}-init", stream)));
  const auto result = train(net, train_set, cfg);
  save(result.net, ckpt);
  const auto log_path = dir_ / "logs" / (ckpt.stem().string() + ".csv");
  result.log.write_csv(log_path);
  record(phase, key, {ckpt, log_path});
  say(fmt::format("{}: train accuracy {:.3f}", phase,
                  result.log.epochs.empty() ? 0.0 : result.log.epochs.back().train_accuracy));
  return PhaseOutcome::Ran;
}

PhaseOutcome Run::train_source(TrainingMode mode) {
  const auto& t = data();
  return train_phase(fmt::format("source:{}", to_string(mode)), "source", mode,
                     main_arch(t.source_train.num_classes), config_.train_source, t.source_train,
                     source_checkpoint(mode));
}

PhaseOutcome Run::train_baseline(TrainingMode mode) {
  const auto& t = data();
  return train_phase(fmt::format("baseline:{}", to_string(mode)), "baseline", mode,
                     main_arch(t.target_train.num_classes), config_.train_baseline, t.target_train,
                     baseline_checkpoint(mode));
}

PhaseOutcome Run::train_surrogate() {
  const auto& t = data();
  return train_phase("surrogate", "surrogate", TrainingMode::Nat,
                     surrogate_arch(t.target_train.num_classes), config_.train_surrogate,
                     t.target_train, surrogate_checkpoint());
}

PhaseOutcome Run::transfer(const Combination& c) {
  const auto& t = data();
  const auto src_ckpt = source_checkpoint(c.source);
  const std::string src_hash =
      require(src_ckpt, command(fmt::format("train-source --mode {}", to_string(c.source))));
  const std::string name = transfer_name(c);
  const std::string phase = fmt::format("transfer:{}", name);
  const TrainConfig cfg = phase_config(config_.train_transfer, c.target, "transfer");
  json inputs = {{"phase", phase},
                 {"data", data_key()},
                 {"source", src_hash},
                 {"strategy", std::string(to_string(c.strategy))},
                 {"train", train_json(config_.train_transfer)},
                 {"mode", std::string(to_string(c.target))},
                 {"seed", config_.seed}};
  if (cfg.adversary) inputs["attack"] = attack_json(cfg.adversary->config);
  const std::string key = phase_key(inputs);
  if (options_.resume && up_to_date(phase, key)) {
    say(fmt::format("{}: up to date", phase));
    return PhaseOutcome::Skipped;
  }
  const auto result = transfer_train(load(src_ckpt), c.source, t.target_train, c.strategy, cfg,
                                     derive_seed(config_.seed, "transfer-head"));
  if (result.name != name) {
    throw ContractError(fmt::format("transfer produced '{}', expected '{}'", result.name, name));
  }
  const auto ckpt = transfer_checkpoint(c);
  save(result.net, ckpt);
  const auto log_path = dir_ / "logs" / (name + ".csv");
  result.log.write_csv(log_path);
  record(phase, key, {ckpt, log_path});
  say(fmt::format("{}: train accuracy {:.3f}", phase,
                  result.log.epochs.empty() ? 0.0 : result.log.epochs.back().train_accuracy));
  return PhaseOutcome::Ran;
}

std::filesystem::path Run::source_checkpoint(TrainingMode mode) const {
  return dir_ / "checkpoints" / fmt::format("source_{}.ckpt", to_string(mode));
}

std::filesystem::path Run::baseline_checkpoint(TrainingMode mode) const {
  return dir_ / "checkpoints" / (baseline_name(mode) + ".ckpt");
}

std::filesystem::path Run::surrogate_checkpoint() const { return dir_ / "checkpoints" / "surrogate.ckpt"; }

std::string Run::transfer_name(const Combination& c) const {
  const ArchSpec arch{1, config_.arch, 2};
  return canonical_name(c.source, c.target, unfrozen_layer_count(arch, c.strategy));
}

std::filesystem::path Run::transfer_checkpoint(const Combination& c) const {
  return dir_ / "checkpoints" / (transfer_name(c) + ".ckpt");
}

std::vector<Run::RowSource> Run::evaluation_rows() const {
  std::vector<RowSource> rows;
  for (auto m : config_.baselines) {
    std::string cmd = command(fmt::format("train-baseline --mode {}", to_string(m == TrainingMode::FgsmNoLl ? TrainingMode::Fgsm : m)));
    if (m == TrainingMode::FgsmNoLl) cmd = command("train-baseline --mode fgsm --no-ll");
    rows.push_back({baseline_name(m), baseline_checkpoint(m), "baseline", cmd});
  }
  for (auto s : kStrategies) {
    for (const auto& c : config_.combinations) {
      if (c.strategy != s) continue;
      rows.push_back({transfer_name(c), transfer_checkpoint(c), std::string(to_string(s)),
                      command(fmt::format("transfer --src {} --tar {} --strategy {}",
                                          to_string(c.source), to_string(c.target),
                                          to_string(c.strategy)))});
    }
  }
  return rows;
}

EvalMatrix Run::evaluate() {
  const auto& t = data();
  const auto rows = evaluation_rows();
  json inputs = {{"phase", "evaluate"},
                 {"data", data_key()},
                 {"fgsm", attack_json(config_.fgsm)},
                 {"pgd", attack_json(config_.pgd)},
                 {"seed", config_.seed}};
  inputs["surrogate"] = require(surrogate_checkpoint(), command("train-surrogate"));
  for (const auto& r : rows) inputs["rows"].push_back({r.name, require(r.checkpoint, r.command)});
  const std::string key = phase_key(inputs);

  if (options_.resume && up_to_date("evaluate", key) &&
      manifest_["phases"]["evaluate"].contains("matrix")) {
    say("evaluate: up to date");
    EvalMatrix m;
    for (const auto& r : manifest_["phases"]["evaluate"]["matrix"]) {
      m.rows.push_back(EvalRow{r.at("name").get<std::string>(), r.at("accuracy").get<Accuracies>(),
                               r.at("group").get<std::string>()});
    }
    return m;
  }

  std::vector<BlockNetwork> nets;
  nets.reserve(rows.size());
  for (const auto& r : rows) nets.push_back(load(r.checkpoint));
  std::vector<NamedNetwork> named;
  for (std::size_t i = 0; i < rows.size(); ++i) named.push_back({rows[i].name, &nets[i], rows[i].group});
  const BlockNetwork surrogate = load(surrogate_checkpoint());
  const EvalMatrix m = build_matrix(named, surrogate, t.target_test, attack_config(AttackKind::Fgsm),
                                    attack_config(AttackKind::Pgd));
  const ReportFiles files = render_report(m, normalize_columns(m), reports_dir());
  record("evaluate", key, {files.matrix_csv, files.heatmap_csv, files.heatmap_svg});
  auto matrix = json::array();
  for (const auto& r : m.rows) {
    matrix.push_back({{"name", r.name}, {"accuracy", r.accuracy}, {"group", r.group}});
  }
  manifest_["phases"]["evaluate"]["matrix"] = matrix;
  write_atomic(manifest_path(), manifest_.dump(2) + "\n");
  say(fmt::format("evaluate: {} rows written to {}", m.rows.size(), reports_dir().string()));
  return m;
}

EvalMatrix Run::pipeline() {
  prepare_data();
  std::vector<TrainingMode> sources;
  for (const auto& c : config_.combinations) {
    if (std::find(sources.begin(), sources.end(), c.source) == sources.end()) sources.push_back(c.source);
  }
  for (auto m : sources) train_source(m);
  for (auto m : config_.baselines) train_baseline(m);
  train_surrogate();
  for (auto s : kStrategies) {
    for (const auto& c : config_.combinations) {
      if (c.strategy == s) transfer(c);
    }
  }
  return evaluate();
}

}  // namespace advtl
