// knn-el: train, build and query a retrieval-augmented entity linker.
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "knnel/core.hpp"
#include "knnel/dataset_io.hpp"
#include "knnel/datastore.hpp"
#include "knnel/encoder.hpp"
#include "knnel/eval.hpp"
#include "knnel/inference.hpp"
#include "knnel/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace knnel;

namespace {

// Exclusive advisory lock on the output directory for the command's lifetime.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) {
    fs::create_directories(dir);
    path_ = dir + "/.lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw InvalidInputError("io", "cannot open lock file: " + path_);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw StateError("locked", "output directory is in use: " + dir);
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

std::string iso_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Wall-clock timestamps live here, not in the data artifacts.
class RunTimer {
 public:
  RunTimer(std::string out_dir, std::string command)
      : out_dir_(std::move(out_dir)),
        command_(std::move(command)),
        started_(iso_utc_now()),
        t0_(std::chrono::steady_clock::now()) {}
  ~RunTimer() {
    if (out_dir_.empty()) return;
    try {
      ordered_json j;
      j["command"] = command_;
      j["started"] = started_;
      j["finished"] = iso_utc_now();
      j["wall_ms"] = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0_)
                         .count();
      atomic_write(out_dir_ + "/run_times.json", j.dump() + "\n");
    } catch (...) {
      // a failed sidecar write must not mask the command result
    }
  }

 private:
  std::string out_dir_;
  std::string command_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

void atomic_save_params(const EncoderParams& params, const std::string& path) {
  save_params(params, path + ".tmp");
  fs::rename(path + ".tmp", path);
}

void atomic_save_store(const Datastore& store, const std::string& path) {
  store.save(path + ".tmp");
  fs::rename(path + ".tmp", path);
}

struct Settings {
  std::string ontology_path;
  std::string train_path;
  std::string validation_path;
  std::string test_path;
  std::string datastore_path;
  std::string params_path;
  std::string frozen_path;
  std::string out_dir;
  std::string profile;
  std::string encoder_mode = "trainable";
  std::uint64_t seed = 0;

  TrainConfig tcfg;
  InferenceConfig icfg;
  std::string aggregation = "max";

  std::vector<int> ngram_sizes = {2, 3, 4};
  std::size_t feature_dim = 1u << 18;
  std::size_t embed_dim = 128;
  std::uint64_t hash_seed = 0x6b6e6e2d656cULL;

  FeatureHasherConfig hasher() const {
    FeatureHasherConfig h;
    h.ngram_sizes = ngram_sizes;
    h.feature_dim = feature_dim;
    h.hash_seed = hash_seed;
    return h;
  }
};

ordered_json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInputError("io", "cannot open config: " + path);
  try {
    ordered_json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInputError("parse", path + ": " + e.what());
  }
}

template <typename T>
void pick(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_config(Settings& s, const std::string& config_path) {
  if (config_path.empty()) return;
  ordered_json j = load_config_file(config_path);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    pick(p, "ontology", s.ontology_path);
    pick(p, "train", s.train_path);
    pick(p, "validation", s.validation_path);
    pick(p, "test", s.test_path);
    pick(p, "datastore", s.datastore_path);
    pick(p, "params", s.params_path);
    pick(p, "frozen_embeddings", s.frozen_path);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    pick(t, "tau", s.tcfg.tau);
    pick(t, "hard_negatives_p", s.tcfg.hard_negatives_p);
    pick(t, "epochs", s.tcfg.epochs);
    pick(t, "batch_size", s.tcfg.batch_size);
    pick(t, "learning_rate", s.tcfg.learning_rate);
    pick(t, "weight_decay", s.tcfg.weight_decay);
    pick(t, "early_stop_patience", s.tcfg.early_stop_patience);
  }
  if (j.contains("inference")) {
    const auto& i = j["inference"];
    std::uint64_t k = s.icfg.k;
    pick(i, "k", k);
    s.icfg.k = static_cast<std::size_t>(k);
    pick(i, "lambda", s.icfg.lambda);
    pick(i, "beta1", s.icfg.beta1);
    pick(i, "beta2", s.icfg.beta2);
    pick(i, "aggregation", s.aggregation);
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    pick(e, "mode", s.encoder_mode);
    pick(e, "ngram_sizes", s.ngram_sizes);
    std::uint64_t fd = s.feature_dim;
    pick(e, "feature_dim", fd);
    s.feature_dim = static_cast<std::size_t>(fd);
    std::uint64_t ed = s.embed_dim;
    pick(e, "embed_dim", ed);
    s.embed_dim = static_cast<std::size_t>(ed);
    pick(e, "hash_seed", s.hash_seed);
  }
  pick(j, "out", s.out_dir);
  pick(j, "seed", s.seed);
  pick(j, "profile", s.profile);
}

void apply_profile(Settings& s) {
  if (s.profile.empty()) return;
  // profile installs (beta1, beta2, k) and lambda; explicit flags win later
  InferenceConfig preset = profile_config(s.profile);
  s.icfg.k = preset.k;
  s.icfg.beta1 = preset.beta1;
  s.icfg.beta2 = preset.beta2;
  s.icfg.lambda = preset.lambda;
}

void resolve_aggregation(Settings& s) {
  if (s.aggregation == "max") {
    s.icfg.aggregation = Aggregation::Max;
  } else if (s.aggregation == "sum") {
    s.icfg.aggregation = Aggregation::Sum;
  } else {
    throw InvalidInputError("invalid-config", "aggregation must be max or sum");
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) {
    throw InvalidInputError("io", std::string("missing required path: ") + what);
  }
  if (!fs::exists(path)) {
    throw InvalidInputError("io", std::string(what) + " file not found: " + path);
  }
}

EncoderParams load_encoder(const Settings& s) {
  if (s.encoder_mode == "frozen") {
    require_file(s.frozen_path, "frozen-embeddings");
    return frozen_encoder_params(load_frozen_table(s.frozen_path));
  }
  require_file(s.params_path, "params");
  return load_params(s.params_path);
}

// ---------------------------------------------------------------- commands

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  DirLock lock(out_dir);
  RunTimer timer(out_dir, "synth");
  Corpus corpus = generate_synthetic(spec);
  atomic_write(out_dir + "/ontology.jsonl", ontology_to_jsonl(corpus.ontology));
  atomic_write(out_dir + "/train.jsonl", mentions_to_jsonl(corpus.train));
  atomic_write(out_dir + "/validation.jsonl", mentions_to_jsonl(corpus.validation));
  atomic_write(out_dir + "/test.jsonl", mentions_to_jsonl(corpus.test));

  // corpus summary: entity count and the Zipf mass curve over train counts
  std::vector<std::size_t> counts(corpus.ontology.size(), 0);
  for (const auto& m : corpus.train) counts[*corpus.ontology.ordinal_of(m.gold)] += 1;
  std::sort(counts.rbegin(), counts.rend());
  auto mass_at = [&](double top_fraction) {
    std::size_t take = std::max<std::size_t>(
        1, static_cast<std::size_t>(top_fraction * counts.size()));
    std::size_t sum = 0;
    for (std::size_t i = 0; i < take && i < counts.size(); ++i) sum += counts[i];
    return static_cast<double>(sum) / corpus.train.size();
  };
  std::fprintf(stderr,
               "synth: entities=%zu train=%zu validation=%zu test=%zu\n"
               "zipf mass: top1%%=%.3f top5%%=%.3f top10%%=%.3f top25%%=%.3f top50%%=%.3f\n",
               corpus.ontology.size(), corpus.train.size(), corpus.validation.size(),
               corpus.test.size(), mass_at(0.01), mass_at(0.05), mass_at(0.10),
               mass_at(0.25), mass_at(0.50));
  return 0;
}

std::string train_log_jsonl(const TrainLog& log) {
  std::string out;
  for (const auto& w : log.warnings) {
    ordered_json j;
    j["warning"] = w;
    out += j.dump() + "\n";
  }
  for (const auto& e : log.epochs) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["val_acc1"] = e.val_acc1;
    j["val_acc5"] = e.val_acc5;
    j["index_rebuild_ms"] = e.index_rebuild_ms;
    out += j.dump() + "\n";
  }
  ordered_json tail;
  tail["selected_epoch"] = log.selected_epoch;
  tail["dhns_gold_violations"] = log.dhns_gold_violations;
  tail["dhns_short_sets"] = log.dhns_short_sets;
  out += tail.dump() + "\n";
  return out;
}

int cmd_train(const Settings& s) {
  require_file(s.ontology_path, "ontology");
  require_file(s.train_path, "train");
  if (s.encoder_mode != "trainable") {
    throw InvalidInputError("unsupported-mode", "training requires --encoder-mode trainable");
  }
  DirLock lock(s.out_dir);
  RunTimer timer(s.out_dir, "train");

  Ontology onto = load_ontology_jsonl(s.ontology_path);
  auto train_set = load_mentions_jsonl(s.train_path, onto);
  std::vector<LabeledMention> validation;
  if (!s.validation_path.empty()) {
    require_file(s.validation_path, "validation");
    validation = load_mentions_jsonl(s.validation_path, onto);
  }

  std::fprintf(stderr,
               "run: tau=%g p=%d lambda=%g epochs=%d batch=%d lr=%g decay=%g seed=%llu "
               "feature_dim=%zu embed_dim=%zu\n",
               s.tcfg.tau, s.tcfg.hard_negatives_p, s.icfg.lambda, s.tcfg.epochs,
               s.tcfg.batch_size, s.tcfg.learning_rate, s.tcfg.weight_decay,
               static_cast<unsigned long long>(s.seed), s.feature_dim, s.embed_dim);

  EncoderParams init = init_encoder_params(s.hasher(), s.embed_dim, s.seed);
  TrainResult result = train(train_set, validation, onto, s.tcfg, std::move(init));

  atomic_save_params(result.params, s.out_dir + "/params.kelp");
  atomic_write(s.out_dir + "/train_log.jsonl", train_log_jsonl(result.log));
  std::printf("params=%s epochs_run=%zu selected_epoch=%d\n",
              (s.out_dir + "/params.kelp").c_str(), result.log.epochs.size(),
              result.log.selected_epoch);
  return 0;
}

int cmd_build_datastore(const Settings& s) {
  require_file(s.ontology_path, "ontology");
  require_file(s.train_path, "train");
  DirLock lock(s.out_dir);
  RunTimer timer(s.out_dir, "build-datastore");

  Ontology onto = load_ontology_jsonl(s.ontology_path);
  auto train_set = load_mentions_jsonl(s.train_path, onto);
  EncoderParams params = load_encoder(s);
  if (train_set.empty()) {
    std::fprintf(stderr, "warning: empty train file, building an empty datastore\n");
  }
  Datastore store = build_datastore(train_set, params, onto);
  atomic_save_store(store, s.out_dir + "/datastore.kels");
  std::printf("M=%zu dim=%zu\n", store.size(), store.dim());
  return 0;
}

void check_fingerprint(const Datastore& store, const EncoderParams& params, bool force) {
  if (store.size() == 0) return;
  if (store.encoder_fingerprint() == fingerprint(params)) return;
  if (force) {
    std::fprintf(stderr, "warning: fingerprint-mismatch overridden by --force\n");
    return;
  }
  throw StateError("fingerprint-mismatch",
                   "datastore was built with different encoder params (use --force to override)");
}

int cmd_link(const Settings& s, const std::string& mention_text,
             const std::string& input_path, std::size_t top_n, bool force,
             bool no_datastore) {
  require_file(s.ontology_path, "ontology");
  Ontology onto = load_ontology_jsonl(s.ontology_path);
  EncoderParams params = load_encoder(s);

  Datastore store;  // empty unless a datastore is supplied
  if (!no_datastore) {
    require_file(s.datastore_path, "datastore");
    store = Datastore::load(s.datastore_path);
    check_fingerprint(store, params, force);
  }
  EntityCache cache = build_entity_cache(onto, params);

  auto emit = [&](const std::string& text) {
    LinkResult res = link(Mention{text, std::nullopt}, store, cache, params, onto, s.icfg,
                          std::min<std::size_t>(top_n, onto.size()));
    std::cout << link_result_json(text, res, store, onto).dump() << "\n";
  };

  if (!mention_text.empty()) {
    emit(mention_text);
    return 0;
  }
  std::istream* in = &std::cin;
  std::ifstream file;
  if (!input_path.empty()) {
    require_file(input_path, "input");
    file.open(input_path);
    in = &file;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(*in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInputError("parse", "input line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("mention")) {
      throw InvalidInputError("parse",
                              "input line " + std::to_string(lineno) + ": missing mention");
    }
    emit(j["mention"].get<std::string>());
  }
  return 0;
}

int cmd_eval(const Settings& s, bool ablate, const std::vector<std::size_t>& sweep_k,
             const std::vector<double>& sweep_lambda,
             const std::vector<double>& low_resource, bool dump_records) {
  require_file(s.ontology_path, "ontology");
  require_file(s.test_path, "test");
  require_file(s.train_path, "train");
  DirLock lock(s.out_dir);
  RunTimer timer(s.out_dir, "eval");

  Ontology onto = load_ontology_jsonl(s.ontology_path);
  auto test_set = load_mentions_jsonl(s.test_path, onto);
  auto train_set = load_mentions_jsonl(s.train_path, onto);
  std::vector<LabeledMention> validation;
  if (!s.validation_path.empty()) {
    require_file(s.validation_path, "validation");
    validation = load_mentions_jsonl(s.validation_path, onto);
  }
  EncoderParams params = load_encoder(s);
  require_file(s.datastore_path, "datastore");
  Datastore store = Datastore::load(s.datastore_path);
  check_fingerprint(store, params, false);
  EntityCache cache = build_entity_cache(onto, params);

  EvalOutput out =
      evaluate_set(test_set, store, cache, params, onto, s.icfg, 5, dump_records);
  double acc1 = acc_at_k(out.records, 1);
  double acc5 = acc_at_k(out.records, 5);
  std::string metrics = "metric,value\nacc@1," + format_metric(acc1) + "\nacc@5," +
                        format_metric(acc5) + "\n";
  atomic_write(s.out_dir + "/metrics.csv", metrics);
  atomic_write(s.out_dir + "/buckets.csv",
               buckets_csv(long_tail_report(out.records, train_set)));
  if (dump_records) {
    std::string dump;
    for (const auto& d : out.details) dump += d.dump() + "\n";
    atomic_write(s.out_dir + "/records.jsonl", dump);
  }

  Corpus corpus;
  if (ablate || !low_resource.empty()) {
    corpus.ontology = load_ontology_jsonl(s.ontology_path);
    corpus.train = train_set;
    corpus.validation = validation;
    corpus.test = test_set;
  }
  if (ablate) {
    auto rows = run_ablations(corpus, s.tcfg, s.icfg, s.hasher(), s.embed_dim);
    atomic_write(s.out_dir + "/ablation.csv", ablation_csv(rows));
  }
  if (!sweep_k.empty() || !sweep_lambda.empty()) {
    std::vector<std::size_t> ks = sweep_k.empty() ? std::vector<std::size_t>{s.icfg.k}
                                                  : sweep_k;
    std::vector<double> lambdas =
        sweep_lambda.empty() ? std::vector<double>{s.icfg.lambda} : sweep_lambda;
    auto grid = hyperparameter_sweep(test_set, store, cache, params, onto, s.icfg, ks, lambdas);
    atomic_write(s.out_dir + "/sweep.csv", sweep_csv(grid));
  }
  if (!low_resource.empty()) {
    auto points =
        low_resource_sweep(corpus, low_resource, s.tcfg, s.icfg, s.hasher(), s.embed_dim);
    atomic_write(s.out_dir + "/low_resource.csv", low_resource_csv(points));
  }
  std::fputs(metrics.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-augmented biomedical entity linker"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ----- synth -----
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark corpus");
  SyntheticSpec spec;
  std::string synth_out;
  synth->add_option("--n-entities", spec.n_entities);
  synth->add_option("--synonyms", spec.synonyms_per_entity);
  synth->add_option("--noise", spec.noise_rate);
  synth->add_option("--confusable", spec.confusable_fraction);
  synth->add_option("--zipf", spec.zipf_exponent);
  synth->add_option("--n-train", spec.n_train);
  synth->add_option("--n-val", spec.n_validation);
  synth->add_option("--n-test", spec.n_test);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--out", synth_out)->required();
  synth->callback([&] { exit_code = cmd_synth(spec, synth_out); });

  // shared settings plumbing for the remaining commands
  struct SubcommandState {
    Settings flags;       // values bound to CLI11 options
    std::string config;   // --config path
    CLI::App* sub = nullptr;
    std::vector<std::pair<std::string, std::function<void(Settings&, const Settings&)>>>
        overrides;

    void add_common(CLI::App* s) {
      sub = s;
      auto bind = [&](const char* name, auto member) {
        sub->add_option(name, flags.*member);
        overrides.emplace_back(name, [member](Settings& out, const Settings& in) {
          out.*member = in.*member;
        });
      };
      sub->add_option("--config", config);
      bind("--ontology", &Settings::ontology_path);
      bind("--train", &Settings::train_path);
      bind("--validation", &Settings::validation_path);
      bind("--test", &Settings::test_path);
      bind("--datastore", &Settings::datastore_path);
      bind("--params", &Settings::params_path);
      bind("--frozen-embeddings", &Settings::frozen_path);
      bind("--out", &Settings::out_dir);
      bind("--seed", &Settings::seed);
      bind("--profile", &Settings::profile);
      bind("--encoder-mode", &Settings::encoder_mode);
      bind("--feature-dim", &Settings::feature_dim);
      bind("--embed-dim", &Settings::embed_dim);
      bind("--hash-seed", &Settings::hash_seed);
      sub->add_option("--ngram-sizes", flags.ngram_sizes)->delimiter(',');
      overrides.emplace_back("--ngram-sizes", [](Settings& out, const Settings& in) {
        out.ngram_sizes = in.ngram_sizes;
      });
      // training knobs
      auto bind_t = [&](const char* name, auto member) {
        sub->add_option(name, flags.tcfg.*member);
        overrides.emplace_back(name, [member](Settings& out, const Settings& in) {
          out.tcfg.*member = in.tcfg.*member;
        });
      };
      bind_t("--tau", &TrainConfig::tau);
      bind_t("--hard-negatives", &TrainConfig::hard_negatives_p);
      bind_t("--epochs", &TrainConfig::epochs);
      bind_t("--batch-size", &TrainConfig::batch_size);
      bind_t("--lr", &TrainConfig::learning_rate);
      bind_t("--weight-decay", &TrainConfig::weight_decay);
      bind_t("--patience", &TrainConfig::early_stop_patience);
      // inference knobs
      sub->add_option("--k", flags.icfg.k);
      overrides.emplace_back("--k", [](Settings& out, const Settings& in) {
        out.icfg.k = in.icfg.k;
      });
      auto bind_i = [&](const char* name, auto member) {
        sub->add_option(name, flags.icfg.*member);
        overrides.emplace_back(name, [member](Settings& out, const Settings& in) {
          out.icfg.*member = in.icfg.*member;
        });
      };
      bind_i("--lambda", &InferenceConfig::lambda);
      bind_i("--beta1", &InferenceConfig::beta1);
      bind_i("--beta2", &InferenceConfig::beta2);
      bind("--aggregation", &Settings::aggregation);
    }

    // defaults <- config file <- profile <- explicitly passed flags
    Settings resolve() const {
      Settings s;
      apply_config(s, config);
      if (sub->count("--profile") > 0) s.profile = flags.profile;
      apply_profile(s);
      for (const auto& [name, apply] : overrides) {
        if (sub->count(name) > 0) apply(s, flags);
      }
      resolve_aggregation(s);
      s.tcfg.seed = s.seed;
      return s;
    }
  };

  // ----- train -----
  SubcommandState train_state;
  train_state.add_common(app.add_subcommand("train", "contrastive-train the encoder"));
  train_state.sub->callback([&] { exit_code = cmd_train(train_state.resolve()); });

  // ----- build-datastore -----
  SubcommandState build_state;
  build_state.add_common(
      app.add_subcommand("build-datastore", "embed the training set into a datastore"));
  build_state.sub->callback([&] { exit_code = cmd_build_datastore(build_state.resolve()); });

  // ----- link -----
  SubcommandState link_state;
  link_state.add_common(app.add_subcommand("link", "link mentions to entities"));
  std::string link_mention;
  std::string link_input;
  std::size_t link_top_n = 5;
  bool link_force = false;
  bool link_no_store = false;
  link_state.sub->add_option("--mention", link_mention);
  link_state.sub->add_option("--input", link_input);
  link_state.sub->add_option("--top-n", link_top_n);
  link_state.sub->add_flag("--force", link_force);
  link_state.sub->add_flag("--no-datastore", link_no_store);
  link_state.sub->callback([&] {
    exit_code = cmd_link(link_state.resolve(), link_mention, link_input, link_top_n,
                         link_force, link_no_store);
  });

  // ----- eval -----
  SubcommandState eval_state;
  eval_state.add_common(app.add_subcommand("eval", "run the evaluation harness"));
  bool eval_ablate = false;
  bool eval_dump = false;
  std::vector<std::size_t> eval_sweep_k;
  std::vector<double> eval_sweep_lambda;
  std::vector<double> eval_low_resource;
  eval_state.sub->add_flag("--ablate", eval_ablate);
  eval_state.sub->add_flag("--dump-records", eval_dump);
  eval_state.sub->add_option("--sweep-k", eval_sweep_k)->delimiter(',');
  eval_state.sub->add_option("--sweep-lambda", eval_sweep_lambda)->delimiter(',');
  eval_state.sub->add_option("--low-resource", eval_low_resource)->delimiter(',');
  eval_state.sub->callback([&] {
    exit_code = cmd_eval(eval_state.resolve(), eval_ablate, eval_sweep_k, eval_sweep_lambda,
                         eval_low_resource, eval_dump);
  });

  try {
    app.parse(argc, argv);
    return exit_code;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "error\t%s\t%s\n", e.category().c_str(), e.what());
    return 2;
  } catch (const StateError& e) {
    std::fprintf(stderr, "error\t%s\t%s\n", e.category().c_str(), e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error\tinternal\t%s\n", e.what());
    return 4;
  }
}
