#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "smartbird/trainer.hpp"

namespace smartbird {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (task != "synth" && task != "corpus") fail("task must be synth|corpus");
  if (model != "smart" && model != "dense") fail("model must be smart|dense");
  if (d < 1) fail("d must be >= 1");
  if (D < 1) fail("D must be >= 1");
  if (h < 1) fail("h must be >= 1");
  if (D % h != 0) fail("D must be divisible by h");
  if (K < 1) fail("K must be >= 1");
  if (layers < 1) fail("layers must be >= 1");
  if (N < 1) fail("N must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (sketch_epochs < 0) fail("sketch_epochs must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
  if (lr <= 0.0) fail("lr must be positive");
  if (threads < 1) fail("threads must be >= 1");
  if (min_freq < 1) fail("min_freq must be >= 1");
  if (task == "synth") {
    if (vocab_size < 4) fail("vocab_size must be >= 4");
    if (pair_gap >= N) fail("pair_gap must be < N");
    if (n_train < 1 || n_test < 1) fail("n_train and n_test must be >= 1");
  } else {
    if (train_file.empty()) fail("corpus task requires train_file");
    if (test_file.empty()) fail("corpus task requires test_file");
  }
  if (bench_grid.empty()) fail("bench_grid must not be empty");
  if (bench_reps < 1) fail("bench_reps must be >= 1");
  if (k_grid.empty()) fail("k_grid must not be empty");
  if (study_seeds < 1) fail("study_seeds must be >= 1");
  if (study_examples < 1) fail("study_examples must be >= 1");
  parse_strategy(strategy);  // throws on unknown names
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "task",          "model",         "d",
      "D",             "h",             "K",
      "layers",        "N",             "vocab_size",
      "min_freq",      "n_classes",     "n_train",
      "n_test",        "pair_gap",      "strategy",
      "lr",            "batch_size",    "epochs",
      "dropout",       "grad_clip",     "seed",
      "sketch_epochs",
      "seed_init",     "seed_sampling", "seed_data",
      "eval_seed",     "threads",       "include_self",
      "use_positional", "record_timing", "log_every",
      "out_dir",       "train_file",    "test_file",
      "embedding_file", "bench_grid",   "bench_reps",
      "k_grid",        "study_seeds",   "study_examples",
  };
  return keys;
}

template <typename T>
void pick(const json& j, const char* key, T& into) {
  if (j.contains(key)) {
    try {
      into = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key '") + key +
                        "' has the wrong type");
    }
  }
}

}  // namespace

ModelConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known_keys().count(it.key()))
      throw ConfigError("unknown config key: " + it.key());
  }

  ModelConfig c;
  pick(j, "task", c.task);
  pick(j, "model", c.model);
  pick(j, "d", c.d);
  pick(j, "D", c.D);
  pick(j, "h", c.h);
  pick(j, "K", c.K);
  pick(j, "layers", c.layers);
  pick(j, "N", c.N);
  pick(j, "vocab_size", c.vocab_size);
  pick(j, "min_freq", c.min_freq);
  pick(j, "n_classes", c.n_classes);
  pick(j, "n_train", c.n_train);
  pick(j, "n_test", c.n_test);
  pick(j, "pair_gap", c.pair_gap);
  pick(j, "strategy", c.strategy);
  pick(j, "lr", c.lr);
  pick(j, "batch_size", c.batch_size);
  pick(j, "epochs", c.epochs);
  pick(j, "sketch_epochs", c.sketch_epochs);
  pick(j, "dropout", c.dropout);
  pick(j, "grad_clip", c.grad_clip);
  pick(j, "seed_init", c.seed_init);
  pick(j, "seed_sampling", c.seed_sampling);
  pick(j, "seed_data", c.seed_data);
  pick(j, "eval_seed", c.eval_seed);
  pick(j, "threads", c.threads);
  pick(j, "include_self", c.include_self);
  pick(j, "use_positional", c.use_positional);
  pick(j, "record_timing", c.record_timing);
  pick(j, "log_every", c.log_every);
  pick(j, "out_dir", c.out_dir);
  pick(j, "train_file", c.train_file);
  pick(j, "test_file", c.test_file);
  pick(j, "embedding_file", c.embedding_file);
  pick(j, "bench_grid", c.bench_grid);
  pick(j, "bench_reps", c.bench_reps);
  pick(j, "k_grid", c.k_grid);
  pick(j, "study_seeds", c.study_seeds);
  pick(j, "study_examples", c.study_examples);

  // "seed" is a master fallback applied to any seed not set explicitly.
  if (j.contains("seed")) {
    uint64_t master = 0;
    pick(j, "seed", master);
    if (!j.contains("seed_init")) c.seed_init = stream_seed(master, 1);
    if (!j.contains("seed_sampling")) c.seed_sampling = stream_seed(master, 2);
    if (!j.contains("seed_data")) c.seed_data = stream_seed(master, 3);
    if (!j.contains("eval_seed")) c.eval_seed = stream_seed(master, 4);
  }
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["task"] = c.task;
  j["model"] = c.model;
  j["d"] = c.d;
  j["D"] = c.D;
  j["h"] = c.h;
  j["K"] = c.K;
  j["layers"] = c.layers;
  j["N"] = c.N;
  j["vocab_size"] = c.vocab_size;
  j["min_freq"] = c.min_freq;
  j["n_classes"] = c.n_classes;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["pair_gap"] = c.pair_gap;
  j["strategy"] = c.strategy;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["sketch_epochs"] = c.sketch_epochs;
  j["dropout"] = c.dropout;
  j["grad_clip"] = c.grad_clip;
  j["seed_init"] = c.seed_init;
  j["seed_sampling"] = c.seed_sampling;
  j["seed_data"] = c.seed_data;
  j["eval_seed"] = c.eval_seed;
  j["threads"] = c.threads;
  j["include_self"] = c.include_self;
  j["use_positional"] = c.use_positional;
  j["record_timing"] = c.record_timing;
  j["log_every"] = c.log_every;
  j["out_dir"] = c.out_dir;
  j["train_file"] = c.train_file;
  j["test_file"] = c.test_file;
  j["embedding_file"] = c.embedding_file;
  j["bench_grid"] = c.bench_grid;
  j["bench_reps"] = c.bench_reps;
  j["k_grid"] = c.k_grid;
  j["study_seeds"] = c.study_seeds;
  j["study_examples"] = c.study_examples;
  return j.dump();
}

}  // namespace smartbird
