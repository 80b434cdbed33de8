// Command-line front end: train / eval / predict / sweep-k / gen-synth.
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pen4rec/data.hpp"
#include "pen4rec/errors.hpp"
#include "pen4rec/eval.hpp"
#include "pen4rec/manifest.hpp"
#include "pen4rec/model.hpp"
#include "pen4rec/synthetic.hpp"
#include "pen4rec/training.hpp"

namespace {

using namespace pen4rec;

// Flag problems CLI11 cannot express are reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  std::string data;
  std::string format = "csv";
  std::size_t d = 100;
  std::size_t k = 3;
  std::string variant = "full";
  std::size_t ggnn_layers = 1;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 3;
  double l2 = 1e-6;
  double dropout = 0.5;
  std::uint64_t seed = 42;
  std::string first_stage_range = "last_k";
  std::size_t patience = 5;
  double valid_fraction = 0.1;
  std::string valid_split = "time";
  std::int64_t holdout_span = 0;
  std::size_t min_len = 2;
  std::size_t min_item_count = 5;
  std::size_t max_len = 50;
  double take_last_fraction = 1.0;
  std::size_t threads = 1;
  std::string out;
};

// for_train gates the flags sweep-k does not take: --k is swept over a range
// and the per-window models stay in memory, so there is no checkpoint path.
void add_train_flags(CLI::App* cmd, TrainFlags& f, bool for_train) {
  bool with_k = for_train;
  cmd->add_option("--data", f.data, "input click log")->required();
  cmd->add_option("--format", f.format, "input delimiter format")
      ->check(CLI::IsMember({"csv", "tsv"}))
      ->capture_default_str();
  cmd->add_option("--d", f.d, "latent dimension")
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000}))
      ->capture_default_str();
  if (with_k)
    cmd->add_option("--k", f.k, "recent-history window")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1000}))
        ->capture_default_str();
  cmd->add_option("--variant", f.variant, "model variant")
      ->check(CLI::IsMember(
          {"full", "gnn_last", "agnn_last", "non", "att", "gru", "att_gru"}))
      ->capture_default_str();
  cmd->add_option("--ggnn-layers", f.ggnn_layers, "graph propagation layers")
      ->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "training epochs")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))
      ->capture_default_str();
  cmd->add_option("--batch-size", f.batch_size, "examples per optimizer step")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))
      ->capture_default_str();
  cmd->add_option("--lr", f.lr, "learning rate (heuristic default)")->capture_default_str();
  cmd->add_option("--lr-decay", f.lr_decay, "learning-rate decay factor (heuristic default)")
      ->capture_default_str();
  cmd->add_option("--lr-decay-every", f.lr_decay_every,
                  "epochs between decays (heuristic default)")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))
      ->capture_default_str();
  cmd->add_option("--l2", f.l2, "weight-matrix penalty coefficient")->capture_default_str();
  cmd->add_option("--dropout", f.dropout, "dropout rate")->capture_default_str();
  cmd->add_option("--seed", f.seed, "run seed")
      ->envname("PEN4REC_SEED")
      ->capture_default_str();
  cmd->add_option("--first-stage-range", f.first_stage_range,
                  "query attention coverage")
      ->check(CLI::IsMember({"last_k", "full_session"}))
      ->capture_default_str();
  cmd->add_option("--patience", f.patience,
                  "early-stop patience on validation MRR, 0 disables (heuristic default)")
      ->capture_default_str();
  cmd->add_option("--valid-fraction", f.valid_fraction,
                  "validation share of train sessions (heuristic default)")
      ->capture_default_str();
  cmd->add_option("--valid-split", f.valid_split, "validation selection rule")
      ->check(CLI::IsMember({"time", "random"}))
      ->capture_default_str();
  cmd->add_option("--holdout-span", f.holdout_span,
                  "time span whose sessions become the test split; 0 skips the split")
      ->capture_default_str();
  cmd->add_option("--min-len", f.min_len, "minimum session length kept")
      ->capture_default_str();
  cmd->add_option("--min-item-count", f.min_item_count, "minimum corpus-wide item count kept")
      ->capture_default_str();
  cmd->add_option("--max-len", f.max_len, "sessions keep at most this many last events")
      ->capture_default_str();
  cmd->add_option("--take-last-fraction", f.take_last_fraction,
                  "keep only the most recent fraction of sessions by end time")
      ->capture_default_str();
  cmd->add_option("--threads", f.threads,
                  "batch-gradient workers; >1 trades bit-reproducibility across "
                  "thread counts for speed")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}))
      ->capture_default_str();
  if (for_train)
    cmd->add_option("--out", f.out, "checkpoint output path")->required();
}

TrainConfig to_train_config(const TrainFlags& f) {
  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.batch_size = f.batch_size;
  cfg.lr = f.lr;
  cfg.lr_decay = f.lr_decay;
  cfg.lr_decay_every = f.lr_decay_every;
  cfg.l2 = f.l2;
  cfg.seed = f.seed;
  cfg.patience = f.patience;
  cfg.valid_fraction = f.valid_fraction;
  cfg.valid_split = f.valid_split == "random" ? ValidSplitMode::random : ValidSplitMode::by_time;
  cfg.threads = f.threads;
  cfg.variant.variant = parse_variant(f.variant);
  cfg.variant.k = f.k;
  cfg.variant.d = f.d;
  cfg.variant.ggnn_layers = f.ggnn_layers;
  cfg.variant.dropout = f.dropout;
  cfg.variant.first_stage_range = f.first_stage_range == "full_session"
                                      ? FirstStageRange::full_session
                                      : FirstStageRange::last_k;
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void manifest_train_flags(RunManifest& m, const TrainFlags& f) {
  m.add("data", f.data);
  m.add("format", f.format);
  m.add("d", f.d);
  m.add("k", f.k);
  m.add("variant", f.variant);
  m.add("ggnn_layers", f.ggnn_layers);
  m.add("epochs", f.epochs);
  m.add("batch_size", f.batch_size);
  m.add("lr", f.lr);
  m.add("lr_decay", f.lr_decay);
  m.add("lr_decay_every", f.lr_decay_every);
  m.add("l2", f.l2);
  m.add("dropout", f.dropout);
  m.add("seed", f.seed);
  m.add("first_stage_range", f.first_stage_range);
  m.add("patience", f.patience);
  m.add("valid_fraction", f.valid_fraction);
  m.add("valid_split", f.valid_split);
  m.add("holdout_span", f.holdout_span);
  m.add("min_len", f.min_len);
  m.add("min_item_count", f.min_item_count);
  m.add("max_len", f.max_len);
  m.add("take_last_fraction", f.take_last_fraction);
  m.add("threads", f.threads);
  m.add("out", f.out);
}

FileFormat to_format(const std::string& name) {
  return name == "tsv" ? FileFormat::tsv : FileFormat::csv;
}

Dataset load_train_split(const TrainFlags& f, Dataset* test_out) {
  std::vector<RawSession> raw = load_sessions(f.data, to_format(f.format));
  if (f.take_last_fraction != 1.0) raw = take_last_fraction(raw, f.take_last_fraction);
  Dataset ds = preprocess(raw, f.min_len, f.min_item_count, f.max_len);
  if (f.holdout_span > 0) {
    auto [train, test] = split_by_time(ds, f.holdout_span, f.min_len);
    if (test_out) *test_out = std::move(test);
    return std::move(train);
  }
  return ds;
}

int cmd_train(const TrainFlags& f) {
  RunManifest manifest;
  manifest.command = "train";
  manifest.started_at = RunManifest::now();
  manifest_train_flags(manifest, f);

  Dataset train_ds = load_train_split(f, nullptr);
  TrainConfig cfg = to_train_config(f);

  std::ofstream log_file(f.out + ".log", std::ios::binary | std::ios::trunc);
  if (!log_file) throw FormatError("cannot write " + f.out + ".log");
  TrainOutput result = train(train_ds, cfg, [&](const EpochLog& log) {
    std::string line = epoch_json(log);
    std::cout << line << "\n";
    log_file << line << "\n";
  });
  log_file.close();
  save_checkpoint(result.checkpoint, f.out);

  manifest.add("epochs_run", result.logs.size());
  manifest.add("best_epoch", result.best_epoch);
  manifest.finished_at = RunManifest::now();
  manifest.write(f.out + ".manifest");
  return 0;
}

// Maps raw sessions into the checkpoint's vocabulary; any unseen item id is
// an error. Sessions too short to form a (prefix, target) pair are skipped.
std::vector<TrainingExample> examples_for_eval(const Dataset& raw_ds, const Checkpoint& ck) {
  std::vector<std::vector<std::size_t>> mapped = remap_sessions(raw_ds, ck.vocab_map());
  std::vector<TrainingExample> examples;
  for (const auto& s : mapped) {
    if (s.size() < 2) continue;
    std::vector<TrainingExample> ex = augment_prefixes(s);
    examples.insert(examples.end(), std::make_move_iterator(ex.begin()),
                    std::make_move_iterator(ex.end()));
  }
  if (examples.empty()) throw DataError("no evaluable examples in " + raw_ds.split);
  return examples;
}

// Raw sessions straight into index space: no count filter, no truncation,
// so evaluation sees exactly what the file contains.
Dataset load_raw_dataset(const std::string& path, FileFormat format) {
  std::vector<RawSession> raw = load_sessions(path, format);
  if (raw.empty()) throw DataError(path + ": no sessions");
  Dataset ds;
  ds.split = path;
  for (const RawSession& s : raw) {
    std::vector<std::size_t> session;
    for (const ClickEvent& e : s.events) {
      auto [it, inserted] = ds.vocab.try_emplace(e.item_id, ds.items.size());
      if (inserted) ds.items.push_back(e.item_id);
      session.push_back(it->second);
    }
    ds.sessions.push_back(std::move(session));
    ds.end_ts.push_back(s.events.back().timestamp);
  }
  return ds;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& format, std::size_t cutoff, const std::string& dump_path) {
  Checkpoint ck = load_checkpoint(model_path);
  VariantConfig vcfg = ck.variant_config();
  Dataset raw_ds = load_raw_dataset(data_path, to_format(format));
  std::vector<TrainingExample> examples = examples_for_eval(raw_ds, ck);

  RunManifest manifest;
  manifest.command = "eval";
  manifest.started_at = RunManifest::now();
  manifest.add("model", model_path);
  manifest.add("data", data_path);
  manifest.add("format", format);
  manifest.add("cutoff", cutoff);
  manifest.add("dump", dump_path);

  MetricReport report;
  if (!dump_path.empty()) {
    std::ofstream dump(dump_path, std::ios::binary | std::ios::trunc);
    if (!dump) throw FormatError("cannot write " + dump_path);
    dump << "example_id\ttarget\trank\n";
    report = evaluate(ck.params, vcfg, examples, cutoff,
                      [&](std::size_t i, const Tensor& probs, std::size_t target) {
                        dump << i << "\t" << target << "\t" << rank_of(probs, target) << "\n";
                      });
    manifest.finished_at = RunManifest::now();
    manifest.write(dump_path + ".manifest");
  } else {
    report = evaluate(ck.params, vcfg, examples, cutoff);
  }
  std::cout << metric_json(report) << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& session_text,
                std::size_t top_n) {
  if (session_text.empty()) throw UsageError("--session must list at least one item");
  Checkpoint ck = load_checkpoint(model_path);
  VariantConfig vcfg = ck.variant_config();
  auto vocab = ck.vocab_map();
  std::vector<std::string> items = ck.vocab_items();

  std::vector<std::size_t> session;
  std::size_t start = 0;
  while (start <= session_text.size()) {
    std::size_t pos = session_text.find(',', start);
    std::string id = session_text.substr(
        start, pos == std::string::npos ? std::string::npos : pos - start);
    if (id.empty()) throw UsageError("--session contains an empty item id");
    auto it = vocab.find(id);
    if (it == vocab.end()) throw DataError("unknown item '" + id + "'");
    session.push_back(it->second);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }

  Tape tape;
  ForwardOutput out = forward(tape, session, ck.params, vcfg, false, nullptr);
  RankedPrediction pred = make_ranked(out.trace.probs, top_n);
  char buf[64];
  for (std::size_t r = 0; r < pred.top.size(); ++r) {
    std::size_t idx = pred.top[r];
    std::snprintf(buf, sizeof(buf), "%.17g", pred.probabilities[idx]);
    std::cout << (r + 1) << "\t" << items[idx] << "\t" << buf << "\n";
  }
  return 0;
}

int cmd_sweep_k(const TrainFlags& f, std::size_t k_min, std::size_t k_max,
                std::size_t cutoff, const std::string& table_out) {
  if (k_min < 1) throw UsageError("--k-min must be >= 1");
  if (k_min > k_max) throw UsageError("--k-min must not exceed --k-max");
  if (f.holdout_span <= 0) throw UsageError("sweep-k needs --holdout-span > 0 for a test split");

  RunManifest manifest;
  manifest.command = "sweep-k";
  manifest.started_at = RunManifest::now();
  manifest_train_flags(manifest, f);
  manifest.add("k_min", k_min);
  manifest.add("k_max", k_max);
  manifest.add("cutoff", cutoff);
  manifest.add("table_out", table_out);

  Dataset test_ds;
  Dataset train_ds = load_train_split(f, &test_ds);
  std::vector<TrainingExample> test_ex = augment_all(test_ds);
  if (test_ex.empty()) throw DataError("sweep-k: empty test split");

  std::string table = "k\tp_at_20\tmrr_at_20\n";
  std::cout << "k\tp_at_20\tmrr_at_20\n";
  for (std::size_t k = k_min; k <= k_max; ++k) {
    TrainFlags fk = f;
    fk.k = k;
    TrainConfig cfg = to_train_config(fk);
    TrainOutput result = train(train_ds, cfg);
    MetricReport report =
        evaluate(result.checkpoint.params, cfg.variant, test_ex, cutoff);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\t%.17g\n", k, report.p_at_k, report.mrr_at_k);
    std::cout << buf << std::flush;
    table += buf;
  }

  if (!table_out.empty()) {
    std::ofstream out(table_out, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + table_out);
    out << table;
    manifest.finished_at = RunManifest::now();
    manifest.write(table_out + ".manifest");
  }
  return 0;
}

int cmd_gen_synth(const SyntheticSpec& spec, const std::string& out_path) {
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  RunManifest manifest;
  manifest.command = "gen-synth";
  manifest.started_at = RunManifest::now();
  manifest.add("n_items", spec.n_items);
  manifest.add("n_sessions", spec.n_sessions);
  manifest.add("n_clusters", spec.n_clusters);
  manifest.add("items_per_cluster", spec.items_per_cluster);
  manifest.add("drift_probability", spec.drift_probability);
  manifest.add("len_min", spec.len_min);
  manifest.add("len_max", spec.len_max);
  manifest.add("seed", spec.seed);
  manifest.add("out", out_path);

  Dataset ds = gen_synthetic(spec);
  write_dataset_csv(ds, out_path);
  write_synthetic_sidecar(spec, out_path + ".meta");

  std::size_t events = 0;
  for (const auto& s : ds.sessions) events += s.size();
  std::cout << "sessions=" << ds.sessions.size() << " items=" << ds.vocab_size()
            << " events=" << events << "\n";
  manifest.finished_at = RunManifest::now();
  manifest.write(out_path + ".manifest");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"session-based next-item recommender"};
  app.require_subcommand(1);

  TrainFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "preprocess a click log and train a model");
  add_train_flags(train_cmd, train_flags, true);

  std::string eval_model, eval_data, eval_format = "csv", eval_dump;
  std::size_t eval_cutoff = 20;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a click log with a checkpoint");
  eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "click log to evaluate")->required();
  eval_cmd->add_option("--format", eval_format, "input delimiter format")
      ->check(CLI::IsMember({"csv", "tsv"}))
      ->capture_default_str();
  eval_cmd->add_option("--cutoff", eval_cutoff, "ranking cutoff")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))
      ->capture_default_str();
  eval_cmd->add_option("--dump", eval_dump, "per-example rank dump path");

  std::string pred_model, pred_session;
  std::size_t pred_top = 10;
  CLI::App* pred_cmd = app.add_subcommand("predict", "rank next items for one session");
  pred_cmd->add_option("--model", pred_model, "checkpoint path")->required();
  pred_cmd->add_option("--session", pred_session, "comma-separated item ids")->required();
  pred_cmd->add_option("--top", pred_top, "how many items to print")
      ->check(CLI::Range(std::size_t{1}, std::size_t{10000000}))
      ->capture_default_str();

  TrainFlags sweep_flags;
  std::size_t sweep_k_min = 1, sweep_k_max = 5, sweep_cutoff = 20;
  std::string sweep_out;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep-k", "train and evaluate across recent-history windows");
  add_train_flags(sweep_cmd, sweep_flags, false);
  sweep_cmd->add_option("--k-min", sweep_k_min, "first window size")->capture_default_str();
  sweep_cmd->add_option("--k-max", sweep_k_max, "last window size")->capture_default_str();
  sweep_cmd->add_option("--cutoff", sweep_cutoff, "ranking cutoff")->capture_default_str();
  sweep_cmd->add_option("--table-out", sweep_out, "also write the table to this path");

  pen4rec::SyntheticSpec synth;
  std::string synth_out;
  CLI::App* synth_cmd = app.add_subcommand("gen-synth", "generate a drifting synthetic corpus");
  synth_cmd->add_option("--n-items", synth.n_items, "item count")->capture_default_str();
  synth_cmd->add_option("--n-sessions", synth.n_sessions, "session count")
      ->capture_default_str();
  synth_cmd->add_option("--clusters", synth.n_clusters, "preference cluster count")
      ->capture_default_str();
  synth_cmd->add_option("--items-per-cluster", synth.items_per_cluster, "items per cluster")
      ->capture_default_str();
  synth_cmd->add_option("--drift-prob", synth.drift_probability,
                        "per-step cluster jump probability")
      ->capture_default_str();
  synth_cmd->add_option("--len-min", synth.len_min, "shortest session")->capture_default_str();
  synth_cmd->add_option("--len-max", synth.len_max, "longest session")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")
      ->envname("PEN4REC_SEED")
      ->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (eval_cmd->parsed())
      return cmd_eval(eval_model, eval_data, eval_format, eval_cutoff, eval_dump);
    if (pred_cmd->parsed()) return cmd_predict(pred_model, pred_session, pred_top);
    if (sweep_cmd->parsed())
      return cmd_sweep_k(sweep_flags, sweep_k_min, sweep_k_max, sweep_cutoff, sweep_out);
    if (synth_cmd->parsed()) return cmd_gen_synth(synth, synth_out);
    std::cerr << "error: no command selected\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
