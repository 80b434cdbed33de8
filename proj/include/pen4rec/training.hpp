#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "pen4rec/adam.hpp"
#include "pen4rec/data.hpp"
#include "pen4rec/errors.hpp"
#include "pen4rec/eval.hpp"
#include "pen4rec/model.hpp"
#include "pen4rec/params.hpp"
#include "pen4rec/rng.hpp"

namespace pen4rec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores little-endian words");

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  double lr_decay = 0.1;       // multiplied in every lr_decay_every epochs
  std::size_t lr_decay_every = 3;
  double l2 = 1e-6;
  std::uint64_t seed = 42;
  std::size_t patience = 5;    // epochs without validation-MRR gain; 0 disables
  double valid_fraction = 0.1; // 0 tracks progress on the training set itself
  ValidSplitMode valid_split = ValidSplitMode::by_time;
  std::size_t threads = 1;
  VariantConfig variant;

  void validate() const {
    if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (lr < 0.0) throw ContractError("TrainConfig: lr must be >= 0");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
      throw ContractError("TrainConfig: lr_decay must be in (0, 1]");
    if (lr_decay_every < 1) throw ContractError("TrainConfig: lr_decay_every must be >= 1");
    if (l2 < 0.0) throw ContractError("TrainConfig: l2 must be >= 0");
    if (valid_fraction < 0.0 || valid_fraction >= 1.0)
      throw ContractError("TrainConfig: valid_fraction must be in [0, 1)");
    if (threads < 1) throw ContractError("TrainConfig: threads must be >= 1");
    variant.validate();
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double valid_p20 = 0.0;
  double valid_mrr20 = 0.0;
  double lr = 0.0;
};

inline std::string epoch_json(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"epoch\":%zu,\"mean_loss\":%.17g,\"valid_p20\":%.17g,"
                "\"valid_mrr20\":%.17g,\"lr\":%.17g}",
                e.epoch, e.mean_loss, e.valid_p20, e.valid_mrr20, e.lr);
  return buf;
}

// Adds the L2 gradient 2*lambda*W for every weight matrix (biases and other
// rank-1 parameters are exempt) and returns the penalty lambda * sum ||W||^2.
inline double apply_l2(std::span<Parameter* const> params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double sq = 0.0;
  for (Parameter* p : params) {
    if (p->value.rank() != 2) continue;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double v = p->value[i];
      sq += v * v;
      p->grad[i] += 2.0 * lambda * v;
    }
  }
  return lambda * sq;
}

// ---- checkpoint persistence ----

inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'N', '4', 'R', 'E', 'C', '1'};

// The metadata block is kept verbatim so that save(load(f)) reproduces f
// byte for byte; meta() gives a parsed view of its key=value lines.
struct Checkpoint {
  std::string metadata;
  ModelParams params;

  std::map<std::string, std::string> meta() const {
    std::map<std::string, std::string> out;
    std::size_t start = 0;
    while (start < metadata.size()) {
      std::size_t end = metadata.find('\n', start);
      if (end == std::string::npos) end = metadata.size();
      std::string line = metadata.substr(start, end - start);
      std::size_t eq = line.find('=');
      if (eq != std::string::npos) out.emplace(line.substr(0, eq), line.substr(eq + 1));
      start = end + 1;
    }
    return out;
  }

  std::string meta_value(const std::string& key) const {
    auto m = meta();
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("checkpoint metadata missing key '" + key + "'");
    return it->second;
  }

  std::vector<std::string> vocab_items() const {
    std::size_t n = std::stoull(meta_value("vocab_size"));
    std::vector<std::string> items(n);
    auto m = meta();
    for (std::size_t i = 0; i < n; ++i) {
      auto it = m.find("vocab." + std::to_string(i));
      if (it == m.end())
        throw FormatError("checkpoint metadata missing vocab entry " + std::to_string(i));
      items[i] = it->second;
    }
    return items;
  }

  std::unordered_map<std::string, std::size_t> vocab_map() const {
    std::unordered_map<std::string, std::size_t> out;
    std::vector<std::string> items = vocab_items();
    for (std::size_t i = 0; i < items.size(); ++i) out.emplace(items[i], i);
    return out;
  }

  VariantConfig variant_config() const {
    VariantConfig cfg;
    cfg.variant = parse_variant(meta_value("variant"));
    cfg.d = std::stoull(meta_value("d"));
    cfg.k = std::stoull(meta_value("k"));
    cfg.ggnn_layers = std::stoull(meta_value("ggnn_layers"));
    cfg.dropout = std::stod(meta_value("dropout"));
    cfg.first_stage_range = meta_value("first_stage_range") == "full_session"
                                ? FirstStageRange::full_session
                                : FirstStageRange::last_k;
    return cfg;
  }
};

inline std::string build_metadata(const TrainConfig& cfg,
                                  const std::vector<std::string>& items) {
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  out += "format=1\n";
  out += std::string("variant=") + variant_name(cfg.variant.variant) + "\n";
  out += "d=" + std::to_string(cfg.variant.d) + "\n";
  out += "k=" + std::to_string(cfg.variant.k) + "\n";
  out += "ggnn_layers=" + std::to_string(cfg.variant.ggnn_layers) + "\n";
  out += std::string("first_stage_range=") +
         (cfg.variant.first_stage_range == FirstStageRange::full_session ? "full_session"
                                                                         : "last_k") +
         "\n";
  out += "dropout=" + fmt(cfg.variant.dropout) + "\n";
  out += "l2=" + fmt(cfg.l2) + "\n";
  out += "lr=" + fmt(cfg.lr) + "\n";
  out += "lr_decay=" + fmt(cfg.lr_decay) + "\n";
  out += "lr_decay_every=" + std::to_string(cfg.lr_decay_every) + "\n";
  out += "batch_size=" + std::to_string(cfg.batch_size) + "\n";
  out += "epochs=" + std::to_string(cfg.epochs) + "\n";
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  out += "patience=" + std::to_string(cfg.patience) + "\n";
  out += "valid_fraction=" + fmt(cfg.valid_fraction) + "\n";
  out += std::string("valid_split=") +
         (cfg.valid_split == ValidSplitMode::random ? "random" : "by_time") + "\n";
  out += "vocab_size=" + std::to_string(items.size()) + "\n";
  for (std::size_t i = 0; i < items.size(); ++i)
    out += "vocab." + std::to_string(i) + "=" + items[i] + "\n";
  return out;
}

namespace detail {

inline void write_u64(std::ofstream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

struct ByteReader {
  std::ifstream in;
  std::size_t offset = 0;
  std::string path;

  void read(char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw FormatError(path + ": checkpoint truncated at byte " +
                        std::to_string(offset + static_cast<std::size_t>(in.gcount())));
    offset += n;
  }

  std::uint64_t read_u64() {
    char buf[8];
    read(buf, 8);
    std::uint64_t v;
    std::memcpy(&v, buf, 8);
    return v;
  }
};

}  // namespace detail

inline void save_checkpoint(Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(kCheckpointMagic, 8);
  detail::write_u64(out, ck.metadata.size());
  out.write(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));

  std::vector<Parameter*> registry = ck.params.all();
  detail::write_u64(out, registry.size());
  for (Parameter* p : registry) {
    detail::write_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_u64(out, p->value.rank());
    for (std::size_t dim : p->value.shape) detail::write_u64(out, dim);
    out.write(reinterpret_cast<const char*>(p->value.values.data()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  }
  if (!out) throw FormatError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  detail::ByteReader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw FormatError("cannot open " + path);

  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError(path + ": unsupported checkpoint magic '" + std::string(magic, 8) + "'");

  std::uint64_t meta_len = r.read_u64();
  std::string metadata(meta_len, '\0');
  if (meta_len > 0) r.read(metadata.data(), meta_len);

  Checkpoint ck;
  ck.metadata = std::move(metadata);
  std::size_t vocab_size = std::stoull(ck.meta_value("vocab_size"));
  std::size_t d = std::stoull(ck.meta_value("d"));
  std::size_t k = std::stoull(ck.meta_value("k"));
  ck.params = ModelParams(vocab_size, d, k);

  std::vector<Parameter*> registry = ck.params.all();
  std::unordered_map<std::string, Parameter*> by_name;
  for (Parameter* p : registry) by_name.emplace(p->name, p);

  std::uint64_t n_params = r.read_u64();
  if (n_params != registry.size())
    throw FormatError(path + ": expected " + std::to_string(registry.size()) +
                      " parameters, file has " + std::to_string(n_params));
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::uint64_t name_len = r.read_u64();
    std::string name(name_len, '\0');
    if (name_len > 0) r.read(name.data(), name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path + ": unknown parameter '" + name + "'");
    Parameter* p = it->second;
    std::uint64_t rank = r.read_u64();
    if (rank != p->value.rank())
      throw FormatError(path + ": rank mismatch for '" + name + "'");
    for (std::size_t a = 0; a < rank; ++a) {
      std::uint64_t dim = r.read_u64();
      if (dim != p->value.shape[a])
        throw FormatError(path + ": shape mismatch for '" + name + "'");
    }
    r.read(reinterpret_cast<char*>(p->value.values.data()), p->value.numel() * sizeof(double));
  }
  return ck;
}

// ---- training loop ----

struct TrainOutput {
  Checkpoint checkpoint;
  std::vector<EpochLog> logs;
  std::size_t best_epoch = 0;
};

namespace detail {

inline std::string nonfinite_param_report(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (!p->value.all_finite()) return "parameter '" + p->name + "' has non-finite values";
    if (!p->grad.all_finite()) return "parameter '" + p->name + "' has non-finite gradient";
  }
  return "all parameters finite; loss alone overflowed";
}

// One worker's share of a batch: contiguous example range, gradients summed
// into a registry-aligned sink.
inline void run_batch_slice(std::span<const std::size_t> ids,
                            std::span<const TrainingExample> examples, ModelParams& params,
                            const VariantConfig& vcfg, double inv_batch,
                            std::uint64_t epoch_seed,
                            const std::unordered_map<const Parameter*, std::size_t>& slot_of,
                            std::vector<Tensor>& sink, double& loss_sum) {
  for (std::size_t idx : ids) {
    const TrainingExample& ex = examples[idx];
    Rng drop_rng(mix_seed(epoch_seed, static_cast<std::uint64_t>(idx)));
    Tape tape;
    ForwardOutput fw = forward(tape, ex.input, params, vcfg, true, &drop_rng);
    Var loss = hybrid_loss(tape, fw.probs, ex.target);
    loss_sum += tape.val(loss)[0];
    tape.backward_into(loss, inv_batch, slot_of, sink);
  }
}

}  // namespace detail

// Mini-batch training with per-epoch seeded shuffling, stepped learning-rate
// decay, per-epoch validation metrics and best-validation checkpointing.
// Fully deterministic for a fixed seed and thread count; threads > 1 splits
// each batch into contiguous per-worker slices whose gradient sums are
// reduced in worker order.
inline TrainOutput train(const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  cfg.validate();
  if (data.sessions.empty()) throw DataError("train: empty dataset");
  if (data.vocab_size() < 2) throw DataError("train: need at least 2 items");

  auto [train_ds, valid_ds] =
      split_validation(data, cfg.valid_fraction, cfg.valid_split, mix_seed(cfg.seed, 0xA11D));
  std::vector<TrainingExample> train_ex = augment_all(train_ds);
  std::vector<TrainingExample> valid_ex = augment_all(valid_ds);
  if (train_ex.empty()) throw DataError("train: no training examples after augmentation");
  if (valid_ex.empty()) throw DataError("train: no validation examples");

  ModelParams params(data.vocab_size(), cfg.variant.d, cfg.variant.k);
  params.init_normal(cfg.seed);
  std::vector<Parameter*> registry = params.all();
  std::unordered_map<const Parameter*, std::size_t> slot_of;
  for (std::size_t i = 0; i < registry.size(); ++i) slot_of.emplace(registry[i], i);
  AdamState adam;

  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), 0);

  TrainOutput out;
  out.checkpoint.metadata = build_metadata(cfg, data.items);
  double best_mrr = -1.0;
  std::vector<Tensor> best_values;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr = cfg.lr * std::pow(cfg.lr_decay,
                                  static_cast<double>((epoch - 1) / cfg.lr_decay_every));
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5445 + epoch));
    shuffle_rng.shuffle(order);
    std::uint64_t epoch_seed = mix_seed(mix_seed(cfg.seed, 0xD509), epoch);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      std::size_t batch_n = std::min(cfg.batch_size, order.size() - start);
      std::span<const std::size_t> ids(order.data() + start, batch_n);
      double inv_batch = 1.0 / static_cast<double>(batch_n);
      params.zero_grads();

      double data_loss = 0.0;
      if (cfg.threads <= 1 || batch_n < 2) {
        std::vector<Tensor> sink;
        sink.reserve(registry.size());
        for (Parameter* p : registry) sink.push_back(Tensor::zeros_like(p->value));
        detail::run_batch_slice(ids, train_ex, params, cfg.variant, inv_batch, epoch_seed,
                                slot_of, sink, data_loss);
        for (std::size_t i = 0; i < registry.size(); ++i) {
          Tensor& g = registry[i]->grad;
          for (std::size_t j = 0; j < g.numel(); ++j) g[j] += sink[i][j];
        }
      } else {
        std::size_t workers = std::min(cfg.threads, batch_n);
        std::vector<std::vector<Tensor>> sinks(workers);
        std::vector<double> losses(workers, 0.0);
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        std::size_t per = (batch_n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
          std::size_t lo = w * per;
          std::size_t hi = std::min(batch_n, lo + per);
          sinks[w].reserve(registry.size());
          for (Parameter* p : registry) sinks[w].push_back(Tensor::zeros_like(p->value));
          pool.emplace_back([&, w, lo, hi]() {
            try {
              detail::run_batch_slice(ids.subspan(lo, hi - lo), train_ex, params,
                                      cfg.variant, inv_batch, epoch_seed, slot_of, sinks[w],
                                      losses[w]);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (std::thread& th : pool) th.join();
        for (std::exception_ptr& e : errors)
          if (e) std::rethrow_exception(e);
        for (std::size_t w = 0; w < workers; ++w) {
          data_loss += losses[w];
          for (std::size_t i = 0; i < registry.size(); ++i) {
            Tensor& g = registry[i]->grad;
            for (std::size_t j = 0; j < g.numel(); ++j) g[j] += sinks[w][i][j];
          }
        }
      }

      double penalty = apply_l2(registry, cfg.l2);
      double batch_loss = data_loss * inv_batch + penalty;
      if (!std::isfinite(batch_loss))
        throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + "; " +
                           detail::nonfinite_param_report(registry));
      adam_step(registry, adam, lr);
      epoch_loss += batch_loss * static_cast<double>(batch_n);
    }

    MetricReport valid = evaluate(params, cfg.variant, valid_ex, 20);
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = epoch_loss / static_cast<double>(order.size());
    log.valid_p20 = valid.p_at_k;
    log.valid_mrr20 = valid.mrr_at_k;
    log.lr = lr;
    out.logs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (valid.mrr_at_k > best_mrr) {
      best_mrr = valid.mrr_at_k;
      out.best_epoch = epoch;
      best_values.clear();
      best_values.reserve(registry.size());
      for (Parameter* p : registry) best_values.push_back(p->value);
    } else if (cfg.patience > 0 && epoch - out.best_epoch >= cfg.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < registry.size(); ++i) registry[i]->value = best_values[i];
  out.checkpoint.params = std::move(params);
  return out;
}

}  // namespace pen4rec
