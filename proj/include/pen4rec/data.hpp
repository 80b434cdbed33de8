#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/rng.hpp"

namespace pen4rec {

struct ClickEvent {
  std::string session_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

// One session's events, sorted ascending by timestamp (ties keep file order).
struct RawSession {
  std::string session_id;
  std::vector<ClickEvent> events;
};

// Preprocessed corpus in dense index space. items[i] is the external id of
// index i; vocab is the inverse map. end_ts runs parallel to sessions and
// carries each session's last event timestamp for time-based splitting.
struct Dataset {
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::string> items;
  std::vector<std::vector<std::size_t>> sessions;
  std::vector<std::int64_t> end_ts;
  std::string split = "all";

  std::size_t vocab_size() const { return items.size(); }
};

struct TrainingExample {
  std::vector<std::size_t> input;
  std::size_t target = 0;
};

enum class FileFormat { csv, tsv };

namespace detail {

inline std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

// Reads a delimited click log with a header naming session_id, item_id and
// timestamp (any column order, extra columns ignored). Returns sessions in
// first-appearance order of their ids, each sorted ascending by timestamp
// with ties kept in file order.
inline std::vector<RawSession> load_sessions(const std::string& path,
                                             FileFormat format = FileFormat::csv) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  char delim = format == FileFormat::csv ? ',' : '\t';

  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header row");
  std::vector<std::string> header = detail::split_fields(detail::strip_cr(line), delim);
  auto col = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError(path + ": missing column '" + name + "'");
  };
  std::size_t c_sess = col("session_id");
  std::size_t c_item = col("item_id");
  std::size_t c_ts = col("timestamp");
  std::size_t need = std::max({c_sess, c_item, c_ts}) + 1;

  std::vector<RawSession> sessions;
  std::unordered_map<std::string, std::size_t> index_of;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string clean = detail::strip_cr(line);
    if (clean.empty()) continue;
    std::vector<std::string> f = detail::split_fields(clean, delim);
    if (f.size() < need)
      throw FormatError(path + ": line " + std::to_string(line_no) + ": expected at least " +
                        std::to_string(need) + " fields, got " + std::to_string(f.size()));
    if (f[c_item].empty())
      throw FormatError(path + ": line " + std::to_string(line_no) + ": empty item_id");
    const std::string& ts_text = f[c_ts];
    char* end = nullptr;
    errno = 0;
    long long ts = std::strtoll(ts_text.c_str(), &end, 10);
    if (ts_text.empty() || end != ts_text.c_str() + ts_text.size() || errno == ERANGE)
      throw FormatError(path + ": line " + std::to_string(line_no) + ": bad timestamp '" +
                        ts_text + "'");

    auto [it, inserted] = index_of.try_emplace(f[c_sess], sessions.size());
    if (inserted) sessions.push_back(RawSession{f[c_sess], {}});
    sessions[it->second].events.push_back(
        ClickEvent{f[c_sess], f[c_item], static_cast<std::int64_t>(ts)});
  }

  for (RawSession& s : sessions)
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const ClickEvent& a, const ClickEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
  return sessions;
}

// Keeps the most recent `fraction` of sessions by last-event timestamp
// (original relative order preserved among the kept ones).
inline std::vector<RawSession> take_last_fraction(const std::vector<RawSession>& sessions,
                                                  double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ContractError("take_last_fraction: fraction must be in (0, 1]");
  if (fraction == 1.0 || sessions.empty()) return sessions;

  std::vector<std::size_t> order(sessions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sessions[a].events.back().timestamp < sessions[b].events.back().timestamp;
  });
  std::size_t keep =
      static_cast<std::size_t>(std::max(1.0, std::ceil(fraction * sessions.size())));
  std::vector<char> chosen(sessions.size(), 0);
  for (std::size_t i = sessions.size() - keep; i < sessions.size(); ++i) chosen[order[i]] = 1;

  std::vector<RawSession> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < sessions.size(); ++i)
    if (chosen[i]) out.push_back(sessions[i]);
  return out;
}

// Single-pass filtering: sessions are first capped to their last max_len
// events, then items rarer than min_item_count (counted over the capped
// corpus) are dropped from every session, then sessions shorter than min_len
// are dropped. The vocabulary indexes surviving items by first appearance.
inline Dataset preprocess(const std::vector<RawSession>& raw, std::size_t min_len = 2,
                          std::size_t min_item_count = 5, std::size_t max_len = 50) {
  if (raw.empty()) throw DataError("preprocess: no input sessions");
  if (min_len < 1) throw ContractError("preprocess: min_len must be >= 1");

  std::vector<std::vector<const ClickEvent*>> capped;
  capped.reserve(raw.size());
  std::unordered_map<std::string, std::size_t> count;
  for (const RawSession& s : raw) {
    std::size_t start = s.events.size() > max_len ? s.events.size() - max_len : 0;
    std::vector<const ClickEvent*> ev;
    ev.reserve(s.events.size() - start);
    for (std::size_t i = start; i < s.events.size(); ++i) {
      ev.push_back(&s.events[i]);
      ++count[s.events[i].item_id];
    }
    capped.push_back(std::move(ev));
  }

  Dataset ds;
  for (const auto& ev : capped) {
    std::vector<std::size_t> session;
    std::int64_t last_ts = 0;
    for (const ClickEvent* e : ev) {
      if (count[e->item_id] < min_item_count) continue;
      auto [it, inserted] = ds.vocab.try_emplace(e->item_id, ds.items.size());
      if (inserted) ds.items.push_back(e->item_id);
      session.push_back(it->second);
      last_ts = e->timestamp;
    }
    if (session.size() < min_len) continue;
    ds.sessions.push_back(std::move(session));
    ds.end_ts.push_back(last_ts);
  }
  if (ds.sessions.empty()) throw DataError("preprocess: every session was filtered out");

  // Items may have entered the vocab from sessions that later failed the
  // length filter; rebuild the index space over what actually survived.
  std::vector<char> used(ds.items.size(), 0);
  for (const auto& s : ds.sessions)
    for (std::size_t idx : s) used[idx] = 1;
  if (std::find(used.begin(), used.end(), 0) != used.end()) {
    std::vector<std::size_t> remap(ds.items.size(), 0);
    std::vector<std::string> items;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      if (!used[i]) continue;
      remap[i] = items.size();
      items.push_back(ds.items[i]);
    }
    ds.items = std::move(items);
    ds.vocab.clear();
    for (std::size_t i = 0; i < ds.items.size(); ++i) ds.vocab.emplace(ds.items[i], i);
    for (auto& s : ds.sessions)
      for (std::size_t& idx : s) idx = remap[idx];
  }
  return ds;
}

// Time-based holdout: sessions whose last event falls in the final
// holdout_span become the test split. The vocabulary is rebuilt over the
// train split; test sessions drop items unseen in train and are then
// re-filtered by min_len.
inline std::pair<Dataset, Dataset> split_by_time(const Dataset& ds, std::int64_t holdout_span,
                                                 std::size_t min_len = 2) {
  if (holdout_span <= 0) throw ContractError("split_by_time: holdout_span must be positive");
  if (ds.sessions.empty()) throw DataError("split_by_time: empty dataset");

  std::int64_t max_ts = *std::max_element(ds.end_ts.begin(), ds.end_ts.end());
  std::int64_t cutoff = max_ts - holdout_span;

  Dataset train, test;
  train.split = "train";
  test.split = "test";

  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    if (ds.end_ts[i] > cutoff) {
      test_rows.push_back(i);
    } else {
      train.sessions.push_back(ds.sessions[i]);
      train.end_ts.push_back(ds.end_ts[i]);
    }
  }
  if (train.sessions.empty()) throw DataError("split_by_time: train partition is empty");
  if (test_rows.empty()) throw DataError("split_by_time: test partition is empty");

  // Rebuild contiguous train vocab, keeping ascending old-index order.
  std::vector<char> in_train(ds.items.size(), 0);
  for (const auto& s : train.sessions)
    for (std::size_t idx : s) in_train[idx] = 1;
  std::vector<std::size_t> remap(ds.items.size(), 0);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    if (!in_train[i]) continue;
    remap[i] = train.items.size();
    train.items.push_back(ds.items[i]);
  }
  for (std::size_t i = 0; i < train.items.size(); ++i) train.vocab.emplace(train.items[i], i);
  for (auto& s : train.sessions)
    for (std::size_t& idx : s) idx = remap[idx];

  test.items = train.items;
  test.vocab = train.vocab;
  for (std::size_t row : test_rows) {
    std::vector<std::size_t> mapped;
    mapped.reserve(ds.sessions[row].size());
    for (std::size_t idx : ds.sessions[row])
      if (in_train[idx]) mapped.push_back(remap[idx]);
    if (mapped.size() < min_len) continue;
    test.sessions.push_back(std::move(mapped));
    test.end_ts.push_back(ds.end_ts[row]);
  }
  if (test.sessions.empty())
    throw DataError("split_by_time: no test session survived vocab closure");
  return {std::move(train), std::move(test)};
}

enum class ValidSplitMode { by_time, random };

// Carves a validation set out of a train split, either the most recent
// fraction of sessions or a seeded random pick. fraction 0 reuses the whole
// train split as validation (the caller wants progress tracking only).
inline std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction,
                                                    ValidSplitMode mode, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ContractError("split_validation: fraction must be in [0, 1)");
  if (ds.sessions.empty()) throw DataError("split_validation: empty dataset");

  Dataset train = ds, valid = ds;
  train.split = "train";
  valid.split = "valid";
  if (fraction == 0.0) return {std::move(train), std::move(valid)};

  std::size_t n_valid = static_cast<std::size_t>(fraction * ds.sessions.size());
  if (n_valid == 0) n_valid = 1;
  if (n_valid >= ds.sessions.size()) n_valid = ds.sessions.size() - 1;

  std::vector<std::size_t> order(ds.sessions.size());
  std::iota(order.begin(), order.end(), 0);
  if (mode == ValidSplitMode::by_time) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ds.end_ts[a] < ds.end_ts[b];
    });
  } else {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<char> is_valid(ds.sessions.size(), 0);
  for (std::size_t i = ds.sessions.size() - n_valid; i < ds.sessions.size(); ++i)
    is_valid[order[i]] = 1;

  train.sessions.clear();
  train.end_ts.clear();
  valid.sessions.clear();
  valid.end_ts.clear();
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    Dataset& dst = is_valid[i] ? valid : train;
    dst.sessions.push_back(ds.sessions[i]);
    dst.end_ts.push_back(ds.end_ts[i]);
  }
  return {std::move(train), std::move(valid)};
}

// [v1..vn] -> ([v1],v2), ([v1,v2],v3), ..., ([v1..v_{n-1}],vn).
inline std::vector<TrainingExample> augment_prefixes(const std::vector<std::size_t>& session) {
  if (session.size() < 2) throw ContractError("augment_prefixes: session length must be >= 2");
  std::vector<TrainingExample> out;
  out.reserve(session.size() - 1);
  for (std::size_t cut = 1; cut < session.size(); ++cut) {
    TrainingExample ex;
    ex.input.assign(session.begin(), session.begin() + cut);
    ex.target = session[cut];
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TrainingExample> augment_all(const Dataset& ds) {
  std::vector<TrainingExample> out;
  for (const auto& s : ds.sessions) {
    std::vector<TrainingExample> ex = augment_prefixes(s);
    out.insert(out.end(), std::make_move_iterator(ex.begin()),
               std::make_move_iterator(ex.end()));
  }
  return out;
}

// Re-indexes a dataset's sessions into another vocabulary. Items missing from
// the target vocabulary are an error listing the offenders.
inline std::vector<std::vector<std::size_t>> remap_sessions(
    const Dataset& ds, const std::unordered_map<std::string, std::size_t>& target_vocab) {
  std::vector<std::string> unknown;
  std::unordered_set<std::string> seen;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(ds.sessions.size());
  for (const auto& s : ds.sessions) {
    std::vector<std::size_t> mapped;
    mapped.reserve(s.size());
    for (std::size_t idx : s) {
      const std::string& id = ds.items.at(idx);
      auto it = target_vocab.find(id);
      if (it == target_vocab.end()) {
        if (seen.insert(id).second) unknown.push_back(id);
        continue;
      }
      mapped.push_back(it->second);
    }
    out.push_back(std::move(mapped));
  }
  if (!unknown.empty()) {
    std::string msg = "unknown items:";
    for (const std::string& id : unknown) msg += " " + id;
    throw DataError(msg);
  }
  return out;
}

}  // namespace pen4rec
