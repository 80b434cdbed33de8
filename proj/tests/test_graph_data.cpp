// Session-graph construction, data ingestion/splitting, and the synthetic
// drift generator. Adjacency oracles are counted by hand.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "pen4rec/data.hpp"
#include "pen4rec/graph.hpp"
#include "pen4rec/synthetic.hpp"

using namespace pen4rec;
using Catch::Approx;

namespace {

std::string temp_path(const std::string& stem) {
  return "/tmp/pen4rec_gdtest_" + stem;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << content;
}

RawSession make_session(std::string id, std::vector<std::pair<std::string, std::int64_t>> ev) {
  RawSession s;
  s.session_id = std::move(id);
  for (auto& [item, ts] : ev) s.events.push_back({s.session_id, item, ts});
  return s;
}

}  // namespace

TEST_CASE("adjacency of a session with a revisit") {
  std::vector<std::size_t> s{1, 2, 3, 2, 4};
  SessionGraph g = build_graph(s);

  REQUIRE(g.nodes == std::vector<std::size_t>{1, 2, 3, 4});
  REQUIRE(g.seq == std::vector<std::size_t>{0, 1, 2, 1, 3});

  // Edges 1->2, 2->3, 3->2, 2->4. Node 2 has out-occurrence total 2, so its
  // outgoing row splits evenly; node 4 never leads anywhere.
  Tensor expect_out = Tensor::matrix(4, 4,
                                     {0, 1.0, 0, 0,    //
                                      0, 0, 0.5, 0.5,  //
                                      0, 1.0, 0, 0,    //
                                      0, 0, 0, 0});
  Tensor expect_in = Tensor::matrix(4, 4,
                                    {0, 0, 0, 0,      //
                                     0.5, 0, 0.5, 0,  //
                                     0, 1.0, 0, 0,    //
                                     0, 1.0, 0, 0});
  REQUIRE(g.a_out.values == expect_out.values);
  REQUIRE(g.a_in.values == expect_in.values);
}

TEST_CASE("adjacency of an alternating session") {
  std::vector<std::size_t> s{1, 2, 1, 2};
  SessionGraph g = build_graph(s);
  REQUIRE(g.node_count() == 2);
  // 1->2 occurs twice, 2->1 once; normalization by out-degree gives 1.0 each.
  REQUIRE(g.a_out.at(0, 1) == 1.0);
  REQUIRE(g.a_out.at(0, 0) == 0.0);
  REQUIRE(g.a_out.at(1, 0) == 1.0);
  REQUIRE(g.a_in.at(1, 0) == 1.0);
  REQUIRE(g.a_in.at(0, 1) == 1.0);
}

TEST_CASE("single-event session yields a valid zero graph") {
  std::vector<std::size_t> s{7};
  SessionGraph g = build_graph(s);
  REQUIRE(g.node_count() == 1);
  REQUIRE(g.a_out.values == std::vector<double>{0.0});
  REQUIRE(g.a_in.values == std::vector<double>{0.0});
  REQUIRE(g.hop_powers_out.size() == 1);
}

TEST_CASE("hop powers are matrix powers") {
  SECTION("power one returns the base unchanged") {
    Tensor base = Tensor::matrix(2, 2, {0, 1, 0.5, 0.5});
    REQUIRE(hop_adjacency(base, 1).values == base.values);
  }
  SECTION("two-hop entry on a chain") {
    // chain 0 -> 1 -> 2 with unit weights
    Tensor base = Tensor::matrix(3, 3, {0, 1, 0, 0, 0, 1, 0, 0, 0});
    Tensor two = hop_adjacency(base, 2);
    REQUIRE(two.at(0, 2) == 1.0);
    REQUIRE(two.at(0, 0) == 0.0);
    REQUIRE(two.at(0, 1) == 0.0);
  }
  SECTION("zero rows stay zero at every power") {
    Tensor base = Tensor::matrix(2, 2, {0, 0, 1, 0});
    for (std::size_t c = 1; c <= 4; ++c) {
      Tensor p = hop_adjacency(base, c);
      REQUIRE(p.at(0, 0) == 0.0);
      REQUIRE(p.at(0, 1) == 0.0);
    }
  }
  SECTION("build_graph stores consecutive powers") {
    std::vector<std::size_t> s{1, 2, 3, 1, 4, 2};
    SessionGraph g = build_graph(s, 3);
    REQUIRE(g.hop_powers_out.size() == 3);
    REQUIRE(g.hop_powers_out[0].values == g.a_out.values);
    REQUIRE(g.hop_powers_out[1].values == hop_adjacency(g.a_out, 2).values);
    REQUIRE(g.hop_powers_out[2].values == hop_adjacency(g.a_out, 3).values);
    REQUIRE(g.hop_powers_in[1].values == hop_adjacency(g.a_in, 2).values);
  }
  SECTION("invalid arguments") {
    Tensor rect = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    REQUIRE_THROWS_AS(hop_adjacency(rect, 1), ContractError);
    Tensor sq = Tensor::matrix(2, 2, {1, 0, 0, 1});
    REQUIRE_THROWS_AS(hop_adjacency(sq, 0), ContractError);
  }
}

TEST_CASE("adjacency rows sum to one or zero on random sessions") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t len = 1 + rng.next_below(12);
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(rng.next_below(6));
    SessionGraph g = build_graph(s, 2);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      double out_sum = 0.0, in_sum = 0.0;
      for (std::size_t j = 0; j < g.node_count(); ++j) {
        out_sum += g.a_out.at(i, j);
        in_sum += g.a_in.at(i, j);
        REQUIRE(g.a_out.at(i, j) >= 0.0);
      }
      bool out_ok = std::fabs(out_sum - 1.0) < 1e-12 || out_sum == 0.0;
      bool in_ok = std::fabs(in_sum - 1.0) < 1e-12 || in_sum == 0.0;
      REQUIRE(out_ok);
      REQUIRE(in_ok);
    }
  }
}

TEST_CASE("csv loader groups by session and sorts by timestamp") {
  std::string path = temp_path("load.csv");
  write_file(path,
             "session_id,item_id,timestamp\n"
             "s1,apple,3\n"
             "s1,banana,1\n"
             "s2,apple,10\n"
             "s1,cherry,2\n"
             "s2,durian,11\n");
  auto sessions = load_sessions(path, FileFormat::csv);
  REQUIRE(sessions.size() == 2);
  REQUIRE(sessions[0].session_id == "s1");
  REQUIRE(sessions[0].events.size() == 3);
  REQUIRE(sessions[0].events[0].item_id == "banana");
  REQUIRE(sessions[0].events[1].item_id == "cherry");
  REQUIRE(sessions[0].events[2].item_id == "apple");
  REQUIRE(sessions[1].events[0].item_id == "apple");
  REQUIRE(sessions[1].events[1].item_id == "durian");
  std::remove(path.c_str());
}

TEST_CASE("equal timestamps keep file order") {
  std::string path = temp_path("ties.csv");
  write_file(path,
             "session_id,item_id,timestamp\n"
             "s,first,5\n"
             "s,second,5\n"
             "s,third,5\n");
  auto sessions = load_sessions(path, FileFormat::csv);
  REQUIRE(sessions[0].events[0].item_id == "first");
  REQUIRE(sessions[0].events[1].item_id == "second");
  REQUIRE(sessions[0].events[2].item_id == "third");
  std::remove(path.c_str());
}

TEST_CASE("tsv loader finds columns by header name in any order") {
  std::string path = temp_path("load.tsv");
  write_file(path,
             "timestamp\textra\tsession_id\titem_id\n"
             "7\tx\ta\tp1\n"
             "3\ty\ta\tp2\n");
  auto sessions = load_sessions(path, FileFormat::tsv);
  REQUIRE(sessions.size() == 1);
  REQUIRE(sessions[0].events[0].item_id == "p2");
  REQUIRE(sessions[0].events[1].item_id == "p1");
  std::remove(path.c_str());
}

TEST_CASE("loader failure modes carry the offending location") {
  std::string path = temp_path("bad.csv");

  write_file(path, "session_id,thing,timestamp\ns,1,2\n");
  REQUIRE_THROWS_WITH(load_sessions(path, FileFormat::csv),
                      Catch::Matchers::ContainsSubstring("missing column 'item_id'"));

  write_file(path, "session_id,item_id,timestamp\ns,a,notanumber\n");
  REQUIRE_THROWS_WITH(load_sessions(path, FileFormat::csv),
                      Catch::Matchers::ContainsSubstring("line 2"));

  write_file(path, "session_id,item_id,timestamp\ns,a\n");
  REQUIRE_THROWS_AS(load_sessions(path, FileFormat::csv), FormatError);

  write_file(path, "session_id,item_id,timestamp\ns,,3\n");
  REQUIRE_THROWS_WITH(load_sessions(path, FileFormat::csv),
                      Catch::Matchers::ContainsSubstring("empty item_id"));

  REQUIRE_THROWS_AS(load_sessions(temp_path("does_not_exist.csv"), FileFormat::csv),
                    FormatError);
  std::remove(path.c_str());
}

TEST_CASE("take_last_fraction keeps the most recent sessions in file order") {
  std::vector<RawSession> raw;
  raw.push_back(make_session("a", {{"x", 5}}));
  raw.push_back(make_session("b", {{"x", 50}}));
  raw.push_back(make_session("c", {{"x", 20}}));
  raw.push_back(make_session("d", {{"x", 40}}));
  auto kept = take_last_fraction(raw, 0.5);
  REQUIRE(kept.size() == 2);
  REQUIRE(kept[0].session_id == "b");
  REQUIRE(kept[1].session_id == "d");
  REQUIRE(take_last_fraction(raw, 1.0).size() == 4);
  REQUIRE_THROWS_AS(take_last_fraction(raw, 0.0), ContractError);
  REQUIRE_THROWS_AS(take_last_fraction(raw, 1.5), ContractError);
}

TEST_CASE("preprocess filters rare items then short sessions") {
  std::vector<RawSession> raw;
  raw.push_back(make_session("A", {{"x", 0}, {"y", 1}, {"x", 2}, {"z", 3}}));
  raw.push_back(make_session("B", {{"x", 10}, {"z", 11}, {"x", 12}, {"y", 13}, {"z", 14}}));
  raw.push_back(make_session("C", {{"q", 20}, {"q", 21}}));

  // corpus counts: x=4, z=3, y=2, q=2 -> keep x and z at threshold 3
  Dataset ds = preprocess(raw, 2, 3, 50);
  REQUIRE(ds.vocab_size() == 2);
  REQUIRE(ds.items == std::vector<std::string>{"x", "z"});
  REQUIRE(ds.sessions.size() == 2);
  REQUIRE(ds.sessions[0] == std::vector<std::size_t>{0, 0, 1});
  REQUIRE(ds.sessions[1] == std::vector<std::size_t>{0, 1, 0, 1});
  REQUIRE(ds.end_ts[0] == 3);
  REQUIRE(ds.end_ts[1] == 14);
}

TEST_CASE("preprocess truncates to the last events before counting") {
  std::vector<RawSession> raw;
  raw.push_back(make_session("s1", {{"u", 0}, {"u", 1}, {"u", 2}, {"a", 3}, {"b", 4}}));
  raw.push_back(make_session("s2", {{"a", 10}, {"b", 11}}));
  raw.push_back(make_session("s3", {{"u", 20}, {"b", 21}, {"a", 22}}));

  // With max_len 2, s1 keeps only (a, b), so u is counted once (s3) and
  // falls under the threshold of 2.
  Dataset ds = preprocess(raw, 2, 2, 2);
  REQUIRE(ds.vocab_size() == 2);
  REQUIRE(ds.sessions.size() == 3);
  REQUIRE(ds.sessions[2].size() == 2);
  std::set<std::string> names(ds.items.begin(), ds.items.end());
  REQUIRE(names == std::set<std::string>{"a", "b"});
}

TEST_CASE("preprocess rejects degenerate outcomes") {
  std::vector<RawSession> raw;
  raw.push_back(make_session("only", {{"x", 0}}));
  REQUIRE_THROWS_AS(preprocess(raw, 2, 1, 50), DataError);
  REQUIRE_THROWS_AS(preprocess({}, 2, 1, 50), DataError);
}

TEST_CASE("time split closes the test vocabulary over the train split") {
  std::vector<RawSession> raw;
  raw.push_back(make_session("s1", {{"a", 0}, {"b", 1}, {"a", 2}}));
  raw.push_back(make_session("s2", {{"b", 10}, {"c", 11}, {"b", 12}}));
  raw.push_back(make_session("s3", {{"a", 20}, {"c", 21}, {"zz", 22}}));
  raw.push_back(make_session("s4", {{"c", 30}, {"a", 31}, {"b", 32}}));
  Dataset ds = preprocess(raw, 2, 1, 50);

  auto [train, test] = split_by_time(ds, 15, 2);
  REQUIRE(train.sessions.size() == 2);
  REQUIRE(test.sessions.size() == 2);
  REQUIRE(train.items == std::vector<std::string>{"a", "b", "c"});

  // zz exists only after the cutoff, so it vanishes from the test split.
  REQUIRE(test.sessions[0].size() == 2);
  REQUIRE(train.items[test.sessions[0][0]] == "a");
  REQUIRE(train.items[test.sessions[0][1]] == "c");
  REQUIRE(test.sessions[1].size() == 3);

  SECTION("a span covering everything empties the train side") {
    REQUIRE_THROWS_AS(split_by_time(ds, 1000, 2), DataError);
  }
  SECTION("test sessions shrunk below min_len are dropped") {
    auto [tr2, te2] = split_by_time(ds, 15, 3);
    REQUIRE(te2.sessions.size() == 1);
    REQUIRE(te2.sessions[0].size() == 3);
  }
  SECTION("span must be positive") {
    REQUIRE_THROWS_AS(split_by_time(ds, 0, 2), ContractError);
  }
}

TEST_CASE("validation split modes") {
  std::vector<RawSession> raw;
  for (int i = 0; i < 10; ++i)
    raw.push_back(make_session("s" + std::to_string(i),
                               {{"a", i * 10}, {"b", i * 10 + 1}}));
  Dataset ds = preprocess(raw, 2, 1, 50);

  SECTION("time mode holds out the latest fraction") {
    auto [tr, va] = split_validation(ds, 0.2, ValidSplitMode::by_time, 1);
    REQUIRE(tr.sessions.size() == 8);
    REQUIRE(va.sessions.size() == 2);
    REQUIRE(va.end_ts[0] > tr.end_ts.back());
  }
  SECTION("random mode is seed-deterministic") {
    auto [tr1, va1] = split_validation(ds, 0.3, ValidSplitMode::random, 7);
    auto [tr2, va2] = split_validation(ds, 0.3, ValidSplitMode::random, 7);
    REQUIRE(va1.sessions == va2.sessions);
    REQUIRE(tr1.sessions.size() == 7);
    REQUIRE(va1.sessions.size() == 3);
  }
  SECTION("zero fraction reuses the whole set on both sides") {
    auto [tr, va] = split_validation(ds, 0.0, ValidSplitMode::by_time, 1);
    REQUIRE(tr.sessions.size() == 10);
    REQUIRE(va.sessions.size() == 10);
  }
  SECTION("fraction one is rejected") {
    REQUIRE_THROWS_AS(split_validation(ds, 1.0, ValidSplitMode::by_time, 1), ContractError);
  }
}

TEST_CASE("prefix augmentation emits every next-item pair") {
  std::vector<std::size_t> s{5, 2, 7, 3};
  auto ex = augment_prefixes(s);
  REQUIRE(ex.size() == 3);
  REQUIRE(ex[0].input == std::vector<std::size_t>{5});
  REQUIRE(ex[0].target == 2);
  REQUIRE(ex[1].input == std::vector<std::size_t>{5, 2});
  REQUIRE(ex[1].target == 7);
  REQUIRE(ex[2].input == std::vector<std::size_t>{5, 2, 7});
  REQUIRE(ex[2].target == 3);

  std::vector<std::size_t> tiny{1};
  REQUIRE_THROWS_AS(augment_prefixes(tiny), ContractError);

  Dataset ds;
  ds.sessions = {{0, 1, 2}, {1, 0}};
  REQUIRE(augment_all(ds).size() == 3);
}

TEST_CASE("remap rejects items missing from the target vocabulary") {
  Dataset ds;
  ds.items = {"x", "y"};
  ds.vocab = {{"x", 0}, {"y", 1}};
  ds.sessions = {{0, 1, 0}};
  std::unordered_map<std::string, std::size_t> target{{"x", 3}, {"y", 9}};
  auto mapped = remap_sessions(ds, target);
  REQUIRE(mapped[0] == std::vector<std::size_t>{3, 9, 3});

  target.erase("y");
  REQUIRE_THROWS_WITH(remap_sessions(ds, target),
                      Catch::Matchers::ContainsSubstring("y"));
}

TEST_CASE("synthetic generator shape and determinism") {
  SyntheticSpec spec;
  spec.n_items = 15;
  spec.n_clusters = 3;
  spec.items_per_cluster = 5;
  spec.n_sessions = 40;
  spec.len_min = 4;
  spec.len_max = 7;
  spec.seed = 9;

  Dataset ds = gen_synthetic(spec);
  REQUIRE(ds.sessions.size() == 40);
  REQUIRE(ds.vocab_size() == 15);
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    REQUIRE(ds.sessions[i].size() >= 4);
    REQUIRE(ds.sessions[i].size() <= 7);
    for (std::size_t item : ds.sessions[i]) REQUIRE(item < 15);
    REQUIRE(ds.end_ts[i] ==
            (std::int64_t)i * 1000 + (std::int64_t)ds.sessions[i].size() - 1);
  }

  Dataset again = gen_synthetic(spec);
  REQUIRE(again.sessions == ds.sessions);
  spec.seed = 10;
  REQUIRE(gen_synthetic(spec).sessions != ds.sessions);
}

TEST_CASE("synthetic drift frequency tracks the configured probability") {
  SyntheticSpec spec;
  spec.drift_probability = 0.3;
  spec.n_sessions = 500;
  spec.seed = 77;
  Dataset ds = gen_synthetic(spec);

  std::size_t changes = 0, steps = 0;
  for (const auto& s : ds.sessions)
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      ++steps;
      if (item_cluster(spec, s[t]) != item_cluster(spec, s[t + 1])) ++changes;
    }
  double rate = (double)changes / (double)steps;
  REQUIRE(rate == Approx(0.3).margin(0.05));
}

TEST_CASE("two-cluster synthetic corpus alternates without crashing") {
  SyntheticSpec spec;
  spec.n_items = 8;
  spec.n_clusters = 2;
  spec.items_per_cluster = 4;
  spec.n_sessions = 30;
  spec.drift_probability = 1.0;
  spec.seed = 3;
  Dataset ds = gen_synthetic(spec);
  for (const auto& s : ds.sessions)
    for (std::size_t t = 0; t + 1 < s.size(); ++t)
      REQUIRE(item_cluster(spec, s[t]) != item_cluster(spec, s[t + 1]));
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.n_items = 39;
  REQUIRE_THROWS_AS(spec.validate(), ContractError);
  spec.n_items = 40;
  spec.drift_probability = 1.2;
  REQUIRE_THROWS_AS(spec.validate(), ContractError);
  spec.drift_probability = 0.3;
  spec.len_min = 1;
  REQUIRE_THROWS_AS(spec.validate(), ContractError);
  spec.len_min = 5;
  REQUIRE_NOTHROW(spec.validate());
}

TEST_CASE("synthetic csv and sidecar round trip") {
  SyntheticSpec spec;
  spec.n_items = 10;
  spec.n_clusters = 2;
  spec.items_per_cluster = 5;
  spec.n_sessions = 25;
  spec.seed = 21;
  Dataset ds = gen_synthetic(spec);

  std::string path = temp_path("synth.csv");
  write_dataset_csv(ds, path);
  write_synthetic_sidecar(spec, path + ".meta");

  auto raw = load_sessions(path, FileFormat::csv);
  REQUIRE(raw.size() == ds.sessions.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    REQUIRE(raw[i].events.size() == ds.sessions[i].size());
    for (std::size_t t = 0; t < raw[i].events.size(); ++t)
      REQUIRE(raw[i].events[t].item_id == ds.items[ds.sessions[i][t]]);
  }

  std::ifstream meta(path + ".meta");
  std::string line;
  std::set<std::string> lines;
  while (std::getline(meta, line)) lines.insert(line);
  REQUIRE(lines.count("n_items=10") == 1);
  REQUIRE(lines.count("cluster.item0=0") == 1);
  REQUIRE(lines.count("cluster.item9=1") == 1);
  std::remove(path.c_str());
  std::remove((path + ".meta").c_str());
}
