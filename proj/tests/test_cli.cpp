// End-to-end checks of the command-line binary: it is spawned as a real
// subprocess, so exit codes, stdout formats and artifact files are all
// exercised exactly as a user would see them.

#include <catch2/catch_amalgamated.hpp>

#include <sys/stat.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(PEN4REC_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool file_exists(const std::string& path) {
  struct stat st;
  return ::stat(path.c_str(), &st) == 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

double json_number(const std::string& json, const std::string& key) {
  std::string needle = "\"" + key + "\":";
  std::size_t pos = json.find(needle);
  REQUIRE(pos != std::string::npos);
  return std::strtod(json.c_str() + pos + needle.size(), nullptr);
}

const std::string& work_dir() {
  static std::string dir = [] {
    std::string d = "/tmp/pen4rec_cli_suite";
    ::mkdir(d.c_str(), 0755);
    return d;
  }();
  return dir;
}

// One shared corpus and one shared trained model; generated once and reused
// by every test case that only needs to read them.
const std::string& corpus_csv() {
  static std::string path = [] {
    std::string p = work_dir() + "/corpus.csv";
    RunResult r = run_cli("gen-synth --n-items 12 --clusters 3 --items-per-cluster 4 "
                          "--n-sessions 80 --drift-prob 0.2 --len-min 4 --len-max 6 "
                          "--seed 5 --out " + p);
    REQUIRE(r.code == 0);
    return p;
  }();
  return path;
}

struct TrainedModel {
  std::string checkpoint;
  std::string stdout_text;
};

const TrainedModel& trained_model() {
  static TrainedModel m = [] {
    TrainedModel t;
    t.checkpoint = work_dir() + "/model.ck";
    RunResult r = run_cli("train --data " + corpus_csv() +
                          " --d 8 --k 2 --epochs 2 --batch-size 16 --lr 0.003 "
                          "--dropout 0 --seed 11 --out " + t.checkpoint);
    REQUIRE(r.code == 0);
    t.stdout_text = r.out;
    return t;
  }();
  return m;
}

}  // namespace

TEST_CASE("gen-synth writes the corpus with sidecars and is seed-deterministic") {
  const std::string& a = corpus_csv();
  REQUIRE(file_exists(a));
  REQUIRE(file_exists(a + ".meta"));
  REQUIRE(file_exists(a + ".manifest"));

  std::string meta = slurp(a + ".meta");
  REQUIRE(meta.find("n_items=12\n") != std::string::npos);
  REQUIRE(meta.find("seed=5\n") != std::string::npos);
  REQUIRE(meta.find("cluster.item0=0\n") != std::string::npos);
  REQUIRE(meta.find("cluster.item11=2\n") != std::string::npos);

  std::string b = work_dir() + "/corpus_again.csv";
  RunResult r = run_cli("gen-synth --n-items 12 --clusters 3 --items-per-cluster 4 "
                        "--n-sessions 80 --drift-prob 0.2 --len-min 4 --len-max 6 "
                        "--seed 5 --out " + b);
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("sessions=80 items=12 events=") != std::string::npos);
  REQUIRE(slurp(a) == slurp(b));

  std::string c = work_dir() + "/corpus_seed6.csv";
  RunResult r2 = run_cli("gen-synth --n-items 12 --clusters 3 --items-per-cluster 4 "
                         "--n-sessions 80 --drift-prob 0.2 --len-min 4 --len-max 6 "
                         "--seed 6 --out " + c);
  REQUIRE(r2.code == 0);
  REQUIRE(slurp(a) != slurp(c));
}

TEST_CASE("gen-synth rejects out-of-range and inconsistent shapes") {
  RunResult bad_prob = run_cli("gen-synth --drift-prob 1.5 --out /tmp/p4r_x.csv");
  REQUIRE(bad_prob.code == 2);
  RunResult bad_shape = run_cli("gen-synth --n-items 13 --clusters 3 --items-per-cluster 4 "
                                "--out /tmp/p4r_x.csv");
  REQUIRE(bad_shape.code == 2);
  REQUIRE(bad_shape.out.find("n_items") != std::string::npos);
}

TEST_CASE("seed environment fallback is honored") {
  std::string p = work_dir() + "/corpus_env.csv";
  std::string cmd = "PEN4REC_SEED=99 " + std::string(PEN4REC_CLI_PATH) +
                    " gen-synth --n-items 12 --clusters 3 --items-per-cluster 4 "
                    "--n-sessions 10 --out " + p + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[256];
  while (std::fread(buf, 1, sizeof buf, pipe) > 0) {
  }
  int status = pclose(pipe);
  REQUIRE(WIFEXITED(status));
  REQUIRE(WEXITSTATUS(status) == 0);
  REQUIRE(slurp(p + ".meta").find("seed=99\n") != std::string::npos);
}

TEST_CASE("train emits epoch json, a log file, a checkpoint and a manifest") {
  const TrainedModel& m = trained_model();
  REQUIRE(file_exists(m.checkpoint));
  REQUIRE(file_exists(m.checkpoint + ".log"));
  REQUIRE(file_exists(m.checkpoint + ".manifest"));

  std::vector<std::string> out_lines = lines_of(m.stdout_text);
  std::size_t epoch_lines = 0;
  for (const std::string& l : out_lines)
    if (l.rfind("{\"epoch\":", 0) == 0) ++epoch_lines;
  REQUIRE(epoch_lines == 2);
  REQUIRE(m.stdout_text.find("{\"epoch\":1,\"mean_loss\":") != std::string::npos);
  REQUIRE(m.stdout_text.find("\"valid_p20\":") != std::string::npos);
  REQUIRE(m.stdout_text.find("\"lr\":0.0030000000000000001}") != std::string::npos);

  // the log file holds exactly the epoch lines
  std::vector<std::string> log_lines = lines_of(slurp(m.checkpoint + ".log"));
  REQUIRE(log_lines.size() == 2);
  for (const std::string& l : log_lines) REQUIRE(l.rfind("{\"epoch\":", 0) == 0);

  std::string manifest = slurp(m.checkpoint + ".manifest");
  REQUIRE(manifest.find("command=train\n") != std::string::npos);
  REQUIRE(manifest.find("d=8\n") != std::string::npos);
  REQUIRE(manifest.find("k=2\n") != std::string::npos);
  REQUIRE(manifest.find("seed=11\n") != std::string::npos);
  REQUIRE(manifest.find("epochs_run=2\n") != std::string::npos);
}

TEST_CASE("train rejects bad flags and missing data") {
  RunResult bad_k = run_cli("train --data " + corpus_csv() + " --k 0 --out /tmp/p4r_k0.ck");
  REQUIRE(bad_k.code == 2);
  RunResult no_out = run_cli("train --data " + corpus_csv());
  REQUIRE(no_out.code == 2);
  RunResult bad_variant =
      run_cli("train --data " + corpus_csv() + " --variant bogus --out /tmp/p4r_v.ck");
  REQUIRE(bad_variant.code == 2);
  RunResult no_file = run_cli("train --data /tmp/p4r_missing_corpus.csv --out /tmp/p4r_m.ck");
  REQUIRE(no_file.code == 1);
  REQUIRE(no_file.out.find("error") != std::string::npos);
}

TEST_CASE("eval prints the metric json and supports rank dumps") {
  const TrainedModel& m = trained_model();
  RunResult r = run_cli("eval --model " + m.checkpoint + " --data " + corpus_csv());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("\"p_at_20\":") != std::string::npos);
  REQUIRE(r.out.find("\"mrr_at_20\":") != std::string::npos);
  REQUIRE(r.out.find("\"variant\":\"full\"") != std::string::npos);
  REQUIRE(r.out.find("\"k\":20}") != std::string::npos);
  double p = json_number(r.out, "p_at_20");
  double mrr = json_number(r.out, "mrr_at_20");
  REQUIRE(p >= 0.0);
  REQUIRE(p <= 1.0);
  REQUIRE(mrr <= p + 1e-15);

  SECTION("cutoff 1 collapses precision and reciprocal rank") {
    RunResult r1 = run_cli("eval --model " + m.checkpoint + " --data " + corpus_csv() +
                           " --cutoff 1");
    REQUIRE(r1.code == 0);
    REQUIRE(json_number(r1.out, "p_at_20") == json_number(r1.out, "mrr_at_20"));
    REQUIRE(r1.out.find("\"k\":1}") != std::string::npos);
  }
  SECTION("rank dump matches the example count") {
    std::string dump = work_dir() + "/ranks.tsv";
    RunResult rd = run_cli("eval --model " + m.checkpoint + " --data " + corpus_csv() +
                           " --dump " + dump);
    REQUIRE(rd.code == 0);
    std::vector<std::string> rows = lines_of(slurp(dump));
    REQUIRE(rows.at(0) == "example_id\ttarget\trank");
    double n = json_number(rd.out, "n_examples");
    REQUIRE(rows.size() == (std::size_t)n + 1);
    REQUIRE(file_exists(dump + ".manifest"));
  }
  SECTION("required flags") {
    RunResult no_model = run_cli("eval --data " + corpus_csv());
    REQUIRE(no_model.code == 2);
    RunResult no_ck = run_cli("eval --model /tmp/p4r_missing.ck --data " + corpus_csv());
    REQUIRE(no_ck.code == 1);
  }
}

TEST_CASE("predict prints a ranked tab-separated list") {
  const TrainedModel& m = trained_model();
  RunResult r = run_cli("predict --model " + m.checkpoint +
                        " --session item3,item5,item3 --top 5");
  REQUIRE(r.code == 0);
  std::vector<std::string> rows = lines_of(r.out);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::istringstream row(rows[i]);
    std::string rank, item, prob;
    REQUIRE(std::getline(row, rank, '\t'));
    REQUIRE(std::getline(row, item, '\t'));
    REQUIRE(std::getline(row, prob, '\t'));
    REQUIRE(rank == std::to_string(i + 1));
    REQUIRE(item.rfind("item", 0) == 0);
    double pv = std::strtod(prob.c_str(), nullptr);
    REQUIRE(pv > 0.0);
    REQUIRE(pv < 1.0);
  }
  // best-first ordering of the printed probabilities
  double prev = 1.0;
  for (const std::string& row : rows) {
    std::size_t tab = row.rfind('\t');
    double pv = std::strtod(row.c_str() + tab + 1, nullptr);
    REQUIRE(pv <= prev);
    prev = pv;
  }

  SECTION("unknown items fail, empty sessions are usage errors") {
    RunResult unk = run_cli("predict --model " + m.checkpoint + " --session item3,nope");
    REQUIRE(unk.code == 1);
    REQUIRE(unk.out.find("nope") != std::string::npos);
    RunResult empty = run_cli("predict --model " + m.checkpoint + " --session \"\"");
    REQUIRE(empty.code == 2);
  }
}

TEST_CASE("sweep-k trains one model per window and prints a table") {
  std::string table = work_dir() + "/sweep.tsv";
  RunResult r = run_cli("sweep-k --data " + corpus_csv() +
                        " --d 6 --epochs 1 --batch-size 16 --dropout 0 --seed 3 "
                        "--holdout-span 20000 --k-min 1 --k-max 2 --table-out " + table);
  REQUIRE(r.code == 0);
  std::vector<std::string> rows = lines_of(r.out);
  REQUIRE(rows.size() >= 3);
  REQUIRE(rows[0] == "k\tp_at_20\tmrr_at_20");
  REQUIRE(rows[1].rfind("1\t", 0) == 0);
  REQUIRE(rows[2].rfind("2\t", 0) == 0);
  std::vector<std::string> saved = lines_of(slurp(table));
  REQUIRE(saved.size() == 3);
  REQUIRE(saved[0] == rows[0]);
  REQUIRE(saved[1] == rows[1]);
  REQUIRE(saved[2] == rows[2]);
  REQUIRE(file_exists(table + ".manifest"));

  SECTION("an empty window range is rejected") {
    RunResult bad = run_cli("sweep-k --data " + corpus_csv() +
                            " --holdout-span 20000 --k-min 3 --k-max 2");
    REQUIRE(bad.code == 2);
  }
  SECTION("a zero holdout span is rejected") {
    RunResult bad = run_cli("sweep-k --data " + corpus_csv() + " --k-min 1 --k-max 2");
    REQUIRE(bad.code == 2);
  }
}

TEST_CASE("help exits cleanly and marks defaults that are tuning choices") {
  RunResult top = run_cli("--help");
  REQUIRE(top.code == 0);
  REQUIRE(top.out.find("train") != std::string::npos);
  RunResult tr = run_cli("train --help");
  REQUIRE(tr.code == 0);
  REQUIRE(tr.out.find("(heuristic default)") != std::string::npos);
  RunResult none = run_cli("");
  REQUIRE(none.code == 2);
}
