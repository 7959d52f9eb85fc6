#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#ifndef PATCLS_CLI
#error "PATCLS_CLI must point at the built binary"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(PATCLS_CLI) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) res.output.append(buf.data(), n);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "patcls_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string tiny_config(size_t epochs = 3) {
  const fs::path cfg = work_dir() / ("tiny_" + std::to_string(epochs) + ".cfg");
  std::ofstream out(cfg);
  out << "lr = 0.003\nbatch = 8\nepochs = " << epochs
      << "\nmax_len = 24\nn_top_layers = 2\nn_layers = 2\nhidden = 32\nn_heads = 4\n"
         "ff_dim = 64\nmax_positions = 24\ndropout = 0.1\nsplit_ratio = 0.8\nseed = 7\n"
         "model = bert-cnn\npretrain_steps = 12\nembed_dim = 32\nrnn_hidden = 32\n"
         "baseline_batch = 8\n";
  return cfg.string();
}

const std::string& tiny_corpus() {
  static const std::string path = [] {
    const std::string p = (work_dir() / "corpus.jsonl").string();
    const RunResult r = run_cli("synth --output " + p + " --sections 2 --classes 2 --docs 8 --doc-len 6 --seed 5");
    REQUIRE(r.exit_code == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("train-flat --help").exit_code == 0);
  CHECK(run_cli("no-such-command").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);  // a subcommand is required
  CHECK(run_cli("train-flat").exit_code == 2);  // missing required flags
}

TEST_CASE("config schema: unknown keys and bad values are exit code 2") {
  const fs::path bad = work_dir() / "bad.cfg";
  std::ofstream(bad) << "lr = 0.01\nnot_a_key = 3\n";
  const RunResult r = run_cli("train-flat --corpus " + tiny_corpus() + " --out " +
                              (work_dir() / "never").string() + " --config " + bad.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("not_a_key") != std::string::npos);

  const RunResult r2 = run_cli("train-flat --corpus " + tiny_corpus() + " --out " +
                               (work_dir() / "never2").string() + " --config " + tiny_config() +
                               " --set epochs=abc");
  CHECK(r2.exit_code == 2);

  const RunResult r3 = run_cli("train-flat --corpus " + tiny_corpus() + " --out " +
                               (work_dir() / "never3").string() + " --config " + tiny_config() +
                               " --set model=transformer-xl");
  CHECK(r3.exit_code == 2);
}

TEST_CASE("data errors are exit code 3") {
  const RunResult r = run_cli("train-flat --corpus /nonexistent.jsonl --out " +
                              (work_dir() / "never4").string() + " --config " + tiny_config());
  CHECK(r.exit_code == 3);
  const RunResult r2 = run_cli("ingest --input /nonexistent.csv --output " +
                               (work_dir() / "x.jsonl").string());
  CHECK(r2.exit_code == 3);
}

TEST_CASE("synth is byte-deterministic across runs") {
  const std::string a = (work_dir() / "s1.jsonl").string();
  const std::string b = (work_dir() / "s2.jsonl").string();
  REQUIRE(run_cli("synth --output " + a + " --sections 3 --classes 2 --docs 4 --doc-len 5 --seed 9").exit_code == 0);
  REQUIRE(run_cli("synth --output " + b + " --sections 3 --classes 2 --docs 4 --doc-len 5 --seed 9").exit_code == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("ingest command round-trips a CSV") {
  const fs::path csv = work_dir() / "in.csv";
  std::ofstream(csv) << "摘要,专利分类\n一种收割机进料装置,A01D\nbad row,oops\n蓝牙耳机,H04R\n";
  const std::string out = (work_dir() / "ingested.jsonl").string();
  const RunResult r = run_cli("ingest --input " + csv.string() + " --output " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("ingested 2 records, rejected 1") != std::string::npos);
  const std::string body = slurp(out);
  CHECK(body.find("A01D") != std::string::npos);
  CHECK(body.find("H04R") != std::string::npos);
}

TEST_CASE("eval --table2-check prints the published figures") {
  const RunResult r = run_cli("eval --table2-check");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("93.1") != std::string::npos);
  CHECK(r.output.find("84.3") != std::string::npos);
}

TEST_CASE("train-flat produces a complete, reproducible run directory") {
  const std::string out1 = (work_dir() / "flat1").string();
  const std::string out2 = (work_dir() / "flat2").string();
  const std::string base_args = " --corpus " + tiny_corpus() + " --config " + tiny_config();
  const RunResult r1 = run_cli("train-flat --out " + out1 + base_args);
  REQUIRE(r1.exit_code == 0);
  for (const char* f : {"/config.echo", "/metrics.jsonl", "/labels.json", "/summary.json",
                        "/model/meta.json", "/model/model.bin", "/model/vocab.json"})
    CHECK(fs::exists(out1 + f));

  // bit-for-bit reproduction on re-run with the same config and seed
  const RunResult r2 = run_cli("train-flat --out " + out2 + base_args);
  REQUIRE(r2.exit_code == 0);
  for (const char* f : {"/config.echo", "/metrics.jsonl", "/labels.json", "/summary.json",
                        "/model/model.bin", "/model/model.json"})
    CHECK(slurp(out1 + f) == slurp(out2 + f));

  // flat predict emits a label from labels.json
  const RunResult p = run_cli("predict --model " + out1 + " --text \"some words\"");
  REQUIRE(p.exit_code == 0);
  const nlohmann::json pj = nlohmann::json::parse(p.output);
  CHECK(pj.contains("label"));
  CHECK(pj.at("probs").size() == 2);
}

TEST_CASE("train-hier, eval and predict work together") {
  const std::string out = (work_dir() / "hier").string();
  const RunResult r = run_cli("train-hier --out " + out + " --corpus " + tiny_corpus() +
                              " --config " + tiny_config(6) + " --set threads=2");
  REQUIRE(r.exit_code == 0);
  for (const char* f : {"/config.echo", "/report.json", "/summary.csv", "/model/taxonomy.json",
                        "/model/l1/meta.json", "/model/l2_A/meta.json", "/model/l2_B/meta.json",
                        "/metrics/l1.jsonl"})
    CHECK(fs::exists(out + f));

  const nlohmann::json report = nlohmann::json::parse(slurp(out + "/report.json"));
  for (const char* key : {"acc_l1", "acc_l2", "weights", "acc_l2_avg", "acc_estimated",
                          "acc_empirical", "confusion_l1", "confusion_l2"})
    CHECK(report.contains(key));
  CHECK(report.at("acc_empirical").get<double>() <= report.at("acc_l1").get<double>() + 1e-12);

  const RunResult ev = run_cli("eval --model " + out + " --corpus " + tiny_corpus() + " --out " +
                               (work_dir() / "eval_out").string());
  REQUIRE(ev.exit_code == 0);
  CHECK(fs::exists(work_dir() / "eval_out/report.json"));
  CHECK(fs::exists(work_dir() / "eval_out/summary.csv"));

  const RunResult p = run_cli("predict --model " + out + " --text \"一种 集成电路 塑封 设备\"");
  REQUIRE(p.exit_code == 0);
  const nlohmann::json pj = nlohmann::json::parse(p.output);
  CHECK(pj.contains("section"));
  CHECK(pj.contains("class"));
}

TEST_CASE("pretrain writes a reusable encoder and train-flat can start from it") {
  const std::string pre_out = (work_dir() / "pre").string();
  const RunResult r = run_cli("pretrain --corpus " + tiny_corpus() + " --out " + pre_out +
                              " --config " + tiny_config());
  REQUIRE(r.exit_code == 0);
  for (const char* f : {"/vocab.json", "/encoder.bin", "/encoder.json", "/encoder_config.json",
                        "/pretrain_metrics.jsonl", "/config.echo"})
    CHECK(fs::exists(pre_out + f));

  const std::string ft = (work_dir() / "flat_pre").string();
  const RunResult r2 = run_cli("train-flat --out " + ft + " --corpus " + tiny_corpus() +
                               " --config " + tiny_config() + " --init " + pre_out);
  REQUIRE(r2.exit_code == 0);
  CHECK(fs::exists(ft + "/model/model.bin"));
}

TEST_CASE("export-attention writes the dump format") {
  const std::string out = (work_dir() / "att.json").string();
  const RunResult r = run_cli("export-attention --text-a \"固体绝缘开关柜\" --text-b \"隔离开关单元\" --output " +
                              out + " --config " + tiny_config());
  REQUIRE(r.exit_code == 0);
  const nlohmann::json doc = nlohmann::json::parse(slurp(out));
  REQUIRE(doc.contains("tokens"));
  REQUIRE(doc.contains("layers"));
  const auto tokens = doc.at("tokens").get<std::vector<std::string>>();
  CHECK(tokens.front() == "[CLS]");
  CHECK(std::count(tokens.begin(), tokens.end(), "[SEP]") == 2);
  CHECK(doc.at("layers").size() == 2);
  for (const auto& layer : doc.at("layers")) {
    CHECK(layer.at("heads").size() == 4);
    for (const auto& head : layer.at("heads")) {
      const auto& w = head.at("weights");
      REQUIRE(w.size() == tokens.size());
      for (const auto& row : w) REQUIRE(row.size() == tokens.size());
    }
  }
}

TEST_CASE("layer-sweep emits one row per layer count on a single split") {
  const std::string out = (work_dir() / "sweep").string();
  const RunResult r = run_cli("layer-sweep --out " + out + " --corpus " + tiny_corpus() +
                              " --config " + tiny_config(2));
  REQUIRE(r.exit_code == 0);
  std::ifstream rows(out + "/sweep.jsonl");
  std::string line;
  size_t n = 0;
  while (std::getline(rows, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ++n;
    CHECK(j.at("n").get<size_t>() == n);
    const double acc = j.at("accuracy").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  CHECK(n == 2);  // config has n_layers = 2
  CHECK(fs::exists(out + "/sweep.csv"));
}
