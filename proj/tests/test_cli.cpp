#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "distilforge/errors.hpp"
#include "distilforge/fsio.hpp"

// Exercises the built binary as a subprocess. The path comes from the
// DISTILFORGE_BIN environment variable (set by ctest).

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

std::string binary_path() {
  const char* p = std::getenv("DISTILFORGE_BIN");
  REQUIRE_MESSAGE(p != nullptr, "DISTILFORGE_BIN must point at the built binary");
  return p;
}

CliResult run_cli(const std::string& args) {
  const std::string cmd = binary_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path work_dir() {
  static fs::path p = [] {
    auto d = fs::temp_directory_path() / ("distilforge-cli-" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// one shared tiny setup: dataset, config, trained teacher, cache
struct Pipeline {
  fs::path data, config, teacher, cache;
  std::string teacher_hash;
};

const Pipeline& pipeline() {
  static Pipeline p = [] {
    Pipeline pl;
    pl.data = work_dir() / "cloze.kds";
    pl.config = work_dir() / "tiny.json";
    distilforge::atomic_write_file(pl.config,
                                   R"({"model":{"n_layers":1,"n_heads":2,"d_model":32,"d_ff":64}})");
    auto gen = run_cli("gen cloze --seed 1 --n 64 --difficulty 1 --out " + q(pl.data));
    REQUIRE(gen.code == 0);
    auto tt = run_cli("train-teacher --data " + q(pl.data) + " --config " + q(pl.config) +
                      " --out " + q(work_dir() / "t") + " --seed 1 --epochs 2 --batch-size 16 --lr 1e-3");
    REQUIRE_MESSAGE(tt.code == 0, tt.output);
    pl.teacher = work_dir() / "t" / "teacher.ckpt";
    pl.teacher_hash = tt.output.substr(tt.output.find("checkpoint ") + 11, 64);
    pl.cache = work_dir() / "t" / "cache.kdlc";
    auto ca = run_cli("cache --teacher " + q(pl.teacher) + " --data " + q(pl.data) + " --out " + q(pl.cache));
    REQUIRE_MESSAGE(ca.code == 0, ca.output);
    return pl;
  }();
  return p;
}

}  // namespace

TEST_CASE("cli: full pipeline completes with exit 0") {
  const auto& pl = pipeline();
  auto di = run_cli("distill --teacher " + q(pl.teacher) + " --cache " + q(pl.cache) + " --data " + q(pl.data) +
                    " --config " + q(pl.config) + " --alpha 0.5 --temperature 2 --seed 2 --epochs 1 --batch-size 16 --lr 1e-3 --out " +
                    q(work_dir() / "s"));
  CHECK_MESSAGE(di.code == 0, di.output);
  auto ev = run_cli("eval --model teacher=" + q(pl.teacher) + " --model student=" + q(work_dir() / "s" / "student.ckpt") +
                    " --data cloze=" + q(pl.data) + " --out " + q(work_dir() / "e"));
  CHECK_MESSAGE(ev.code == 0, ev.output);

  // csv header contract
  std::ifstream csv(work_dir() / "e" / "eval.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "model,n_params,task,metric,value");
}

TEST_CASE("cli: ingest of the bundled sample corpus") {
  const char* src_root = std::getenv("DISTILFORGE_SRC");
  REQUIRE_MESSAGE(src_root != nullptr, "DISTILFORGE_SRC must point at the repository root");
  const fs::path corpus = fs::path(src_root) / "assets" / "sample_corpus.txt";
  auto r = run_cli("gen ingest --text " + q(corpus) + " --context 16 --out " + q(work_dir() / "corpus.kds"));
  CHECK_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("dataset ") == 0);
}

TEST_CASE("cli: missing input path exits 2 and names the flag") {
  auto r = run_cli("train-teacher --data /nonexistent/x.kds --out " + q(work_dir() / "never"));
  CHECK(r.code == 2);
  CHECK(r.output.find("--data") != std::string::npos);

  auto r2 = run_cli("distill --teacher /nonexistent.ckpt --cache /nonexistent.kdlc --data /nonexistent.kds --out " + q(work_dir() / "never"));
  CHECK(r2.code == 2);

  auto r3 = run_cli("eval --model a=b");
  CHECK(r3.code == 2);
}

TEST_CASE("cli: reruns with identical seeds print identical hashes") {
  const auto& pl = pipeline();
  auto a = run_cli("train-teacher --data " + q(pl.data) + " --config " + q(pl.config) + " --out " + q(work_dir() / "r1") +
                   " --seed 5 --epochs 1 --batch-size 16 --lr 1e-3");
  auto b = run_cli("train-teacher --data " + q(pl.data) + " --config " + q(pl.config) + " --out " + q(work_dir() / "r2") +
                   " --seed 5 --epochs 1 --batch-size 16 --lr 1e-3");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  auto hash_of = [](const std::string& out) {
    const auto pos = out.find("checkpoint ");
    REQUIRE(pos != std::string::npos);
    return out.substr(pos + 11, 64);
  };
  CHECK(hash_of(a.output) == hash_of(b.output));
}

TEST_CASE("cli: stale cache is rejected with exit 3") {
  const auto& pl = pipeline();
  // teacher trained with a different seed gives a different checkpoint
  auto other = run_cli("train-teacher --data " + q(pl.data) + " --config " + q(pl.config) + " --out " + q(work_dir() / "other") +
                       " --seed 99 --epochs 1 --batch-size 16 --lr 1e-3");
  REQUIRE(other.code == 0);
  auto di = run_cli("distill --teacher " + q(work_dir() / "other" / "teacher.ckpt") + " --cache " + q(pl.cache) +
                    " --data " + q(pl.data) + " --config " + q(pl.config) + " --out " + q(work_dir() / "never2"));
  CHECK(di.code == 3);
  CHECK(di.output.find("different teacher") != std::string::npos);
}

TEST_CASE("cli: corrupted artifacts exit 3") {
  const auto& pl = pipeline();
  std::string bytes = distilforge::read_file_bytes(pl.teacher);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  const fs::path bad = work_dir() / "bad.ckpt";
  distilforge::atomic_write_file(bad, bytes);
  auto r = run_cli("cache --teacher " + q(bad) + " --data " + q(pl.data) + " --out " + q(work_dir() / "never.kdlc"));
  CHECK(r.code == 3);
  CHECK(r.output.find("hash mismatch") != std::string::npos);
}

TEST_CASE("cli: training divergence exits 4") {
  const auto& pl = pipeline();
  auto r = run_cli("train-teacher --data " + q(pl.data) + " --config " + q(pl.config) + " --out " + q(work_dir() / "div") +
                   " --seed 1 --epochs 2 --batch-size 16 --lr 1e18");
  CHECK(r.code == 4);
  CHECK(r.output.find("diverged") != std::string::npos);
}

TEST_CASE("cli: usage errors exit 2") {
  CHECK(run_cli("no-such-command").code == 2);
  CHECK(run_cli("gen cloze --n 10").code == 2);           // missing --out
  CHECK(run_cli("sweep --spec /nonexistent.json").code == 2);
  CHECK(run_cli("--help").code == 0);
}

TEST_CASE("cli: report rejects mixed schema versions naming both") {
  const auto& pl = pipeline();
  auto ev = run_cli("eval --model teacher=" + q(pl.teacher) + " --data cloze=" + q(pl.data) + " --out " + q(work_dir() / "e2"));
  REQUIRE(ev.code == 0);
  // forge a second report with a different schema_version
  std::string j = distilforge::read_file_bytes(work_dir() / "e2" / "eval.json");
  const auto pos = j.find("\"schema_version\": 1");
  REQUIRE(pos != std::string::npos);
  j.replace(pos, 19, "\"schema_version\": 2");
  distilforge::atomic_write_file(work_dir() / "e2" / "forged.json", j);
  auto rp = run_cli("report --eval " + q(work_dir() / "e2" / "eval.json") + " --eval " + q(work_dir() / "e2" / "forged.json") +
                    " --out " + q(work_dir() / "rep"));
  CHECK(rp.code == 3);
  CHECK(rp.output.find("1") != std::string::npos);
  CHECK(rp.output.find("2") != std::string::npos);
}
