#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "distilforge/checkpoint.hpp"
#include "distilforge/data.hpp"
#include "distilforge/distill.hpp"
#include "distilforge/fsio.hpp"
#include "distilforge/hash.hpp"

using namespace distilforge;
namespace fs = std::filesystem;

static fs::path temp_dir() {
  auto p = fs::temp_directory_path() / ("distilforge-persist-" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

TEST_CASE("sha-256 matches published vectors") {
  CHECK(to_hex(sha256(std::string_view(""))) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(sha256(std::string_view("abc"))) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hash_from_hex(to_hex(sha256(std::string_view("abc")))) == sha256(std::string_view("abc")));
  CHECK_THROWS_AS(hash_from_hex("zz"), FormatError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const ModelConfig cfg{13, 6, 2, 2, 16, 32, 77};
  Model m = init_model(cfg);
  const fs::path p = temp_dir() / "model.ckpt";
  const Hash32 h = save_checkpoint(m, p);
  CHECK(h == model_content_hash(m));

  Model back = load_checkpoint(p);
  CHECK(back.config == cfg);
  REQUIRE(back.params.size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].first == m.params[i].first);
    CHECK(back.params[i].second.data() == m.params[i].second.data());
  }
  // identical forward logits after reload
  std::vector<int32_t> toks{1, 2, 3};
  CHECK(forward(m, toks).data() == forward(back, toks).data());

  // saving the reloaded model reproduces the same hash
  CHECK(save_checkpoint(back, temp_dir() / "model2.ckpt") == h);
}

TEST_CASE("any single corrupted byte fails the load") {
  const ModelConfig cfg{7, 4, 1, 1, 8, 16, 3};
  Model m = init_model(cfg);
  const fs::path p = temp_dir() / "c.ckpt";
  save_checkpoint(m, p);
  const std::string bytes = read_file_bytes(p);

  for (size_t at : {size_t{0}, size_t{5}, bytes.size() / 2, bytes.size() - 40, bytes.size() - 1}) {
    std::string corrupt = bytes;
    corrupt[at] = static_cast<char>(corrupt[at] ^ 0x01);
    const fs::path cp = temp_dir() / "c-bad.ckpt";
    atomic_write_file(cp, corrupt);
    CHECK_THROWS_AS(load_checkpoint(cp), Error);
  }
  // truncation
  atomic_write_file(temp_dir() / "c-short.ckpt", std::string_view(bytes).substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(temp_dir() / "c-short.ckpt"), Error);
}

TEST_CASE("perturbing one parameter changes the content hash") {
  const ModelConfig cfg{7, 4, 1, 1, 8, 16, 3};
  Model a = init_model(cfg);
  Model b = init_model(cfg);
  CHECK(model_content_hash(a) == model_content_hash(b));
  b.params[3].second.data()[0] += 1e-3;
  CHECK(model_content_hash(a) != model_content_hash(b));
}

TEST_CASE("wrong container types are rejected by magic") {
  Dataset ds = gen_cloze_task(1, 4, 0);
  const ModelConfig cfg{static_cast<int>(ds.vocab.size()), 4, 1, 1, 8, 16, 3};
  Model m = init_model(cfg);
  LogitCache cache = cache_teacher_logits(m, ds);

  const fs::path cache_path = temp_dir() / "x.kdlc";
  save_logit_cache(cache, cache_path);
  CHECK_THROWS_AS(load_checkpoint(cache_path), FormatError);

  const fs::path ckpt_path = temp_dir() / "x.ckpt";
  save_checkpoint(m, ckpt_path);
  CHECK_THROWS_AS(load_logit_cache(ckpt_path), FormatError);
  CHECK_THROWS_AS(load_dataset(ckpt_path), FormatError);
}

TEST_CASE("unsupported future version is rejected, not guessed") {
  const ModelConfig cfg{7, 4, 1, 1, 8, 16, 3};
  Model m = init_model(cfg);
  std::string bytes = checkpoint_bytes(m);
  // bump the version field (bytes 4..7), then re-seal the trailing hash
  bytes[4] = 2;
  const std::string body = bytes.substr(0, bytes.size() - 32);
  const Hash32 h = sha256(body);
  std::string sealed = body + std::string(reinterpret_cast<const char*>(h.data()), 32);
  const fs::path p = temp_dir() / "future.ckpt";
  atomic_write_file(p, sealed);
  CHECK_THROWS_AS(load_checkpoint(p), FormatError);
}

TEST_CASE("io failures carry path context") {
  try {
    load_checkpoint(temp_dir() / "does-not-exist.ckpt");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("does-not-exist.ckpt") != std::string::npos);
  }
}
