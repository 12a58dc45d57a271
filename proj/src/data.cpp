#include "distilforge/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "distilforge/bytes.hpp"
#include "distilforge/errors.hpp"
#include "distilforge/fsio.hpp"
#include "distilforge/rng.hpp"

namespace distilforge {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::lm: return "lm";
    case TaskKind::cloze: return "cloze";
    case TaskKind::qa: return "qa";
  }
  throw ConfigError("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "lm") return TaskKind::lm;
  if (s == "cloze") return TaskKind::cloze;
  if (s == "qa") return TaskKind::qa;
  throw ConfigError("unknown task kind: " + s);
}

int Dataset::answer_len() const {
  if (generator_params.contains("answer_len")) return generator_params["answer_len"].get<int>();
  return 1;
}

int Dataset::max_input_len() const {
  int m = 0;
  for (const auto& e : examples) m = std::max(m, static_cast<int>(e.input.size()));
  return m;
}

std::vector<int32_t> Dataset::tokenize(std::string_view text) const {
  std::map<std::string, int32_t> index;
  for (size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = static_cast<int32_t>(i);
  std::vector<int32_t> out;
  size_t pos = 0;
  while (pos < text.size()) {
    // longest-match over single codepoints: vocab entries are one char each,
    // so decode one utf-8 unit and look it up
    const unsigned char b = static_cast<unsigned char>(text[pos]);
    size_t n = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : 4;
    n = std::min(n, text.size() - pos);
    const std::string cp(text.substr(pos, n));
    auto it = index.find(cp);
    if (it == index.end()) throw IndexError("tokenize: character '" + cp + "' not in vocabulary");
    out.push_back(it->second);
    pos += n;
  }
  return out;
}

std::string Dataset::detokenize(std::span<const int32_t> ids) const {
  std::string out;
  for (int32_t id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= vocab.size()) {
      throw IndexError("detokenize: token id " + std::to_string(id) + " out of range");
    }
    out += vocab[static_cast<size_t>(id)];
  }
  return out;
}

void Dataset::rehash() {
  ByteWriter w;
  w.put_bytes("KDDS-content-v1");
  w.put_u8(static_cast<uint8_t>(task_kind));
  w.put_u64(vocab.size());
  for (const auto& c : vocab) {
    w.put_u64(c.size());
    w.put_bytes(c);
  }
  w.put_u64(examples.size());
  for (const auto& e : examples) {
    w.put_u64(e.input.size());
    for (int32_t t : e.input) w.put_u32(static_cast<uint32_t>(t));
    w.put_u64(e.target.size());
    for (int32_t t : e.target) w.put_u32(static_cast<uint32_t>(t));
  }
  content_hash = sha256(w.bytes());
}

// --- ingestion ----------------------------------------------------------

// Decodes UTF-8 into per-codepoint strings, validating the encoding.
static std::vector<std::string> decode_utf8(std::string_view text) {
  std::vector<std::string> cps;
  size_t pos = 0;
  while (pos < text.size()) {
    const unsigned char b = static_cast<unsigned char>(text[pos]);
    size_t n;
    if (b < 0x80) n = 1;
    else if ((b >> 5) == 0x6) n = 2;
    else if ((b >> 4) == 0xe) n = 3;
    else if ((b >> 3) == 0x1e) n = 4;
    else throw IngestError("invalid utf-8 lead byte at offset " + std::to_string(pos));
    if (pos + n > text.size()) throw IngestError("truncated utf-8 sequence at offset " + std::to_string(pos));
    for (size_t i = 1; i < n; ++i) {
      if ((static_cast<unsigned char>(text[pos + i]) >> 6) != 0x2) {
        throw IngestError("invalid utf-8 continuation byte at offset " + std::to_string(pos + i));
      }
    }
    cps.emplace_back(text.substr(pos, n));
    pos += n;
  }
  return cps;
}

Dataset ingest_text(const std::filesystem::path& path, int context_len) {
  if (context_len < 1) throw ConfigError("context_len must be >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read text file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.empty()) throw IngestError("text file is empty: " + path.string());

  const std::vector<std::string> cps = decode_utf8(text);
  Dataset ds;
  ds.task_kind = TaskKind::lm;

  std::map<std::string, int32_t> index;
  std::vector<int32_t> ids;
  ids.reserve(cps.size());
  for (const auto& c : cps) {
    auto it = index.find(c);
    if (it == index.end()) {
      const int32_t id = static_cast<int32_t>(ds.vocab.size());
      index.emplace(c, id);
      ds.vocab.push_back(c);
      ids.push_back(id);
    } else {
      ids.push_back(it->second);
    }
  }

  const int64_t n = static_cast<int64_t>(ids.size());
  if (n - context_len < 1) {
    throw IngestError("text has " + std::to_string(n) + " characters; need more than context_len " + std::to_string(context_len) + " for one window");
  }
  for (int64_t i = 0; i + context_len < n; ++i) {
    Example e;
    e.input.assign(ids.begin() + i, ids.begin() + i + context_len);
    e.target.assign(ids.begin() + i + 1, ids.begin() + i + context_len + 1);
    ds.examples.push_back(std::move(e));
  }
  ds.generator_params = {{"kind", "lm"}, {"context_len", context_len}, {"answer_len", 1}};
  ds.rehash();
  return ds;
}

// --- synthetic tasks ----------------------------------------------------

static const std::string kLetters = "abcdefghijklmnopqrstuvwxyz";

// One fixed vocabulary for every generated task, so models trained on one
// synthetic dataset can be scored on any other.
static std::vector<std::string> task_vocab() {
  std::vector<std::string> v;
  for (char c : kLetters) v.emplace_back(1, c);
  for (char c : std::string(" >=;?")) v.emplace_back(1, c);
  return v;
}

Dataset gen_cloze_task(uint64_t seed, int n_examples, int difficulty) {
  if (n_examples < 1) throw ConfigError("n_examples must be >= 1");
  if (difficulty < 0) throw ConfigError("difficulty must be >= 0");

  const int key_len = difficulty == 0 ? 1 : 2;
  const int n_keys = std::min(4 + 4 * difficulty, 24);
  const int filler_min = difficulty == 0 ? 0 : 1;
  const int filler_max = difficulty == 0 ? 0 : 2 + difficulty;

  Rng rng(seed);
  // distinct keys, each bound to one answer letter
  std::map<std::string, std::string> table;
  std::vector<std::string> keys;
  while (static_cast<int>(keys.size()) < n_keys) {
    std::string k;
    for (int i = 0; i < key_len; ++i) k += kLetters[static_cast<size_t>(rng.next_below(26))];
    if (table.count(k)) continue;
    table[k] = std::string(1, kLetters[static_cast<size_t>(rng.next_below(26))]);
    keys.push_back(k);
  }

  Dataset ds;
  ds.task_kind = TaskKind::cloze;
  ds.vocab = task_vocab();
  for (int i = 0; i < n_examples; ++i) {
    const std::string& key = keys[static_cast<size_t>(rng.next_below(keys.size()))];
    std::string sentence = key;
    if (filler_max > 0) {
      const int flen = filler_min + static_cast<int>(rng.next_below(static_cast<uint64_t>(filler_max - filler_min + 1)));
      sentence += ' ';
      for (int j = 0; j < flen; ++j) sentence += kLetters[static_cast<size_t>(rng.next_below(26))];
      sentence += ' ';
    }
    sentence += '>';
    sentence += table[key];
    const std::vector<int32_t> ids = ds.tokenize(sentence);
    Example e;
    e.input.assign(ids.begin(), ids.end() - 1);
    e.target.assign(ids.begin() + 1, ids.end());
    ds.examples.push_back(std::move(e));
  }
  nlohmann::json rules(table);
  ds.generator_params = {{"kind", "cloze"},    {"seed", seed},           {"difficulty", difficulty},
                         {"keys", rules},      {"key_len", key_len},     {"filler_min", filler_min},
                         {"filler_max", filler_max}, {"marker", ">"},    {"answer_len", 1}};
  ds.rehash();
  return ds;
}

Dataset gen_qa_task(uint64_t seed, int n_examples) {
  if (n_examples < 1) throw ConfigError("n_examples must be >= 1");

  const int n_facts = 16;
  const int facts_per_example = 3;
  const int key_len = 2, value_len = 2;

  Rng rng(seed);
  std::map<std::string, std::string> table;
  std::vector<std::string> keys;
  while (static_cast<int>(keys.size()) < n_facts) {
    std::string k;
    for (int i = 0; i < key_len; ++i) k += kLetters[static_cast<size_t>(rng.next_below(26))];
    if (table.count(k)) continue;
    std::string v;
    for (int i = 0; i < value_len; ++i) v += kLetters[static_cast<size_t>(rng.next_below(26))];
    table[k] = v;
    keys.push_back(k);
  }

  Dataset ds;
  ds.task_kind = TaskKind::qa;
  ds.vocab = task_vocab();
  for (int i = 0; i < n_examples; ++i) {
    // pick distinct facts for the context; the query key is one of them
    std::vector<size_t> pick;
    while (static_cast<int>(pick.size()) < facts_per_example) {
      const size_t j = static_cast<size_t>(rng.next_below(keys.size()));
      if (std::find(pick.begin(), pick.end(), j) == pick.end()) pick.push_back(j);
    }
    const std::string& query = keys[pick[static_cast<size_t>(rng.next_below(pick.size()))]];
    std::string prompt;
    for (size_t j : pick) prompt += keys[j] + "=" + table[keys[j]] + ";";
    prompt += query + "?";
    const std::string sequence = prompt + table[query];
    const std::vector<int32_t> ids = ds.tokenize(sequence);
    Example e;
    e.input.assign(ids.begin(), ids.end() - 1);
    e.target.assign(ids.begin() + 1, ids.end());
    ds.examples.push_back(std::move(e));
  }
  ds.generator_params = {{"kind", "qa"},
                         {"seed", seed},
                         {"facts", nlohmann::json(table)},
                         {"facts_per_example", facts_per_example},
                         {"answer_len", value_len}};
  ds.rehash();
  return ds;
}

// --- batching -----------------------------------------------------------

std::vector<Batch> batches(const Dataset& ds, int batch_size, uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int64_t> order(ds.examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  Rng rng = Rng::keyed(seed, static_cast<uint64_t>(epoch));
  shuffle(order, rng);

  std::vector<Batch> out;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    b.batch = static_cast<int>(end - start);
    int len = 0;
    for (size_t i = start; i < end; ++i) {
      len = std::max(len, static_cast<int>(ds.examples[static_cast<size_t>(order[i])].input.size()));
    }
    b.len = len;
    b.inputs.assign(static_cast<size_t>(b.batch) * len, 0);
    b.targets.assign(static_cast<size_t>(b.batch) * len, 0);
    b.padded.assign(static_cast<size_t>(b.batch) * len, 1);
    for (size_t i = start; i < end; ++i) {
      const int row = static_cast<int>(i - start);
      const Example& e = ds.examples[static_cast<size_t>(order[i])];
      b.example_ids.push_back(order[i]);
      for (size_t t = 0; t < e.input.size(); ++t) {
        const size_t at = static_cast<size_t>(row) * len + t;
        b.inputs[at] = e.input[t];
        b.targets[at] = e.target[t];
        b.padded[at] = 0;
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

// --- container ----------------------------------------------------------

// Layout: "KDDS" | version u32 | header_len u64 | header json |
//         n u64 | offsets u64[n] | records (in_len u32, tgt_len u32, ids) |
//         sha-256 of everything preceding.
static constexpr char kDatasetMagic[4] = {'K', 'D', 'D', 'S'};
static constexpr uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_bytes(kDatasetMagic, 4);
  w.put_u32(kDatasetVersion);

  nlohmann::json header{{"task_kind", to_string(ds.task_kind)},
                        {"vocab", ds.vocab},
                        {"n_examples", ds.examples.size()},
                        {"generator_params", ds.generator_params},
                        {"content_hash", to_hex(ds.content_hash)}};
  const std::string hj = header.dump();
  w.put_u64(hj.size());
  w.put_bytes(hj);

  w.put_u64(ds.examples.size());
  std::vector<uint64_t> offsets;
  offsets.reserve(ds.examples.size());
  uint64_t off = 0;
  for (const auto& e : ds.examples) {
    offsets.push_back(off);
    off += 8 + 4 * (e.input.size() + e.target.size());
  }
  for (uint64_t o : offsets) w.put_u64(o);
  for (const auto& e : ds.examples) {
    w.put_u32(static_cast<uint32_t>(e.input.size()));
    w.put_u32(static_cast<uint32_t>(e.target.size()));
    for (int32_t t : e.input) w.put_u32(static_cast<uint32_t>(t));
    for (int32_t t : e.target) w.put_u32(static_cast<uint32_t>(t));
  }

  const Hash32 file_hash = sha256(w.bytes());
  w.put_bytes(file_hash.data(), file_hash.size());
  atomic_write_file(path, w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < 40) throw FormatError("dataset file too small: " + path.string());
  const Hash32 stored = [&] {
    Hash32 h{};
    std::copy_n(bytes.end() - 32, 32, h.begin());
    return h;
  }();
  const Hash32 actual = sha256(std::string_view(bytes).substr(0, bytes.size() - 32));
  if (stored != actual) throw IntegrityError("dataset file hash mismatch: " + path.string());

  ByteReader r(std::string_view(bytes).substr(0, bytes.size() - 32));
  if (r.get_bytes(4) != std::string_view(kDatasetMagic, 4)) {
    throw FormatError("not a dataset file (bad magic): " + path.string());
  }
  const uint32_t version = r.get_u32();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset format version " + std::to_string(version) + " in " + path.string());
  }
  const uint64_t hlen = r.get_u64();
  const nlohmann::json header = nlohmann::json::parse(r.get_bytes(hlen));

  Dataset ds;
  ds.task_kind = task_kind_from_string(header.at("task_kind").get<std::string>());
  ds.vocab = header.at("vocab").get<std::vector<std::string>>();
  ds.generator_params = header.at("generator_params");

  const uint64_t n = r.get_u64();
  for (uint64_t i = 0; i < n; ++i) r.get_u64();  // offsets; records are read sequentially
  for (uint64_t i = 0; i < n; ++i) {
    Example e;
    const uint32_t in_len = r.get_u32();
    const uint32_t tgt_len = r.get_u32();
    e.input.reserve(in_len);
    e.target.reserve(tgt_len);
    for (uint32_t t = 0; t < in_len; ++t) e.input.push_back(static_cast<int32_t>(r.get_u32()));
    for (uint32_t t = 0; t < tgt_len; ++t) e.target.push_back(static_cast<int32_t>(r.get_u32()));
    ds.examples.push_back(std::move(e));
  }

  ds.rehash();
  if (to_hex(ds.content_hash) != header.at("content_hash").get<std::string>()) {
    throw IntegrityError("dataset content hash does not match its header: " + path.string());
  }
  return ds;
}

}  // namespace distilforge
