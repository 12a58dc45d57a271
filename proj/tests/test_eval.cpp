#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "distilforge/checkpoint.hpp"
#include "distilforge/eval.hpp"
#include "distilforge/ops.hpp"
#include "distilforge/rng.hpp"
#include "distilforge/train.hpp"

using namespace distilforge;

static LogitFn uniform_logits(int vocab) {
  return [vocab](std::span<const int32_t> toks) {
    return Tensor::zeros({static_cast<int>(toks.size()), vocab});
  };
}

TEST_CASE("perplexity of a uniform predictor equals the vocabulary size") {
  Dataset lm = gen_cloze_task(1, 60, 1);
  const int v = static_cast<int>(lm.vocab.size());
  CHECK(perplexity_fn(uniform_logits(v), lm) == doctest::Approx(static_cast<double>(v)).epsilon(1e-9));

  // two-symbol source: uniform model converges to perplexity 2
  Dataset two;
  two.task_kind = TaskKind::lm;
  two.vocab = {"a", "b"};
  two.examples.push_back({{0, 1, 0, 1}, {1, 0, 1, 0}});
  two.examples.push_back({{1, 1, 0, 0}, {1, 0, 0, 1}});
  two.rehash();
  CHECK(perplexity_fn(uniform_logits(2), two) == doctest::Approx(2.0).epsilon(1e-9));

  Dataset empty = two;
  empty.examples.clear();
  empty.rehash();
  CHECK_THROWS_AS(perplexity_fn(uniform_logits(2), empty), EvalError);
}

TEST_CASE("perplexity equals exp of independently measured cross-entropy") {
  Dataset ds = gen_cloze_task(2, 40, 1);
  ModelConfig mc{static_cast<int>(ds.vocab.size()), 12, 1, 2, 16, 32, 8};
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  auto [model, log] = train_teacher(mc, tc, ds);

  // independent route: mean CE over examples via the loss op, example by example
  double nll = 0.0;
  int64_t count = 0;
  for (const auto& e : ds.examples) {
    Tensor logits = forward(model, e.input);
    const double ce = cross_entropy(nullptr, logits, e.target).item();
    nll += ce * static_cast<double>(e.target.size());
    count += static_cast<int64_t>(e.target.size());
  }
  const double expect = std::exp(nll / static_cast<double>(count));
  CHECK(perplexity(model, ds) == doctest::Approx(expect).epsilon(1e-10));
  CHECK(perplexity(model, ds) >= 1.0);
}

TEST_CASE("completion accuracy against grammar oracle and uniform floor") {
  Dataset ds = gen_cloze_task(5, 1200, 1);
  const int v = static_cast<int>(ds.vocab.size());
  const auto keys = ds.generator_params.at("keys");

  // oracle that reads the grammar table: emits the answer at every position
  LogitFn oracle = [&](std::span<const int32_t> toks) {
    Tensor out = Tensor::zeros({static_cast<int>(toks.size()), v});
    std::string text = ds.detokenize(std::vector<int32_t>(toks.begin(), toks.end()));
    const size_t cut = text.find_first_of(" >");
    const std::string key = text.substr(0, cut);
    const std::string ans = keys.at(key).get<std::string>();
    const int32_t id = ds.tokenize(ans)[0];
    for (int t = 0; t < static_cast<int>(toks.size()); ++t) out.data()[static_cast<size_t>(t) * v + id] = 10.0;
    return out;
  };
  CHECK(completion_accuracy_fn(oracle, ds) == 1.0);

  // a uniform predictor resolves ties toward token id 0 ('a'); its hit rate is
  // exactly the frequency of that answer among the targets
  int64_t zeros = 0;
  for (const auto& e : ds.examples) zeros += e.target.back() == 0 ? 1 : 0;
  const double expect = static_cast<double>(zeros) / static_cast<double>(ds.examples.size());
  const double got = completion_accuracy_fn(uniform_logits(v), ds);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));

  // chance-level bound on a task whose answers are i.i.d. uniform over the
  // vocabulary: accuracy stays within 3 binomial sigmas of 1/V
  Dataset flat;
  flat.task_kind = TaskKind::cloze;
  flat.vocab = ds.vocab;
  flat.generator_params = {{"answer_len", 1}};
  Rng rng(123);
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const auto key = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(v)));
    const auto ans = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(v)));
    flat.examples.push_back({{key, 1}, {1, ans}});
  }
  flat.rehash();
  const double p = 1.0 / static_cast<double>(v);
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  const double flat_acc = completion_accuracy_fn(uniform_logits(v), flat);
  CHECK(std::abs(flat_acc - p) < 3.0 * sigma + 1e-12);

  // determinism
  CHECK(completion_accuracy_fn(uniform_logits(v), ds) == got);
}

TEST_CASE("qa exact match: table oracle reaches 1.0, a broken model 0.0") {
  Dataset ds = gen_qa_task(3, 200);
  const int v = static_cast<int>(ds.vocab.size());
  const auto facts = ds.generator_params.at("facts");

  LogitFn oracle = [&](std::span<const int32_t> toks) {
    Tensor out = Tensor::zeros({static_cast<int>(toks.size()), v});
    const std::string text = ds.detokenize(std::vector<int32_t>(toks.begin(), toks.end()));
    const size_t qmark = text.find('?');
    REQUIRE(qmark != std::string::npos);
    const std::string key = text.substr(qmark - 2, 2);
    const std::string answer = facts.at(key).get<std::string>();
    const size_t emitted = text.size() - (qmark + 1);
    REQUIRE(emitted < answer.size());
    const int32_t id = ds.tokenize(answer.substr(emitted, 1))[0];
    out.data()[(toks.size() - 1) * static_cast<size_t>(v) + static_cast<size_t>(id)] = 10.0;
    return out;
  };
  CHECK(qa_exact_match_fn(oracle, ds) == 1.0);

  // always emits ';', never a letter: exact match 0
  LogitFn wrong = [&](std::span<const int32_t> toks) {
    Tensor out = Tensor::zeros({static_cast<int>(toks.size()), v});
    const int32_t id = ds.tokenize(";")[0];
    out.data()[(toks.size() - 1) * static_cast<size_t>(v) + static_cast<size_t>(id)] = 5.0;
    return out;
  };
  CHECK(qa_exact_match_fn(wrong, ds) == 0.0);

  // invariance under example order permutation
  Dataset shuffled = ds;
  std::reverse(shuffled.examples.begin(), shuffled.examples.end());
  shuffled.rehash();
  CHECK(qa_exact_match_fn(oracle, shuffled) == 1.0);
}

TEST_CASE("evaluation does not mutate model parameters") {
  Dataset cloze = gen_cloze_task(4, 30, 1);
  Dataset qa = gen_qa_task(4, 10);
  ModelConfig mc{static_cast<int>(cloze.vocab.size()), 24, 1, 2, 16, 32, 12};
  Model m = init_model(mc);
  const Hash32 before = model_content_hash(m);
  perplexity(m, cloze);
  completion_accuracy(m, cloze);
  ModelConfig qc{static_cast<int>(qa.vocab.size()), 24, 1, 2, 16, 32, 12};
  Model mq = init_model(qc);
  qa_exact_match(mq, qa);
  CHECK(model_content_hash(m) == before);
}

TEST_CASE("suite shape, determinism, and error rows") {
  Dataset cloze = gen_cloze_task(6, 24, 1);
  Dataset qa = gen_qa_task(6, 8);
  ModelConfig big{static_cast<int>(cloze.vocab.size()), 24, 2, 2, 16, 32, 1};
  ModelConfig small{static_cast<int>(cloze.vocab.size()), 24, 1, 1, 8, 16, 2};
  Model a = init_model(big);
  Model b = init_model(small);

  const LabeledModel models[] = {{"teacher", &a}, {"student", &b}};
  const LabeledDataset datasets[] = {{"cloze", &cloze}, {"qa", &qa}};
  EvalReport r = evaluate_suite(models, datasets);

  // 2 models x (cloze: acc+ppl, qa: exact_match) = 6 rows
  REQUIRE(r.rows.size() == 6);
  CHECK(r.rows[0].model == "teacher");
  CHECK(r.rows[0].task == "cloze");
  CHECK(r.rows[0].metric == "acc");
  CHECK(r.rows[1].metric == "ppl");
  CHECK(r.rows[2].metric == "exact_match");
  CHECK(r.rows[3].model == "student");
  for (const auto& row : r.rows) {
    CHECK(row.error.empty());
    if (row.metric == "ppl") CHECK(row.value >= 1.0);
    if (row.metric != "ppl") {
      CHECK(row.value >= 0.0);
      CHECK(row.value <= 1.0);
    }
  }

  // rerun: identical except the timestamp
  EvalReport r2 = evaluate_suite(models, datasets);
  auto strip = [](nlohmann::json j) {
    j["metadata"].erase("timestamp");
    return j.dump();
  };
  CHECK(strip(r.to_json()) == strip(r2.to_json()));
  // csv first line is the exact contract
  CHECK(r.csv().substr(0, r.csv().find('\n')) == "model,n_params,task,metric,value");

  // vocab-incompatible model produces error rows, not an abort
  ModelConfig wrong_vocab{5, 24, 1, 1, 8, 16, 3};
  Model c = init_model(wrong_vocab);
  const LabeledModel mixed[] = {{"mismatched", &c}, {"teacher", &a}};
  EvalReport er = evaluate_suite(mixed, datasets);
  REQUIRE(er.rows.size() == 6);
  for (int i = 0; i < 3; ++i) {
    CHECK(!er.rows[static_cast<size_t>(i)].error.empty());
    CHECK(std::isnan(er.rows[static_cast<size_t>(i)].value));
  }
  for (int i = 3; i < 6; ++i) CHECK(er.rows[static_cast<size_t>(i)].error.empty());
}

TEST_CASE("report json round trip with integrity") {
  Dataset cloze = gen_cloze_task(6, 10, 0);
  ModelConfig mc{static_cast<int>(cloze.vocab.size()), 8, 1, 1, 8, 16, 1};
  Model m = init_model(mc);
  const LabeledModel models[] = {{"m", &m}};
  const LabeledDataset datasets[] = {{"cloze", &cloze}};
  EvalReport r = evaluate_suite(models, datasets);

  nlohmann::json j = r.to_json();
  EvalReport back = EvalReport::from_json(j);
  CHECK(back.rows.size() == r.rows.size());
  CHECK(back.rows[0].value == r.rows[0].value);

  // tampering with a value breaks the rows hash
  j["rows"][0]["value"] = 0.123;
  CHECK_THROWS_AS(EvalReport::from_json(j), IntegrityError);

  // unknown schema versions are named, not guessed
  nlohmann::json future = r.to_json();
  future["schema_version"] = 2;
  CHECK_THROWS_AS(EvalReport::from_json(future), FormatError);
}

TEST_CASE("value formatting round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 2.0, 13.53, 1e-12, 123456.789}) {
    CHECK(std::strtod(format_value(v).c_str(), nullptr) == v);
  }
  CHECK(format_value(std::numeric_limits<double>::quiet_NaN()) == "nan");
}
