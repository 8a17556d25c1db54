#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stacklab/checkpoint.hpp"
#include "stacklab/config.hpp"
#include "stacklab/corpus_gen.hpp"
#include "stacklab/trainer.hpp"
#include "support/test_util.hpp"

using namespace stacklab;
using testutil::TempDir;
using testutil::tiny_config;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

PrimitiveExample literal_example(const std::string& prompt, const std::string& target) {
  PrimitiveExample ex;
  ex.prompt = prompt;
  ex.target = target;
  return ex;
}

TrainConfig tiny_train_config(const std::string& corpus, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.model = tiny_config(/*layers=*/4, /*d=*/16, /*heads=*/2, /*ff=*/32, /*seq=*/48);
  cfg.model.vocab_size = kByteVocab;
  cfg.growth.kind = GrowthKind::midas;
  cfg.growth.block_size = 1;
  cfg.alpha = 1.0;
  cfg.total_steps = 30;
  cfg.eval_every = 10;
  cfg.batch_size = 2;
  cfg.val_batches = 2;
  cfg.corpus_path = corpus;
  cfg.out_dir = out_dir;
  cfg.run_name = "tiny";
  cfg.init_seed = 5;
  cfg.data_seed = 1;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("corpus parsing splits on blank lines") {
  const Corpus c = corpus_from_text("alpha\n\nbeta gamma\ndelta\n\n\nepsilon\n");
  REQUIRE(c.docs.size() == 3);
  CHECK(c.docs[0] == "alpha");
  CHECK(c.docs[1] == "beta gamma\ndelta");
  CHECK(c.docs[2] == "epsilon");
  CHECK_THROWS_AS(corpus_from_text("\n\n\n"), Error);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt"), IoError);
}

TEST_CASE("validation split holds out every 50th document") {
  Corpus c;
  for (int i = 0; i < 120; ++i) c.docs.push_back("doc" + std::to_string(i));
  const CorpusSplit split = split_validation(c);
  REQUIRE(split.val.size() == 2);
  CHECK(split.val[0] == "doc49");
  CHECK(split.val[1] == "doc99");
  CHECK(split.train.size() == 118);
  CHECK(split.train[0] == "doc0");
  CHECK(split.train[49] == "doc50");  // doc49 skipped
}

TEST_CASE("token stream packs shifted rows") {
  // One document, so the shuffle is the identity: tokens = bytes + SEP.
  const std::vector<std::string> docs{"abcdefgh"};
  TokenStream stream(docs, /*seed=*/123, /*seq_len=*/4, /*batch_size=*/1);
  CHECK(stream.token_count() == 9);
  CHECK(stream.rows_per_epoch() == 2);  // (9 - 1) / 4

  Batch b0 = stream.next_batch();
  REQUIRE(b0.batch == 1);
  REQUIRE(b0.seq == 4);
  CHECK(b0.x == std::vector<int32_t>{'a', 'b', 'c', 'd'});
  CHECK(b0.y == std::vector<int32_t>{'b', 'c', 'd', 'e'});
  CHECK(b0.mask == std::vector<float>(4, 1.0f));

  Batch b1 = stream.next_batch();
  CHECK(b1.x == std::vector<int32_t>{'e', 'f', 'g', 'h'});
  CHECK(b1.y == std::vector<int32_t>{'f', 'g', 'h', kSepToken});

  CHECK(stream.epoch() == 1);
  Batch b2 = stream.next_batch();  // wraps around and replays row 0
  CHECK(b2.x == b0.x);
  CHECK(b2.y == b0.y);

  stream.seek(1);
  CHECK(stream.next_batch().x == b1.x);
}

TEST_CASE("token stream shuffle is seeded") {
  std::vector<std::string> docs;
  for (int i = 0; i < 64; ++i) docs.push_back("document number " + std::to_string(i) + " text");
  TokenStream a(docs, 7, 16, 2);
  TokenStream b(docs, 7, 16, 2);
  TokenStream c(docs, 8, 16, 2);
  CHECK(a.token_count() == c.token_count());  // same bytes, different order
  const Batch ba = a.next_batch();
  CHECK(ba.x == b.next_batch().x);
  CHECK(ba.x != c.next_batch().x);
}

TEST_CASE("token stream rejects undersized input") {
  CHECK_THROWS_AS(TokenStream({}, 0, 8, 1), Error);
  CHECK_THROWS_AS(TokenStream({"ab"}, 0, 8, 1), Error);  // 3 tokens < 8 + 1
  CHECK_THROWS_AS(TokenStream({"abcdef"}, 0, 0, 1), Error);
  CHECK_THROWS_AS(make_validation_batches({}, 8, 1, 1), Error);
}

TEST_CASE("validation batches are frozen") {
  const std::vector<std::string> docs{"the quick brown fox jumps over the lazy dog"};
  const std::vector<Batch> a = make_validation_batches(docs, 8, 2, 2);
  const std::vector<Batch> b = make_validation_batches(docs, 8, 2, 2);
  REQUIRE(a.size() == 2);
  CHECK(a[0].x == b[0].x);
  CHECK(a[1].y == b[1].y);
}

TEST_CASE("finetune batch layout") {
  // row0 = "ab" + "c" + STOP = [97,98,99,10]; row1 = "q" + "xy" + STOP.
  const std::vector<PrimitiveExample> exs{literal_example("ab", "c"),
                                          literal_example("q", "xy")};
  ModelConfig cfg = tiny_config();
  const Batch b = build_finetune_batch(exs, cfg);
  REQUIRE(b.batch == 2);
  REQUIRE(b.seq == 3);  // longest row has 4 tokens
  CHECK(b.x == std::vector<int32_t>{'a', 'b', 'c', 'q', 'x', 'y'});
  CHECK(b.y == std::vector<int32_t>{'b', 'c', kStopToken, 'x', 'y', kStopToken});
  // Loss covers target tokens and the stop; prompt-internal transitions are off.
  CHECK(b.mask == std::vector<float>{0.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f});
}

TEST_CASE("finetune batch pads ragged rows") {
  const std::vector<PrimitiveExample> exs{literal_example("abc", "def"),
                                          literal_example("x", "y")};
  const Batch b = build_finetune_batch(exs, tiny_config());
  REQUIRE(b.seq == 6);  // "abcdef" + STOP = 7 tokens
  // row1 inputs are [x, y] then PAD: the stop only ever appears as a target.
  CHECK(b.x[6 + 0] == 'x');
  CHECK(b.x[6 + 1] == 'y');
  CHECK(b.x[6 + 2] == kPadToken);
  CHECK(b.x[6 + 3] == kPadToken);
  CHECK(b.y[6 + 1] == kStopToken);
  CHECK(b.y[6 + 2] == kPadToken);
  CHECK(b.mask[6 + 0] == 1.0f);
  CHECK(b.mask[6 + 1] == 1.0f);
  CHECK(b.mask[6 + 2] == 0.0f);
}

TEST_CASE("finetune batch validation") {
  CHECK_THROWS_AS(build_finetune_batch({}, tiny_config()), Error);
  ModelConfig small = tiny_config();
  small.seq_len = 4;
  CHECK_THROWS_AS(build_finetune_batch({literal_example("abc", "de")}, small), Error);
}

TEST_CASE("finetune with zero lr is a no-op on the weights") {
  ModelConfig cfg = tiny_config(2, 16, 2, 32, 16);
  cfg.vocab_size = kByteVocab;
  TransformerParams params = init_params(cfg, 11);
  const TransformerParams before = params;
  int hook_calls = 0;
  finetune(params, {literal_example("2+3=", "5")}, 4, 0.0f,
           [&](int t, const TransformerParams&) { hook_calls = t; });
  CHECK(hook_calls == 4);
  for (size_t i = 0; i < params.store.size(); ++i) {
    const Tensor& a = params.store.at(i);
    const Tensor& b = before.store.at(i);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0);
  }
}

TEST_CASE("finetune reduces the masked loss") {
  ModelConfig cfg = tiny_config(2, 16, 2, 32, 16);
  cfg.vocab_size = kByteVocab;
  TransformerParams params = init_params(cfg, 3);
  const std::vector<PrimitiveExample> data{literal_example("2+3=", "5"),
                                           literal_example("4+4=", "8")};
  const Batch batch = build_finetune_batch(data, cfg);
  const double before = lm_loss(params, batch);
  finetune(params, data, 20, 0.01f);
  CHECK(lm_loss(params, batch) < before);
  CHECK_THROWS_AS(finetune(params, data, -1, 0.01f), Error);
  CHECK_THROWS_AS(finetune(params, data, 1, -0.5f), Error);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = tiny_train_config("corpus.txt", "out");
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eval_every = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.corpus_path.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.out_dir.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr_floor = 2.0f;  // floor above peak
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.total_steps = 3;  // PropSch rounds stage 1 to zero
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stage transition grows the model and carries the optimizer") {
  ModelConfig cfg = tiny_config(2);
  TrainState state;
  state.params = init_params(cfg, 9);
  state.adam = make_adam_state(state.params.store);
  state.adam.step = 12;
  state.adam.m.at("layer01.mlp.w1").fill(2.5f);

  GrowthOp op;
  op.kind = GrowthKind::gradual;
  SUBCASE("moments remap through the layer map") {
    stage_transition(state, op, /*reset_moments=*/false);
    CHECK(state.stage == 2);
    CHECK(state.params.config.n_layers == 3);
    CHECK(state.adam.step == 12);
    CHECK(state.adam.m.at("layer02.mlp.w1").at(0) == 2.5f);  // copy of layer01
  }
  SUBCASE("reset zeroes the moments but keeps the step") {
    stage_transition(state, op, /*reset_moments=*/true);
    CHECK(state.adam.step == 12);
    CHECK(state.adam.m.at("layer01.mlp.w1").at(0) == 0.0f);
    CHECK(state.adam.m.size() == state.params.store.size());
  }
}

TEST_CASE("pretrain writes the full artifact set") {
  TempDir td("pretrain");
  const std::string corpus = td.file("corpus.txt");
  write_demo_corpus(corpus, /*seed=*/7, /*min_bytes=*/40000);

  TrainConfig cfg = tiny_train_config(corpus, td.file("run"));
  EvalTaskSpec task;
  task.name = "arithmetic_d0_k1";
  task.task = Task::arithmetic;
  task.k_shot = 1;
  task.n_examples = 8;
  task.seed = 42;
  cfg.eval_tasks.push_back(task);

  const PretrainResult res = pretrain(cfg);

  // PropSch(30, 4 stages, alpha=1) = [3, 6, 9, 12] at depths [1, 2, 3, 4].
  CHECK(res.plan.depths == std::vector<int>{1, 2, 3, 4});
  CHECK(res.plan.steps == std::vector<int64_t>{3, 6, 9, 12});
  CHECK(res.executed_layer_steps == 90);
  CHECK(res.executed_layer_steps == simulate_plan_cost(res.plan));
  REQUIRE(res.stage_checkpoints.size() == 3);

  const std::vector<std::string> rows = lines_of(read_file(res.metrics_path));
  REQUIRE(rows.size() == 4);  // header + records at t = 10, 20, 30
  CHECK(rows[0] == "step,stage,depth,tokens,lr,train_loss,val_loss,arithmetic_d0_k1");
  CHECK(rows[1].substr(0, 10) == "10,3,3,960");  // 10 steps * 2 rows * 48 tokens
  CHECK(rows[2].substr(0, 11) == "20,4,4,1920");
  CHECK(rows[3].substr(0, 11) == "30,4,4,2880");

  const nlohmann::json manifest = nlohmann::json::parse(read_file(res.manifest_path));
  CHECK(manifest.at("status") == "done");
  CHECK(manifest.at("run_name") == "tiny");
  CHECK(manifest.at("plan").at("predicted_layer_steps") == 90);
  CHECK(manifest.at("executed_layer_steps") == 90);
  CHECK(manifest.at("corpus").at("val_docs").get<int>() >= 1);
  REQUIRE(manifest.at("growth_checks").size() == 3);
  for (const auto& check : manifest.at("growth_checks")) {
    // duplicated blocks are bitwise copies, so the cosine is exactly 1
    CHECK(check.at("pair_cosine").get<double>() == 1.0);
  }

  // Stage checkpoints hold the post-growth initializations at the right depth.
  const TransformerParams stage2 = load_checkpoint(res.stage_checkpoints[0]);
  CHECK(stage2.config.n_layers == 2);
  const TransformerParams final_params = load_checkpoint(res.final_checkpoint);
  CHECK(final_params.config.n_layers == 4);
  const AdamState adam = load_optimizer(res.optimizer_path, final_params);
  CHECK(adam.step == 30);

  CHECK(read_file(td.file("run/similarity_block_cosine.csv")).substr(0, 1) == "#");
  CHECK(read_file(td.file("run/similarity_mlp_iou.csv")).find("mlp_topk_iou") !=
        std::string::npos);
}

TEST_CASE("pretrain is deterministic") {
  TempDir td("determinism");
  const std::string corpus = td.file("corpus.txt");
  write_demo_corpus(corpus, /*seed=*/7, /*min_bytes=*/40000);

  TrainConfig cfg = tiny_train_config(corpus, td.file("a"));
  cfg.emit_similarity = false;
  const PretrainResult a = pretrain(cfg);
  cfg.out_dir = td.file("b");
  const PretrainResult b = pretrain(cfg);

  CHECK(read_file(a.metrics_path) == read_file(b.metrics_path));
  CHECK(read_file(a.final_checkpoint) == read_file(b.final_checkpoint));
}

TEST_CASE("pretrain aborts cleanly when the numerics blow up") {
  TempDir td("abort");
  const std::string corpus = td.file("corpus.txt");
  write_demo_corpus(corpus, /*seed=*/7, /*min_bytes=*/40000);

  TrainConfig cfg = tiny_train_config(corpus, td.file("run"));
  cfg.growth.kind = GrowthKind::baseline;
  cfg.total_steps = 10;
  cfg.eval_every = 5;
  cfg.eval_tasks.clear();
  cfg.lr_kind = LrKind::constant;
  cfg.lr_peak = 1e18f;  // first update throws the weights to +/- 1e18

  bool threw = false;
  try {
    pretrain(cfg);
  } catch (const Error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("training aborted at step") != std::string::npos);
    CHECK(msg.find("last good checkpoint: none") != std::string::npos);
  }
  CHECK(threw);
  const nlohmann::json manifest = nlohmann::json::parse(read_file(td.file("run/manifest.json")));
  CHECK(manifest.at("status") == "aborted");
  CHECK(manifest.at("abort_step").get<int>() >= 1);
}

TEST_CASE("ini parser") {
  const IniFile ini = parse_ini("# comment\n[alpha]\nkey = value\nn = 3\n\n; note\n[beta_2]\n");
  REQUIRE(ini.sections.size() == 2);
  CHECK(ini.sections[0].name == "alpha");
  REQUIRE(ini.sections[0].entries.size() == 2);
  CHECK(ini.sections[0].entries[0].key == "key");
  CHECK(ini.sections[0].entries[0].value == "value");
  CHECK(ini.sections[0].entries[1].line == 4);
  CHECK(ini.sections[1].entries.empty());

  CHECK_THROWS_AS(parse_ini("key = 1\n"), ConfigError);              // entry before any section
  CHECK_THROWS_AS(parse_ini("[a]\nkey = 1\nkey = 2\n"), ConfigError);  // duplicate key
  CHECK_THROWS_AS(parse_ini("[a]\n[a]\n"), ConfigError);             // duplicate section
  CHECK_THROWS_AS(parse_ini("[a]\nnot-an-entry\n"), ConfigError);
  CHECK_THROWS_AS(parse_ini("[a]\nkey =\n"), ConfigError);           // empty value
  try {
    parse_ini("[a]\n???\n");
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("train config from ini uses defaults and rejects unknowns") {
  const std::string base =
      "[model]\nn_layers = 4\nd_model = 16\nn_heads = 2\nd_ff = 32\nseq_len = 48\n"
      "[schedule]\ntotal_steps = 30\nalpha = 1\n"
      "[data]\ncorpus = corpus.txt\nbatch_size = 2\n"
      "[run]\neval_every = 10\n";
  const TrainConfig cfg = train_config_from_ini(parse_ini(base));
  CHECK(cfg.model.vocab_size == kByteVocab);
  CHECK(cfg.growth.kind == GrowthKind::baseline);
  CHECK(cfg.run_name == "run");
  CHECK(cfg.lr_kind == LrKind::cosine);
  CHECK(cfg.lr_peak == 0.01f);
  CHECK(cfg.val_batches == 8);
  CHECK(cfg.emit_similarity);

  try {
    train_config_from_ini(parse_ini(base + "typo_key = 1\n"));
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown key 'typo_key' in section [run]") !=
          std::string::npos);
  }
  try {
    train_config_from_ini(parse_ini(base + "[mystery]\nx = 1\n"));
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown section [mystery]") != std::string::npos);
  }
  CHECK_THROWS_AS(train_config_from_ini(parse_ini(
                      "[model]\nn_layers = 4\nd_model = 16\nn_heads = 2\nd_ff = 32\n"
                      "seq_len = 48\n[schedule]\ntotal_steps = 30\nalpha = 1\n"
                      "[data]\ncorpus = c.txt\nbatch_size = two\n[run]\neval_every = 10\n")),
                  ConfigError);  // bad integer
}

TEST_CASE("train config dump round-trips") {
  TrainConfig cfg = tiny_train_config("corpus.txt", "out");
  cfg.eval_tasks.push_back(parse_eval_task("psm:none:0:1:100:calc"));
  cfg.eval_tasks.push_back(parse_eval_task("copying:real_words:0:2:50"));
  const std::string dumped = dump_train_config(cfg);
  const TrainConfig back = train_config_from_ini(parse_ini(dumped));
  CHECK(dump_train_config(back) == dumped);
  CHECK(back.eval_tasks.size() == 2);
  CHECK(back.eval_tasks[0].calc_scoring);
}

TEST_CASE("eval task specs parse into stable names") {
  const EvalTaskSpec a = parse_eval_task("arithmetic:none:0:2:50");
  CHECK(a.name == "arithmetic_d0_k2");
  CHECK(a.task == Task::arithmetic);
  CHECK(a.variant == Variant::none);
  CHECK(a.k_shot == 2);
  CHECK(a.n_examples == 50);
  CHECK_FALSE(a.calc_scoring);
  CHECK(a.seed == fnv1a64(a.name.data(), a.name.size()));

  const EvalTaskSpec b = parse_eval_task("psm:none:0:1:100:calc");
  CHECK(b.name == "psm_d0_k1_calc");
  CHECK(b.calc_scoring);

  const EvalTaskSpec c = parse_eval_task("var_assign:code:2:5:100");
  CHECK(c.name == "var_assign_code_d2_k5");
  CHECK(c.depth == 2);

  CHECK_THROWS_AS(parse_eval_task("arithmetic:none:0:2"), ConfigError);
  CHECK_THROWS_AS(parse_eval_task("arithmetic:none:0:2:50:wat"), ConfigError);
  CHECK_THROWS_AS(parse_eval_task("juggling:none:0:2:50"), ConfigError);
}

TEST_SUITE_END();
