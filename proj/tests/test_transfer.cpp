#include <doctest.h>

#include <fstream>
#include <sstream>

#include "mtdon/transfer.hpp"
#include "support.hpp"

using namespace mtdon;
using mtdon::testing::TempDir;
namespace fs = std::filesystem;

namespace {

OperatorArch small_cnn(std::size_t n, std::size_t p = 6) {
  OperatorArch a = darcy_arch(n, n, p);
  a.branch_cnn.filters = {4, 4};
  a.branch_cnn.conv_activations = {Activation::tanh(), Activation::relu()};
  a.branch_cnn.dense = {12, 10, p};
  a.trunk.widths = {2, 12, 10, p};
  return a;
}

Dataset small_darcy(std::vector<std::string> geoms, std::uint64_t seed) {
  DarcyGenConfig c;
  c.geometries = std::move(geoms);
  c.num_train = 12;
  c.num_test = 6;
  c.height = c.width = 17;
  return generate_darcy(c, seed);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

Checkpoint trained_source(const Dataset& d, std::int64_t epochs) {
  Checkpoint ck;
  ck.model = OperatorModel::create(small_cnn(17), 11);
  const PreparedData p = prepare(d, ck.model.arch);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.eval_every = epochs;
  AdamState s;
  train(ck.model, p, cfg, &s);
  ck.adam = s;
  ck.branch_norm = d.branch_norm;
  ck.target_norm = d.target_norm;
  ck.seed = 11;
  ck.epoch = epochs;
  return ck;
}

}  // namespace

TEST_CASE("dataset container round trip") {
  TempDir tmp("container");
  const Dataset d = small_darcy({"S1", "T1"}, 2);
  write_container(dataset_to_container(d, {{"seed", 2}}), tmp / "ds");
  const Container c = read_container(tmp / "ds");
  CHECK(c.kind == "dataset");
  CHECK(c.meta.at("generator").at("seed") == 2);
  CHECK(c.at("split").dtype == DType::U8);
  CHECK(c.at("task").dtype == DType::I32);
  CHECK(c.at("branch").dtype == DType::F32);
  const Dataset back = dataset_from_container(c);
  // generated values are f32-representable, so the round trip is exact
  CHECK(back.branch == d.branch);
  CHECK(back.trunk == d.trunk);
  CHECK(back.target == d.target);
  CHECK(back.masks == d.masks);
  CHECK(back.mask_index == d.mask_index);
  CHECK(back.split == d.split);
  CHECK(back.task == d.task);
  CHECK(back.task_names == d.task_names);
  CHECK(back.branch_norm.a == d.branch_norm.a);
  CHECK(back.target_norm.b == d.target_norm.b);

  // no temp directories left behind
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(tmp.path())) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);
}

TEST_CASE("container failure modes") {
  TempDir tmp("corrupt");
  Container c;
  c.kind = "dataset";
  c.add(ContainerArray::from_values("alpha", {4}, std::vector<double>{1, 2, 3, 4}, DType::F32));
  c.add(ContainerArray::from_values("beta", {2, 2}, std::vector<double>{1, 2, 3, 4}, DType::F64));
  CHECK_THROWS(c.add(ContainerArray::from_values("beta", {1}, std::vector<double>{1}, DType::F64)));
  CHECK_THROWS(ContainerArray::from_values("gamma", {3}, std::vector<double>{1, 2}, DType::F64));
  write_container(c, tmp / "c");
  CHECK(read_container(tmp / "c").at("beta").values() == std::vector<double>{1, 2, 3, 4});

  SUBCASE("truncated array names the array") {
    fs::path bin;
    for (const auto& e : fs::directory_iterator(tmp / "c"))
      if (e.path().filename().string().find("beta") != std::string::npos) bin = e.path();
    REQUIRE_FALSE(bin.empty());
    fs::resize_file(bin, 31);
    try {
      read_container(tmp / "c");
      FAIL("expected failure");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("'beta'") != std::string::npos);
    }
  }
  SUBCASE("missing array file") {
    for (const auto& e : fs::directory_iterator(tmp / "c"))
      if (e.path().filename().string().find("alpha") != std::string::npos) fs::remove(e.path());
    CHECK_THROWS_WITH(read_container(tmp / "c"), doctest::Contains("'alpha'"));
  }
  SUBCASE("corrupt manifest") {
    spit(tmp / "c" / "manifest.json", "{\"schema_version\": 1, ");
    CHECK_THROWS_WITH(read_container(tmp / "c"), doctest::Contains("corrupt manifest"));
  }
  SUBCASE("schema version") {
    auto text = slurp(tmp / "c" / "manifest.json");
    const auto at = text.find("\"schema_version\": 1");
    REQUIRE(at != std::string::npos);
    text.replace(at, 19, "\"schema_version\": 2");
    spit(tmp / "c" / "manifest.json", text);
    CHECK_THROWS_WITH(read_container(tmp / "c"), doctest::Contains("schema_version"));
  }
  SUBCASE("missing directory") { CHECK_THROWS(read_container(tmp / "nope")); }
  SUBCASE("overwrite replaces contents") {
    Container d;
    d.kind = "checkpoint";
    d.add(ContainerArray::from_i32("only", {1}, {7}));
    write_container(d, tmp / "c");
    const Container r = read_container(tmp / "c");
    CHECK(r.kind == "checkpoint");
    CHECK(r.arrays.size() == 1);
    CHECK(r.at("only").i32() == std::vector<std::int32_t>{7});
  }
  Container bad;
  bad.kind = "other";
  CHECK_THROWS(write_container(bad, tmp / "bad"));
  CHECK_FALSE(fs::exists(tmp / "bad"));
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp("ckpt");
  const Dataset d = small_darcy({"S1", "S2"}, 5);
  Checkpoint ck = trained_source(d, 3);
  ck.model.params.set_trainable({"trunk.out.W"}, false);
  save_checkpoint(ck, tmp / "ck", {{"metrics.csv", "epoch\n"}});
  CHECK(slurp(tmp / "ck" / "metrics.csv") == "epoch\n");
  const Checkpoint back = load_checkpoint(tmp / "ck");
  CHECK(back.model.params == ck.model.params);
  CHECK_FALSE(back.model.params.is_trainable("trunk.out.W"));
  CHECK(back.model.params.is_trainable("trunk.out.b"));
  CHECK(arch_to_json(back.model.arch) == arch_to_json(ck.model.arch));
  CHECK(back.epoch == 3);
  CHECK(back.seed == 11);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->t == ck.adam->t);
  CHECK(back.adam->m.at("branch.conv0.W") == ck.adam->m.at("branch.conv0.W"));
  CHECK(back.branch_norm.a == ck.branch_norm.a);

  const PreparedData p = prepare(d, ck.model.arch, ck.branch_norm, ck.target_norm);
  const auto rows = d.all_rows();
  CHECK(predict_physical(back.model, p, rows) == predict_physical(ck.model, p, rows));

  // shape disagreement is reported with the parameter name
  OperatorModel wide = OperatorModel::create(small_cnn(17, 8), 0);
  CHECK_THROWS_AS(assign_parameters(wide, back.model.params), ShapeError);
  OperatorModel mlp = OperatorModel::create(fisher_arch(68, 6), 0);
  CHECK_THROWS(assign_parameters(mlp, back.model.params));

  CHECK_THROWS(load_checkpoint(tmp / "missing"));
  write_container(dataset_to_container(d), tmp / "ds");
  CHECK_THROWS_WITH(load_checkpoint(tmp / "ds"), doctest::Contains("not a checkpoint"));
}

TEST_CASE("architecture json") {
  for (const OperatorArch& a : {fisher_arch(), darcy_arch(), heat_arch(), small_cnn(17)}) {
    const OperatorArch b = arch_from_json(arch_to_json(a));
    CHECK(arch_to_json(b) == arch_to_json(a));
    CHECK(b.latent() == a.latent());
    CHECK(b.masked == a.masked);
  }
  auto j = arch_to_json(darcy_arch());
  j["branch"]["kind"] = "rnn";
  CHECK_THROWS(arch_from_json(j));
}

TEST_CASE("freeze plans") {
  const OperatorModel m = OperatorModel::create(darcy_arch(), 0);
  const FreezePlan a = freeze_plan(m, FreezeVariant::A);
  CHECK(a.trainable.size() == 10);
  for (auto n : {"branch.conv0.W", "branch.conv0.b", "branch.dense0.W", "branch.dense2.b", "trunk.out.W"})
    CHECK(a.trainable.count(n) == 1);
  CHECK(a.trainable.count("branch.conv1.W") == 0);
  const FreezePlan b = freeze_plan(m, FreezeVariant::B);
  std::set<std::string> extra;
  std::set_difference(b.trainable.begin(), b.trainable.end(), a.trainable.begin(), a.trainable.end(),
                      std::inserter(extra, extra.end()));
  CHECK(extra == std::set<std::string>{"trunk.h1.W", "trunk.h1.b"});
  CHECK(std::includes(b.trainable.begin(), b.trainable.end(), a.trainable.begin(), a.trainable.end()));
  CHECK(freeze_plan(m, FreezeVariant::None).trainable.empty());

  const OperatorModel f = OperatorModel::create(fisher_arch(68, 6), 0);
  CHECK_THROWS(freeze_plan(f, FreezeVariant::A));
  CHECK(freeze_variant_from_string("B") == FreezeVariant::B);
  CHECK(freeze_variant_from_string("none") == FreezeVariant::None);
  CHECK_THROWS(freeze_variant_from_string("C"));

  OperatorModel applied = m;
  apply_plan(applied, a);
  CHECK(applied.params.trainable_names().size() == 10);
}

TEST_CASE("fine-tuning") {
  const Dataset src = small_darcy({"S1", "S2"}, 5);
  const Dataset tgt = small_darcy({"T1"}, 6);
  const Checkpoint ck = trained_source(src, 40);
  FinetuneConfig cfg;
  cfg.train.epochs = 15;
  cfg.train.eval_every = 5;

  SUBCASE("variant none leaves the model bit-identical") {
    cfg.variant = FreezeVariant::None;
    const FinetuneResult r = finetune(ck, tgt, cfg);
    CHECK(r.model.params.values() == ck.model.params.values());
    CHECK(r.model.params.trainable_names().empty());
    const PreparedData p = prepare(tgt, ck.model.arch, ck.branch_norm, ck.target_norm);
    const auto rows = tgt.all_rows();
    CHECK(predict_physical(r.model, p, rows) == predict_physical(ck.model, p, rows));
    CHECK(r.adam.t == 0);
  }
  SUBCASE("variant A touches only its tensors") {
    cfg.variant = FreezeVariant::A;
    const FinetuneResult r = finetune(ck, tgt, cfg);
    const FreezePlan plan = freeze_plan(ck.model, FreezeVariant::A);
    for (const auto& name : ck.model.params.names()) {
      CAPTURE(name);
      const bool same = r.model.params.get(name) == ck.model.params.get(name);
      CHECK(same == (plan.trainable.count(name) == 0));
    }
    CHECK(r.adam.t == 15);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
  }
  SUBCASE("variant B") {
    cfg.variant = FreezeVariant::B;
    const FinetuneResult r = finetune(ck, tgt, cfg);
    CHECK_FALSE(r.model.params.get("trunk.h1.W") == ck.model.params.get("trunk.h1.W"));
    CHECK(r.model.params.get("trunk.h0.W") == ck.model.params.get("trunk.h0.W"));
    CHECK(r.model.params.get("branch.conv1.W") == ck.model.params.get("branch.conv1.W"));
  }
  SUBCASE("fine-tuning on source data does not hurt") {
    cfg.variant = FreezeVariant::A;
    cfg.train.schedule = LrSchedule::constant(1e-4);
    const PreparedData p = prepare(src, ck.model.arch, ck.branch_norm, ck.target_norm);
    const double before = evaluate(ck.model, p, p.test_rows);
    const FinetuneResult r = finetune(ck, src, cfg);
    CHECK(evaluate(r.model, p, p.test_rows) <= 1.1 * before);
  }
  SUBCASE("subset rows and carried optimizer") {
    cfg.carry_optimizer = true;
    const auto rows = sample_train_subset(tgt, 4, 1);
    const FinetuneResult r = finetune(ck, tgt, cfg, rows);
    CHECK(r.adam.t == ck.adam->t + 15);
  }
  SUBCASE("incompatible targets") {
    DarcyGenConfig c;
    c.geometries = {"T1"};
    c.num_train = 2;
    c.num_test = 1;
    c.height = c.width = 21;
    CHECK_THROWS(finetune(ck, generate_darcy(c, 1), cfg));
    FisherGenConfig fc;
    fc.num_train = 4;
    fc.num_test = 1;
    CHECK_THROWS(finetune(ck, generate_fisher(fc, 1), cfg));
  }
}

TEST_CASE("fine-tuning subsets") {
  const Dataset d = small_darcy({"T1"}, 6);
  const auto a = sample_train_subset(d, 5, 3);
  CHECK(a.size() == 5);
  CHECK(a == sample_train_subset(d, 5, 3));
  CHECK_FALSE(a == sample_train_subset(d, 5, 4));
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 5);
  for (auto r : a) CHECK(d.split[r] == 0);
  CHECK(sample_train_subset(d, 12, 3) == d.rows(Split::Train));
  CHECK_THROWS(sample_train_subset(d, 13, 3));
}
