#include "mtdon/transfer.hpp"

#include <algorithm>
#include <stdexcept>

#include "mtdon/rng.hpp"

namespace mtdon {

using nlohmann::json;

namespace {

json act_json(const Activation& a) {
  json j = {{"name", to_string(a)}};
  if (a.kind == ActivationKind::LeakyReLU) j["slope"] = a.slope;
  return j;
}

Activation act_from(const json& j) { return activation_from_string(j.at("name"), j.value("slope", 0.01)); }

json mlp_json(const MlpConfig& m) {
  return {{"widths", m.widths},
          {"activation", act_json(m.activation)},
          {"linear_output", m.linear_output},
          {"dropout", m.dropout}};
}

MlpConfig mlp_from(const json& j) {
  MlpConfig m;
  m.widths = j.at("widths").get<std::vector<std::size_t>>();
  m.activation = act_from(j.at("activation"));
  m.linear_output = j.at("linear_output").get<bool>();
  m.dropout = j.at("dropout").get<double>();
  return m;
}

}  // namespace

json arch_to_json(const OperatorArch& a) {
  json j;
  if (a.branch_kind == BranchKind::Mlp) {
    j["branch"] = mlp_json(a.branch_mlp);
    j["branch"]["kind"] = "mlp";
  } else {
    const auto& c = a.branch_cnn;
    json acts = json::array();
    for (const auto& x : c.conv_activations) acts.push_back(act_json(x));
    j["branch"] = {{"kind", "cnn"},         {"in_channels", c.in_channels}, {"height", c.height},
                   {"width", c.width},      {"kernel", c.kernel},           {"filters", c.filters},
                   {"conv_activations", acts}, {"dense", c.dense},          {"dense_activation", act_json(c.dense_activation)},
                   {"dropout", c.dropout}};
  }
  j["trunk"] = mlp_json(a.trunk);
  j["masked"] = a.masked;
  j["encoding"] = a.encoding == GridEncoding::Concat ? "concat" : "product";
  return j;
}

OperatorArch arch_from_json(const json& j) {
  OperatorArch a;
  try {
    const auto& b = j.at("branch");
    const auto kind = b.at("kind").get<std::string>();
    if (kind == "mlp") {
      a.branch_kind = BranchKind::Mlp;
      a.branch_mlp = mlp_from(b);
    } else if (kind == "cnn") {
      a.branch_kind = BranchKind::Cnn;
      auto& c = a.branch_cnn;
      c.in_channels = b.at("in_channels");
      c.height = b.at("height");
      c.width = b.at("width");
      c.kernel = b.at("kernel");
      c.filters = b.at("filters").get<std::vector<std::size_t>>();
      c.conv_activations.clear();
      for (const auto& x : b.at("conv_activations")) c.conv_activations.push_back(act_from(x));
      c.dense = b.at("dense").get<std::vector<std::size_t>>();
      c.dense_activation = act_from(b.at("dense_activation"));
      c.dropout = b.at("dropout");
    } else {
      throw std::runtime_error("unknown branch kind '" + kind + "'");
    }
    a.trunk = mlp_from(j.at("trunk"));
    a.masked = j.at("masked").get<bool>();
    const auto enc = j.at("encoding").get<std::string>();
    if (enc != "concat" && enc != "product") throw std::runtime_error("unknown encoding '" + enc + "'");
    a.encoding = enc == "concat" ? GridEncoding::Concat : GridEncoding::Product;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("architecture descriptor: ") + e.what());
  }
  validate(a);
  return a;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir,
                     const std::vector<std::pair<std::string, std::string>>& attachments) {
  Container c;
  c.kind = "checkpoint";
  c.dtype = DType::F64;
  c.meta = {{"arch", arch_to_json(ck.model.arch)},
            {"seed", ck.seed},
            {"epoch", ck.epoch},
            {"branch_norm", norm_to_json(ck.branch_norm)},
            {"target_norm", norm_to_json(ck.target_norm)},
            {"frozen", json::array()}};
  for (const auto& name : ck.model.params.names())
    if (!ck.model.params.is_trainable(name)) c.meta["frozen"].push_back(name);
  for (const auto& [name, t] : ck.model.params.values()) c.add(ContainerArray::from_tensor("params/" + name, t, DType::F64));
  c.add(ContainerArray::from_values("norm/branch_a", {ck.branch_norm.a.size()}, ck.branch_norm.a, DType::F64));
  c.add(ContainerArray::from_values("norm/branch_b", {ck.branch_norm.b.size()}, ck.branch_norm.b, DType::F64));
  c.add(ContainerArray::from_values("norm/target_a", {ck.target_norm.a.size()}, ck.target_norm.a, DType::F64));
  c.add(ContainerArray::from_values("norm/target_b", {ck.target_norm.b.size()}, ck.target_norm.b, DType::F64));
  if (ck.adam) {
    const auto& s = *ck.adam;
    c.meta["adam"] = {{"t", s.t}, {"beta1", s.config.beta1}, {"beta2", s.config.beta2}, {"epsilon", s.config.epsilon}};
    for (const auto& [name, t] : s.m) c.add(ContainerArray::from_tensor("adam/m/" + name, t, DType::F64));
    for (const auto& [name, t] : s.v) c.add(ContainerArray::from_tensor("adam/v/" + name, t, DType::F64));
  }
  c.attachments = attachments;
  write_container(c, dir);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const Container c = read_container(dir);
  if (c.kind != "checkpoint") throw std::runtime_error(dir.string() + " holds a '" + c.kind + "', not a checkpoint");
  Checkpoint ck;
  try {
    const OperatorArch arch = arch_from_json(c.meta.at("arch"));
    ck.model = OperatorModel::create(arch, 0);
    ck.seed = c.meta.at("seed").get<std::uint64_t>();
    ck.epoch = c.meta.at("epoch").get<std::int64_t>();
    ck.branch_norm.kind = c.meta.at("branch_norm") == "minmax" ? NormKind::MinMax : NormKind::Standardize;
    ck.target_norm.kind = c.meta.at("target_norm") == "minmax" ? NormKind::MinMax : NormKind::Standardize;
    ParamRegistry stored;
    for (const auto& a : c.arrays)
      if (a.name.rfind("params/", 0) == 0) stored.add(a.name.substr(7), a.tensor());
    assign_parameters(ck.model, stored);
    std::set<std::string> frozen;
    for (const auto& n : c.meta.value("frozen", json::array())) frozen.insert(n.get<std::string>());
    ck.model.params.set_trainable(frozen, false);
    ck.branch_norm.a = c.at("norm/branch_a").values();
    ck.branch_norm.b = c.at("norm/branch_b").values();
    ck.target_norm.a = c.at("norm/target_a").values();
    ck.target_norm.b = c.at("norm/target_b").values();
    validate(ck.branch_norm);
    validate(ck.target_norm);
    if (c.meta.contains("adam")) {
      AdamState s;
      const auto& m = c.meta.at("adam");
      s.t = m.at("t");
      s.config = {m.at("beta1"), m.at("beta2"), m.at("epsilon")};
      for (const auto& a : c.arrays) {
        if (a.name.rfind("adam/m/", 0) == 0) s.m.emplace(a.name.substr(7), a.tensor());
        if (a.name.rfind("adam/v/", 0) == 0) s.v.emplace(a.name.substr(7), a.tensor());
      }
      ck.adam = std::move(s);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + dir.string() + ": " + e.what());
  }
  return ck;
}

void assign_parameters(OperatorModel& dst, const ParamRegistry& src) {
  for (const auto& name : dst.params.names())
    if (!src.contains(name)) throw std::invalid_argument("checkpoint lacks parameter '" + name + "'");
  for (const auto& [name, t] : src.values()) {
    if (!dst.params.contains(name)) throw std::invalid_argument("checkpoint has unknown parameter '" + name + "'");
    Tensor& d = dst.params.get(name);
    if (d.shape() != t.shape())
      throw ShapeError("parameter '" + name + "': checkpoint shape " + to_string(t.shape()) + " vs model shape " +
                       to_string(d.shape()));
    d = t;
  }
}

std::string to_string(FreezeVariant v) {
  switch (v) {
    case FreezeVariant::A:
      return "A";
    case FreezeVariant::B:
      return "B";
    case FreezeVariant::None:
      return "none";
  }
  return "?";
}

FreezeVariant freeze_variant_from_string(const std::string& s) {
  if (s == "A") return FreezeVariant::A;
  if (s == "B") return FreezeVariant::B;
  if (s == "none") return FreezeVariant::None;
  throw std::invalid_argument("unknown freeze variant '" + s + "' (expected A, B or none)");
}

FreezePlan freeze_plan(const OperatorModel& model, FreezeVariant variant) {
  FreezePlan plan{variant, {}};
  if (variant == FreezeVariant::None) return plan;
  if (model.arch.branch_kind != BranchKind::Cnn)
    throw std::invalid_argument("freeze variant " + to_string(variant) + " is defined only for CNN-branch models");
  auto add_layer = [&](const std::string& layer) {
    plan.trainable.insert(layer + ".W");
    plan.trainable.insert(layer + ".b");
  };
  add_layer("branch.conv0");
  for (std::size_t j = 0; j < model.arch.branch_cnn.dense.size(); ++j) add_layer("branch.dense" + std::to_string(j));
  add_layer("trunk.out");
  if (variant == FreezeVariant::B) {
    const std::size_t hidden = model.arch.trunk.widths.size() - 2;
    if (hidden == 0) throw std::invalid_argument("freeze variant B needs a trunk hidden layer");
    add_layer("trunk.h" + std::to_string(hidden - 1));
  }
  for (const auto& n : plan.trainable)
    if (!model.params.contains(n)) throw std::invalid_argument("freeze plan names unknown parameter '" + n + "'");
  return plan;
}

void apply_plan(OperatorModel& model, const FreezePlan& plan) {
  model.params.set_all_trainable(false);
  model.params.set_trainable(plan.trainable, true);
}

std::vector<std::size_t> sample_train_subset(const Dataset& d, std::size_t count, std::uint64_t seed) {
  auto rows = d.rows(Split::Train);
  if (count > rows.size())
    throw std::invalid_argument("requested " + std::to_string(count) + " fine-tuning samples, dataset has " +
                                std::to_string(rows.size()));
  auto rng = stream_engine(seed, fnv1a("subset"));
  portable_shuffle(rows.begin(), rows.end(), rng);
  rows.resize(count);
  std::sort(rows.begin(), rows.end());
  return rows;
}

FinetuneResult finetune(const Checkpoint& source, const Dataset& target, const FinetuneConfig& cfg,
                        std::span<const std::size_t> train_rows) {
  const OperatorArch& arch = source.model.arch;
  if (arch.branch_kind == BranchKind::Cnn) {
    if (target.branch.rank() != 4 || target.branch.dim(2) != arch.branch_cnn.height ||
        target.branch.dim(3) != arch.branch_cnn.width)
      throw std::invalid_argument("finetune: target branch " + to_string(target.branch.shape()) +
                                  " does not fit the source CNN input " + std::to_string(arch.branch_cnn.height) + "x" +
                                  std::to_string(arch.branch_cnn.width));
  } else if (target.branch.rank() != 2 || target.branch.dim(1) != arch.branch_mlp.widths.front()) {
    throw std::invalid_argument("finetune: target branch " + to_string(target.branch.shape()) +
                                " does not fit the source MLP input width " +
                                std::to_string(arch.branch_mlp.widths.front()));
  }
  if (target.trunk.rank() != 2 || target.trunk.dim(1) != arch.trunk.widths.front())
    throw std::invalid_argument("finetune: target trunk dimension does not match the source arch");

  FinetuneResult out{source.model, {}, {}};
  apply_plan(out.model, freeze_plan(out.model, cfg.variant));
  if (cfg.carry_optimizer && source.adam) out.adam = *source.adam;

  const PreparedData data = prepare(target, arch, source.branch_norm, source.target_norm);
  const std::span<const std::size_t> rows = train_rows.empty() ? std::span<const std::size_t>(data.train_rows) : train_rows;
  out.history = train(out.model, data, cfg.train, rows, data.test_rows, &out.adam);

  for (const auto& name : out.model.params.names())
    if (!out.model.params.is_trainable(name) && !(out.model.params.get(name) == source.model.params.get(name)))
      throw std::logic_error("finetune: frozen parameter '" + name + "' changed");
  return out;
}

}  // namespace mtdon
