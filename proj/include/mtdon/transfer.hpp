#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>

#include <json.hpp>

#include "mtdon/container.hpp"
#include "mtdon/operator_net.hpp"

namespace mtdon {

nlohmann::json arch_to_json(const OperatorArch& arch);
OperatorArch arch_from_json(const nlohmann::json& j);

struct Checkpoint {
  OperatorModel model;
  NormStats branch_norm;
  NormStats target_norm;
  std::optional<AdamState> adam;
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir,
                     const std::vector<std::pair<std::string, std::string>>& attachments = {});
/// Throws on a malformed manifest, a missing or truncated array, or parameter
/// shapes that disagree with the stored architecture.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Copies every parameter of `src` into `dst`; names and shapes must agree.
void assign_parameters(OperatorModel& dst, const ParamRegistry& src);

enum class FreezeVariant { A, B, None };

std::string to_string(FreezeVariant v);
FreezeVariant freeze_variant_from_string(const std::string& s);

/// Trainable set for fine-tuning a CNN-branch model.
/// A: branch.conv0, branch.dense*, trunk.out. B: A plus the last trunk hidden
/// layer. None: nothing.
struct FreezePlan {
  FreezeVariant variant = FreezeVariant::None;
  std::set<std::string> trainable;
};

FreezePlan freeze_plan(const OperatorModel& model, FreezeVariant variant);
void apply_plan(OperatorModel& model, const FreezePlan& plan);

struct FinetuneConfig {
  TrainConfig train;
  FreezeVariant variant = FreezeVariant::A;
  bool carry_optimizer = false;
};

struct FinetuneResult {
  OperatorModel model;
  History history;
  AdamState adam;
};

/// Loads the source parameters, applies the plan and trains on `train_rows`
/// of the target dataset (all of its train split when empty), using the
/// source normalization.
FinetuneResult finetune(const Checkpoint& source, const Dataset& target, const FinetuneConfig& cfg,
                        std::span<const std::size_t> train_rows = {});

/// `count` train-split rows of `d`, drawn without replacement.
std::vector<std::size_t> sample_train_subset(const Dataset& d, std::size_t count, std::uint64_t seed);

}  // namespace mtdon
