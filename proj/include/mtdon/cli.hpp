#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdon/dataset.hpp"
#include "mtdon/operator_net.hpp"
#include "mtdon/transfer.hpp"

namespace mtdon {

/// Raised for malformed configs; maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

nlohmann::json load_json(const std::filesystem::path& file);

FisherGenConfig parse_fisher_gen(const nlohmann::json& j);
DarcyGenConfig parse_darcy_gen(const nlohmann::json& j);
HeatGenConfig parse_heat_gen(const nlohmann::json& j);
/// "seed" of a config, 0 when absent.
std::uint64_t config_seed(const nlohmann::json& j);

/// Generates and returns the dataset for `kind` from its JSON config.
Dataset generate_from_config(ProblemKind kind, const nlohmann::json& j, std::uint64_t seed);

LrSchedule parse_schedule(const nlohmann::json& j, std::int64_t epochs);
/// Default architecture for the dataset, adjusted by an "arch" object.
OperatorArch arch_for(const Dataset& d, const nlohmann::json& overrides);

struct TrainRequest {
  OperatorArch arch;
  TrainConfig train;
};

TrainRequest parse_train_config(const nlohmann::json& j, const Dataset& d);

struct FinetuneRequest {
  FinetuneConfig finetune;
  std::size_t subset = 0;  // 0: whole target train split
};

FinetuneRequest parse_finetune_config(const nlohmann::json& j);

/// Header epoch,lr,train_loss,test_rel_l2 then one row per record, values
/// with 9 significant digits, LF line ends.
std::string metrics_csv(const History& h);
History parse_metrics_csv(const std::string& text);
void export_metrics_csv(const History& h, const std::filesystem::path& file);

/// Binary P5 with linear min-max scaling to 0..255; a constant field maps to 0.
std::string pgm_bytes(std::span<const double> field, std::size_t rows, std::size_t cols);
void export_field_pgm(std::span<const double> field, std::size_t rows, std::size_t cols,
                      const std::filesystem::path& file);

/// Subcommands gen, train, finetune, eval. Returns 0 on success, 2 on usage
/// errors, 1 on any other failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtdon
