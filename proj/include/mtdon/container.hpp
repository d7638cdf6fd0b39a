#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdon/dataset.hpp"
#include "mtdon/tensor.hpp"

namespace mtdon {

enum class DType { F32, F64, U8, I32 };

std::string to_string(DType t);
DType dtype_from_string(const std::string& s);
std::size_t dtype_size(DType t);

/// One raw little-endian array.
struct ContainerArray {
  std::string name;
  Shape shape;
  DType dtype = DType::F64;
  std::vector<std::uint8_t> bytes;

  static ContainerArray from_values(std::string name, Shape shape, std::span<const double> values, DType dtype);
  static ContainerArray from_tensor(std::string name, const Tensor& t, DType dtype);
  static ContainerArray from_u8(std::string name, Shape shape, const std::vector<std::uint8_t>& values);
  static ContainerArray from_i32(std::string name, Shape shape, const std::vector<std::int32_t>& values);

  std::vector<double> values() const;
  Tensor tensor() const;
  std::vector<std::uint8_t> u8() const;
  std::vector<std::int32_t> i32() const;
};

/// Directory with manifest.json plus one binary file per array.
struct Container {
  std::string kind;  // "dataset" or "checkpoint"
  DType dtype = DType::F32;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ContainerArray> arrays;
  /// Extra files written verbatim next to the manifest (e.g. metrics.csv).
  std::vector<std::pair<std::string, std::string>> attachments;

  bool contains(const std::string& name) const;
  const ContainerArray& at(const std::string& name) const;
  void add(ContainerArray a);
};

/// Writes into a sibling temporary directory and renames it over `dir`.
void write_container(const Container& c, const std::filesystem::path& dir);
/// Validates the manifest and every array file length.
Container read_container(const std::filesystem::path& dir);

Container dataset_to_container(const Dataset& d, const nlohmann::json& generator = nlohmann::json::object());
Dataset dataset_from_container(const Container& c);

nlohmann::json norm_to_json(const NormStats& s);

}  // namespace mtdon
