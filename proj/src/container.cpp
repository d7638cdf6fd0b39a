#include "mtdon/container.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mtdon {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::string to_string(DType t) {
  switch (t) {
    case DType::F32:
      return "f32";
    case DType::F64:
      return "f64";
    case DType::U8:
      return "u8";
    case DType::I32:
      return "i32";
  }
  return "?";
}

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  if (s == "u8") return DType::U8;
  if (s == "i32") return DType::I32;
  throw std::invalid_argument("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
    case DType::I32:
      return 4;
    case DType::F64:
      return 8;
    case DType::U8:
      return 1;
  }
  return 0;
}

ContainerArray ContainerArray::from_values(std::string name, Shape shape, std::span<const double> values, DType dtype) {
  if (shape_size(shape) != values.size())
    throw ShapeError("array '" + name + "': shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  ContainerArray a{std::move(name), std::move(shape), dtype, {}};
  a.bytes.resize(values.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < values.size(); ++i) {
    switch (dtype) {
      case DType::F32: {
        const auto f = static_cast<float>(values[i]);
        std::memcpy(a.bytes.data() + 4 * i, &f, 4);
        break;
      }
      case DType::F64:
        std::memcpy(a.bytes.data() + 8 * i, &values[i], 8);
        break;
      case DType::U8:
        a.bytes[i] = static_cast<std::uint8_t>(values[i]);
        break;
      case DType::I32: {
        const auto v = static_cast<std::int32_t>(values[i]);
        std::memcpy(a.bytes.data() + 4 * i, &v, 4);
        break;
      }
    }
  }
  return a;
}

ContainerArray ContainerArray::from_tensor(std::string name, const Tensor& t, DType dtype) {
  return from_values(std::move(name), t.shape(), t.data(), dtype);
}

ContainerArray ContainerArray::from_u8(std::string name, Shape shape, const std::vector<std::uint8_t>& values) {
  if (shape_size(shape) != values.size()) throw ShapeError("array '" + name + "': shape/value count mismatch");
  return {std::move(name), std::move(shape), DType::U8, values};
}

ContainerArray ContainerArray::from_i32(std::string name, Shape shape, const std::vector<std::int32_t>& values) {
  if (shape_size(shape) != values.size()) throw ShapeError("array '" + name + "': shape/value count mismatch");
  ContainerArray a{std::move(name), std::move(shape), DType::I32, {}};
  a.bytes.resize(values.size() * 4);
  std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

std::vector<double> ContainerArray::values() const {
  const std::size_t n = bytes.size() / dtype_size(dtype);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::F32: {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        out[i] = f;
        break;
      }
      case DType::F64:
        std::memcpy(&out[i], bytes.data() + 8 * i, 8);
        break;
      case DType::U8:
        out[i] = bytes[i];
        break;
      case DType::I32: {
        std::int32_t v;
        std::memcpy(&v, bytes.data() + 4 * i, 4);
        out[i] = v;
        break;
      }
    }
  }
  return out;
}

Tensor ContainerArray::tensor() const { return Tensor(shape, values()); }

std::vector<std::uint8_t> ContainerArray::u8() const {
  if (dtype != DType::U8) throw std::invalid_argument("array '" + name + "' is " + to_string(dtype) + ", expected u8");
  return bytes;
}

std::vector<std::int32_t> ContainerArray::i32() const {
  if (dtype != DType::I32) throw std::invalid_argument("array '" + name + "' is " + to_string(dtype) + ", expected i32");
  std::vector<std::int32_t> out(bytes.size() / 4);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

bool Container::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

const ContainerArray& Container::at(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::out_of_range("container has no array '" + name + "'");
}

void Container::add(ContainerArray a) {
  if (contains(a.name)) throw std::invalid_argument("duplicate array name '" + a.name + "'");
  arrays.push_back(std::move(a));
}

namespace {

std::string file_name(std::size_t index, const std::string& name) {
  std::string clean;
  for (char ch : name) clean += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_';
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%03zu_", index);
  return prefix + clean + ".bin";
}

}  // namespace

void write_container(const Container& c, const fs::path& dir) {
  if (c.kind != "dataset" && c.kind != "checkpoint")
    throw std::invalid_argument("container kind must be 'dataset' or 'checkpoint'");
  const fs::path target = fs::absolute(dir);
  const fs::path parent = target.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::random_device rd;
  const fs::path tmp = parent / ("." + target.filename().string() + ".tmp-" + std::to_string(rd()));
  fs::create_directories(tmp);
  try {
    json manifest;
    manifest["schema_version"] = 1;
    manifest["kind"] = c.kind;
    manifest["dtype"] = to_string(c.dtype);
    manifest["byte_order"] = "little";
    manifest["arrays"] = json::array();
    for (std::size_t i = 0; i < c.arrays.size(); ++i) {
      const auto& a = c.arrays[i];
      if (a.bytes.size() != shape_size(a.shape) * dtype_size(a.dtype))
        throw std::logic_error("array '" + a.name + "' byte size does not match its shape");
      const std::string file = file_name(i, a.name);
      manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"file", file}, {"dtype", to_string(a.dtype)}});
      std::ofstream out(tmp / file, std::ios::binary);
      out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
      if (!out) throw std::runtime_error("failed writing " + (tmp / file).string());
    }
    for (const auto& [file, text] : c.attachments) {
      if (file == "manifest.json" || file.find('/') != std::string::npos)
        throw std::invalid_argument("invalid attachment name '" + file + "'");
      std::ofstream out(tmp / file, std::ios::binary);
      out << text;
      if (!out) throw std::runtime_error("failed writing " + (tmp / file).string());
    }
    manifest["meta"] = c.meta;
    std::ofstream m(tmp / "manifest.json", std::ios::binary);
    m << manifest.dump(2) << '\n';
    if (!m) throw std::runtime_error("failed writing manifest in " + tmp.string());
    m.close();
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

Container read_container(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  try {
    if (manifest.at("schema_version").get<int>() != 1)
      throw std::runtime_error("unsupported schema_version " + manifest.at("schema_version").dump() + " in " +
                               dir.string());
    if (manifest.at("byte_order").get<std::string>() != "little")
      throw std::runtime_error("unsupported byte_order in " + dir.string());
    Container c;
    c.kind = manifest.at("kind").get<std::string>();
    if (c.kind != "dataset" && c.kind != "checkpoint") throw std::runtime_error("unknown container kind '" + c.kind + "'");
    c.dtype = dtype_from_string(manifest.at("dtype").get<std::string>());
    c.meta = manifest.value("meta", json::object());
    for (const auto& e : manifest.at("arrays")) {
      ContainerArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      a.dtype = e.contains("dtype") ? dtype_from_string(e.at("dtype").get<std::string>()) : c.dtype;
      const fs::path file = dir / e.at("file").get<std::string>();
      const std::size_t want = shape_size(a.shape) * dtype_size(a.dtype);
      std::error_code ec;
      const auto have = fs::file_size(file, ec);
      if (ec) throw std::runtime_error("array '" + a.name + "': missing file " + file.string());
      if (have != want)
        throw std::runtime_error("array '" + a.name + "': file has " + std::to_string(have) + " bytes, expected " +
                                 std::to_string(want));
      a.bytes.resize(want);
      std::ifstream f(file, std::ios::binary);
      f.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(want));
      if (!f) throw std::runtime_error("array '" + a.name + "': short read from " + file.string());
      c.add(std::move(a));
    }
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest in " + dir.string() + ": " + e.what());
  }
}

json norm_to_json(const NormStats& s) { return s.kind == NormKind::Standardize ? "standardize" : "minmax"; }

namespace {

NormKind norm_kind_from_json(const json& j) {
  const auto s = j.get<std::string>();
  if (s == "standardize") return NormKind::Standardize;
  if (s == "minmax") return NormKind::MinMax;
  throw std::runtime_error("unknown normalization kind '" + s + "'");
}

}  // namespace

Container dataset_to_container(const Dataset& d, const json& generator) {
  d.validate();
  Container c;
  c.kind = "dataset";
  c.dtype = DType::F32;
  c.meta = {{"problem", to_string(d.kind)},
            {"grid", d.grid},
            {"task_names", d.task_names},
            {"branch_norm", norm_to_json(d.branch_norm)},
            {"target_norm", norm_to_json(d.target_norm)},
            {"generator", generator}};
  const std::size_t n = d.num_samples();
  c.add(ContainerArray::from_tensor("branch", d.branch, DType::F32));
  c.add(ContainerArray::from_tensor("trunk", d.trunk, DType::F32));
  c.add(ContainerArray::from_tensor("target", d.target, DType::F32));
  c.add(ContainerArray::from_tensor("params", d.params, DType::F32));
  c.add(ContainerArray::from_u8("split", {n}, d.split));
  c.add(ContainerArray::from_i32("task", {n}, d.task));
  if (d.has_masks()) {
    c.add(ContainerArray::from_u8("masks", {d.num_masks(), d.num_points()}, d.masks));
    c.add(ContainerArray::from_i32("mask_index", {n}, d.mask_index));
  }
  c.add(ContainerArray::from_values("norm/branch_a", {d.branch_norm.a.size()}, d.branch_norm.a, DType::F64));
  c.add(ContainerArray::from_values("norm/branch_b", {d.branch_norm.b.size()}, d.branch_norm.b, DType::F64));
  c.add(ContainerArray::from_values("norm/target_a", {d.target_norm.a.size()}, d.target_norm.a, DType::F64));
  c.add(ContainerArray::from_values("norm/target_b", {d.target_norm.b.size()}, d.target_norm.b, DType::F64));
  return c;
}

Dataset dataset_from_container(const Container& c) {
  if (c.kind != "dataset") throw std::runtime_error("container is a '" + c.kind + "', expected a dataset");
  Dataset d;
  try {
    d.kind = problem_kind_from_string(c.meta.at("problem").get<std::string>());
    d.grid = c.meta.at("grid").get<std::vector<std::size_t>>();
    d.task_names = c.meta.at("task_names").get<std::vector<std::string>>();
    d.branch_norm.kind = norm_kind_from_json(c.meta.at("branch_norm"));
    d.target_norm.kind = norm_kind_from_json(c.meta.at("target_norm"));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dataset manifest meta: ") + e.what());
  }
  d.branch = c.at("branch").tensor();
  d.trunk = c.at("trunk").tensor();
  d.target = c.at("target").tensor();
  d.params = c.at("params").tensor();
  d.split = c.at("split").u8();
  d.task = c.at("task").i32();
  if (c.contains("masks")) {
    d.masks = c.at("masks").u8();
    d.mask_index = c.at("mask_index").i32();
  }
  d.branch_norm.a = c.at("norm/branch_a").values();
  d.branch_norm.b = c.at("norm/branch_b").values();
  d.target_norm.a = c.at("norm/target_a").values();
  d.target_norm.b = c.at("norm/target_b").values();
  d.validate();
  validate(d.branch_norm);
  validate(d.target_norm);
  return d;
}

}  // namespace mtdon
