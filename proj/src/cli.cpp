#include "mtdon/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mtdon/container.hpp"

namespace mtdon {

namespace fs = std::filesystem;
using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
}

json load_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + file.string() + ": " + e.what());
  }
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void read_counts(const json& j, std::size_t& train, std::size_t& test) {
  if (!j.contains("counts")) return;
  check_keys(j.at("counts"), {"train", "test"}, "counts");
  read(j.at("counts"), "train", train);
  read(j.at("counts"), "test", test);
}

void read_kernel(const json& j, SqExpKernel& k) {
  if (!j.contains("kernel")) return;
  check_keys(j.at("kernel"), {"length", "variance"}, "kernel");
  read(j.at("kernel"), "length", k.length);
  read(j.at("kernel"), "variance", k.variance);
}

void read_range(const json& j, const char* key, double& lo, double& hi, double& step) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(std::string(key) + ": expected [min, max, step]");
  lo = v[0];
  hi = v[1];
  step = v[2];
}

template <typename F>
auto guarded(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

std::uint64_t config_seed(const json& j) {
  return guarded("seed", [&] { return j.is_object() && j.contains("seed") ? j.at("seed").get<std::uint64_t>() : 0; });
}

FisherGenConfig parse_fisher_gen(const json& j) {
  check_keys(j, {"kind", "seed", "counts", "num_ics", "families", "nx", "nt", "kernel", "mean_offset", "mean_amplitude",
                 "trace_fraction", "a_grid", "b_grid"},
             "fisher config");
  return guarded("fisher config", [&] {
    FisherGenConfig c;
    read_counts(j, c.num_train, c.num_test);
    read(j, "num_ics", c.num_ics);
    if (j.contains("families")) {
      c.families.clear();
      for (const auto& f : j.at("families")) c.families.push_back(reaction_family_from_string(f.get<std::string>()));
    }
    read(j, "nx", c.nx);
    read(j, "nt", c.nt);
    read_kernel(j, c.kernel);
    read(j, "mean_offset", c.mean_offset);
    read(j, "mean_amplitude", c.mean_amplitude);
    read(j, "trace_fraction", c.trace_fraction);
    read_range(j, "a_grid", c.a_min, c.a_max, c.a_step);
    read_range(j, "b_grid", c.b_min, c.b_max, c.b_step);
    validate(c);
    return c;
  });
}

DarcyGenConfig parse_darcy_gen(const json& j) {
  check_keys(j, {"kind", "seed", "counts", "geometries", "grid", "kernel", "trace_fraction", "sign"}, "darcy config");
  return guarded("darcy config", [&] {
    DarcyGenConfig c;
    read_counts(j, c.num_train, c.num_test);
    read(j, "geometries", c.geometries);
    if (j.contains("grid")) {
      const auto g = j.at("grid").get<std::vector<std::size_t>>();
      if (g.size() != 2) throw ConfigError("darcy config: grid must be [H, W]");
      c.height = g[0];
      c.width = g[1];
    }
    read_kernel(j, c.kernel);
    read(j, "trace_fraction", c.trace_fraction);
    if (j.contains("sign")) {
      const auto s = j.at("sign").get<std::string>();
      if (s == "negative_divergence")
        c.sign = DarcySign::NegativeDivergence;
      else if (s == "as_written")
        c.sign = DarcySign::AsWritten;
      else
        throw ConfigError("darcy config: sign must be 'negative_divergence' or 'as_written'");
    }
    validate(c);
    return c;
  });
}

HeatGenConfig parse_heat_gen(const json& j) {
  check_keys(j, {"kind", "seed", "grid", "hole_radius", "protrusion_radius", "conductivity", "flux", "h_c", "u_inf",
                 "train_distances"},
             "heat config");
  return guarded("heat config", [&] {
    HeatGenConfig c;
    if (j.contains("grid")) {
      const auto g = j.at("grid").get<std::vector<std::size_t>>();
      if (g.size() != 3) throw ConfigError("heat config: grid must be [X, Y, Z]");
      c.grid.nx = g[0];
      c.grid.ny = g[1];
      c.grid.nz = g[2];
    }
    read(j, "hole_radius", c.hole_radius);
    read(j, "protrusion_radius", c.protrusion_radius);
    read(j, "conductivity", c.conductivity);
    read(j, "flux", c.flux);
    read(j, "h_c", c.h_c);
    read(j, "u_inf", c.u_inf);
    read(j, "train_distances", c.train_distances);
    validate(c);
    return c;
  });
}

Dataset generate_from_config(ProblemKind kind, const json& j, std::uint64_t seed) {
  if (j.contains("kind") && j.at("kind") != to_string(kind))
    throw ConfigError("config kind " + j.at("kind").dump() + " does not match '" + to_string(kind) + "'");
  switch (kind) {
    case ProblemKind::Fisher:
      return generate_fisher(parse_fisher_gen(j), seed);
    case ProblemKind::Darcy:
      return generate_darcy(parse_darcy_gen(j), seed);
    case ProblemKind::Heat:
      return generate_heat(parse_heat_gen(j));
  }
  throw ConfigError("unknown problem kind");
}

LrSchedule parse_schedule(const json& j, std::int64_t epochs) {
  return guarded("lr", [&]() -> LrSchedule {
    if (j.is_number()) return LrSchedule::constant(j.get<double>());
    const auto type = j.at("type").get<std::string>();
    if (type == "constant") {
      check_keys(j, {"type", "value"}, "lr");
      return LrSchedule::constant(j.at("value").get<double>());
    }
    if (type == "piecewise") {
      check_keys(j, {"type", "rates", "boundaries"}, "lr");
      return LrSchedule(PiecewiseConstant{j.at("rates").get<std::vector<double>>(),
                                          j.at("boundaries").get<std::vector<std::int64_t>>()});
    }
    if (type == "equal_segments") {
      check_keys(j, {"type", "rates"}, "lr");
      return LrSchedule::equal_segments(j.at("rates").get<std::vector<double>>(), epochs);
    }
    if (type == "staircase") {
      check_keys(j, {"type", "lr0", "decay", "every"}, "lr");
      return LrSchedule(
          ExponentialStaircase{j.at("lr0").get<double>(), j.at("decay").get<double>(), j.at("every").get<std::int64_t>()});
    }
    throw ConfigError("lr: unknown schedule type '" + type + "'");
  });
}

OperatorArch arch_for(const Dataset& d, const json& o) {
  check_keys(o, {"latent", "branch_hidden", "trunk_hidden", "filters", "activation", "dropout", "masked", "encoding"},
             "arch");
  return guarded("arch", [&] {
    OperatorArch a;
    switch (d.kind) {
      case ProblemKind::Fisher:
        a = fisher_arch(d.branch.dim(1));
        break;
      case ProblemKind::Darcy:
        a = darcy_arch(d.grid.at(0), d.grid.at(1));
        break;
      case ProblemKind::Heat:
        a = heat_arch();
        break;
    }
    const bool cnn = a.branch_kind == BranchKind::Cnn;
    std::size_t p = a.latent();
    read(o, "latent", p);
    std::vector<std::size_t> bh, th;
    if (cnn)
      bh.assign(a.branch_cnn.dense.begin(), a.branch_cnn.dense.end() - 1);
    else
      bh.assign(a.branch_mlp.widths.begin() + 1, a.branch_mlp.widths.end() - 1);
    th.assign(a.trunk.widths.begin() + 1, a.trunk.widths.end() - 1);
    read(o, "branch_hidden", bh);
    read(o, "trunk_hidden", th);
    if (cnn) {
      a.branch_cnn.dense = bh;
      a.branch_cnn.dense.push_back(p);
      if (o.contains("filters")) {
        if (o.at("filters").empty()) throw ConfigError("arch: filters must not be empty");
        a.branch_cnn.filters = o.at("filters").get<std::vector<std::size_t>>();
        a.branch_cnn.conv_activations.assign(a.branch_cnn.filters.size(), Activation::relu());
        a.branch_cnn.conv_activations[0] = Activation::tanh();
      }
    } else {
      if (o.contains("filters")) throw ConfigError("arch: filters apply to CNN branches only");
      const std::size_t in = a.branch_mlp.widths.front();
      a.branch_mlp.widths = {in};
      a.branch_mlp.widths.insert(a.branch_mlp.widths.end(), bh.begin(), bh.end());
      a.branch_mlp.widths.push_back(p);
    }
    const std::size_t tin = a.trunk.widths.front();
    a.trunk.widths = {tin};
    a.trunk.widths.insert(a.trunk.widths.end(), th.begin(), th.end());
    a.trunk.widths.push_back(p);
    if (o.contains("activation")) {
      const Activation act = activation_from_string(o.at("activation").get<std::string>());
      a.trunk.activation = act;
      (cnn ? a.branch_cnn.dense_activation : a.branch_mlp.activation) = act;
    }
    if (o.contains("dropout")) (cnn ? a.branch_cnn.dropout : a.branch_mlp.dropout) = o.at("dropout").get<double>();
    read(o, "masked", a.masked);
    if (a.masked && !d.has_masks()) throw ConfigError("arch: masked output needs a dataset with masks");
    if (o.contains("encoding")) {
      if (!cnn) throw ConfigError("arch: encoding applies to CNN branches only");
      const auto e = o.at("encoding").get<std::string>();
      if (e == "concat")
        a.encoding = GridEncoding::Concat;
      else if (e == "product")
        a.encoding = GridEncoding::Product;
      else
        throw ConfigError("arch: encoding must be 'concat' or 'product'");
      a.branch_cnn.in_channels = a.encoding == GridEncoding::Concat ? 2 : 1;
    }
    validate(a);
    return a;
  });
}

namespace {

void read_train_fields(const json& j, TrainConfig& t) {
  read(j, "seed", t.seed);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "l2", t.l2);
  read(j, "eval_every", t.eval_every);
  t.schedule = j.contains("lr") ? parse_schedule(j.at("lr"), t.epochs) : LrSchedule::constant(1e-3);
  validate(t);
}

}  // namespace

TrainRequest parse_train_config(const json& j, const Dataset& d) {
  check_keys(j, {"seed", "epochs", "batch_size", "lr", "l2", "eval_every", "arch"}, "train config");
  return guarded("train config", [&] {
    TrainRequest r;
    r.train.l2 = d.kind == ProblemKind::Fisher ? 1e-4 : 0.0;
    read_train_fields(j, r.train);
    r.arch = arch_for(d, j.value("arch", json::object()));
    return r;
  });
}

FinetuneRequest parse_finetune_config(const json& j) {
  check_keys(j, {"seed", "epochs", "batch_size", "lr", "l2", "eval_every", "variant", "subset", "carry_optimizer"},
             "finetune config");
  return guarded("finetune config", [&] {
    FinetuneRequest r;
    read_train_fields(j, r.finetune.train);
    if (j.contains("variant")) r.finetune.variant = freeze_variant_from_string(j.at("variant").get<std::string>());
    read(j, "carry_optimizer", r.finetune.carry_optimizer);
    read(j, "subset", r.subset);
    return r;
  });
}

namespace {

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

}  // namespace

std::string metrics_csv(const History& h) {
  std::string s = "epoch,lr,train_loss,test_rel_l2\n";
  for (const auto& r : h)
    s += std::to_string(r.epoch) + "," + g9(r.lr) + "," + g9(r.train_loss) + "," + g9(r.test_rel_l2) + "\n";
  return s;
}

History parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,test_rel_l2")
    throw std::runtime_error("metrics csv: unexpected header");
  History h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[4];
    for (auto& x : f)
      if (!std::getline(row, x, ',')) throw std::runtime_error("metrics csv: short row '" + line + "'");
    h.push_back({std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return h;
}

void export_metrics_csv(const History& h, const fs::path& file) { write_text(file, metrics_csv(h)); }

std::string pgm_bytes(std::span<const double> field, std::size_t rows, std::size_t cols) {
  if (rows * cols != field.size() || field.empty())
    throw ShapeError("pgm: " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                     std::to_string(field.size()) + " values");
  for (double v : field)
    if (!std::isfinite(v)) throw std::invalid_argument("pgm: field contains a non-finite value");
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  std::string s = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double v : field) {
    const double t = *hi > *lo ? (v - *lo) / (*hi - *lo) : 0.0;
    s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  return s;
}

void export_field_pgm(std::span<const double> field, std::size_t rows, std::size_t cols, const fs::path& file) {
  write_text(file, pgm_bytes(field, rows, cols));
}

namespace {

constexpr const char* kUsage =
    "usage:\n"
    "  mtdon gen <fisher|darcy|heat> --config FILE --out DIR [--seed N]\n"
    "  mtdon train --config FILE --data DIR --out DIR\n"
    "  mtdon finetune --config FILE --checkpoint DIR --data DIR --out DIR\n"
    "  mtdon eval --checkpoint DIR --data DIR --out FILE [--split test|train|all] [--pgm FILE]\n";

Dataset load_dataset(const fs::path& dir) { return dataset_from_container(read_container(dir)); }

std::vector<std::size_t> rows_for(const Dataset& d, const std::string& split) {
  if (split == "train") return d.rows(Split::Train);
  if (split == "test") return d.rows(Split::Test);
  return d.all_rows();
}

/// Normalized-space MSE of the model over `rows` (mask applied for masked models).
double normalized_mse(const OperatorModel& m, const PreparedData& p, std::span<const std::size_t> rows) {
  double sum = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += 128) {
    const auto chunk = rows.subspan(start, std::min<std::size_t>(128, rows.size() - start));
    const Tensor b = gather_rows(p.branch, chunk);
    const Tensor pred = p.masked ? predict_masked(m, b, p.trunk, p.mask_rows(chunk)) : predict(m, b, p.trunk);
    const Tensor t = gather_rows(p.target, chunk);
    for (std::size_t k = 0; k < pred.size(); ++k) sum += (pred[k] - t[k]) * (pred[k] - t[k]);
  }
  return sum / static_cast<double>(rows.size() * p.num_points());
}

void write_pgm_preview(const Dataset& d, const Tensor& pred, const fs::path& file) {
  const std::size_t q = d.num_points();
  const std::span<const double> first = pred.data().subspan(0, q);
  if (d.grid.size() == 2) return export_field_pgm(first, d.grid[0], d.grid[1], file);
  // 3D: the z-slice closest to the middle of the base slab.
  const std::size_t nx = d.grid[0], ny = d.grid[1], nz = d.grid[2];
  std::size_t best = 0;
  for (std::size_t k = 0; k < nz; ++k)
    if (std::abs(d.trunk[k * 3 + 2] - 0.5) < std::abs(d.trunk[best * 3 + 2] - 0.5)) best = k;
  std::vector<double> slice(nx * ny);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) slice[i * ny + j] = first[(i * ny + j) * nz + best];
  export_field_pgm(slice, nx, ny, file);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task DeepONet toolkit", "mtdon"};
  app.require_subcommand(1);

  std::string kind, config, out_path, data, checkpoint, split = "test", pgm;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen", "Generate a dataset container");
  gen->add_option("kind", kind, "fisher, darcy or heat")->required()->check(CLI::IsMember({"fisher", "darcy", "heat"}));
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out_path)->required();
  auto* seed_opt = gen->add_option("--seed", seed, "overrides the config seed");

  auto* tr = app.add_subcommand("train", "Train a model, write a checkpoint with metrics.csv");
  tr->add_option("--config", config)->required();
  tr->add_option("--data", data)->required();
  tr->add_option("--out", out_path)->required();

  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on a target dataset");
  ft->add_option("--config", config)->required();
  ft->add_option("--checkpoint", checkpoint)->required();
  ft->add_option("--data", data)->required();
  ft->add_option("--out", out_path)->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint, write a metrics CSV row");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--out", out_path)->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("--pgm", pgm, "write the first prediction as a PGM image");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << kUsage;
    return 2;
  }

  try {
    if (gen->parsed()) {
      json cfg = load_json(config);
      if (seed_opt->count() == 0) seed = config_seed(cfg);
      cfg["seed"] = seed;
      const Dataset d = generate_from_config(problem_kind_from_string(kind), cfg, seed);
      write_container(dataset_to_container(d, cfg), out_path);
      out << "wrote " << kind << " dataset: " << d.num_samples() << " samples (" << d.rows(Split::Train).size()
          << " train), " << d.num_points() << " points -> " << out_path << "\n";
    } else if (tr->parsed()) {
      const json cfg = load_json(config);
      const Dataset d = load_dataset(data);
      const TrainRequest req = parse_train_config(cfg, d);
      OperatorModel model = OperatorModel::create(req.arch, req.train.seed);
      const PreparedData p = prepare(d, req.arch);
      AdamState adam;
      const History h = train(model, p, req.train, &adam);
      Checkpoint ck{model, d.branch_norm, d.target_norm, adam, req.train.seed, req.train.epochs};
      save_checkpoint(ck, out_path, {{"metrics.csv", metrics_csv(h)}});
      out << "trained " << req.train.epochs << " epochs, final test rel-L2 " << g9(h.back().test_rel_l2) << " -> "
          << out_path << "\n";
    } else if (ft->parsed()) {
      const json cfg = load_json(config);
      const FinetuneRequest req = parse_finetune_config(cfg);
      const Checkpoint src = load_checkpoint(checkpoint);
      const Dataset d = load_dataset(data);
      const auto rows = req.subset ? sample_train_subset(d, req.subset, req.finetune.train.seed) : d.rows(Split::Train);
      FinetuneResult r = finetune(src, d, req.finetune, rows);
      Checkpoint ck{r.model, src.branch_norm, src.target_norm, r.adam, req.finetune.train.seed,
                    src.epoch + req.finetune.train.epochs};
      save_checkpoint(ck, out_path, {{"metrics.csv", metrics_csv(r.history)}});
      out << "fine-tuned (variant " << to_string(req.finetune.variant) << ", " << rows.size()
          << " samples), final test rel-L2 " << g9(r.history.back().test_rel_l2) << " -> " << out_path << "\n";
    } else if (ev->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      const Dataset d = load_dataset(data);
      const PreparedData p = prepare(d, ck.model.arch, ck.branch_norm, ck.target_norm);
      const auto rows = rows_for(d, split);
      if (rows.empty()) throw std::runtime_error("eval: split '" + split + "' is empty");
      const double rel = evaluate(ck.model, p, rows);
      export_metrics_csv({{ck.epoch, 0.0, normalized_mse(ck.model, p, rows), rel}}, out_path);
      if (!pgm.empty()) write_pgm_preview(d, predict_physical(ck.model, p, std::span(rows).first(1)), pgm);
      out << "rel-L2 (" << split << ", " << rows.size() << " samples) " << g9(rel) << " -> " << out_path << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mtdon
