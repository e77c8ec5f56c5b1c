#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "tisal/attributes.hpp"
#include "tisal/model/checkpoint.hpp"
#include "tisal/training/gradcheck.hpp"
#include "tisal/training/protocol.hpp"

namespace fs = std::filesystem;
using namespace tisal;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

void log_line(const std::string& s) { std::cerr << s << "\n"; }

KernelConvention parse_convention(const std::string& s) {
  if (s == "sigma") return KernelConvention::Sigma;
  if (s == "fwhm") return KernelConvention::FullWidthHalfMax;
  throw Error(ErrorKind::InvalidArgument, "--convention", s);
}

// ---------------------------------------------------------------- run config

struct RunConfig {
  model::ModelConfig model = model::ModelConfig::desk();
  training::TrainConfig train;
  fs::path manifest;
  fs::path out;
  std::optional<fs::path> checkpoint;
  std::optional<training::Ablation> ablation;
};

json to_json(const RunConfig& rc) {
  json paths{{"manifest", rc.manifest.string()}, {"out", rc.out.string()}};
  paths["checkpoint"] = rc.checkpoint ? json(rc.checkpoint->string()) : json(nullptr);
  json j{{"model", model::to_json(rc.model)}, {"train", training::to_json(rc.train)}, {"paths", paths}};
  j["ablation"] = rc.ablation ? json(training::to_string(*rc.ablation)) : json(nullptr);
  return j;
}

// "a.b.c=v": v is parsed as JSON when it parses, otherwise kept as a string.
void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::InvalidArgument, "--set", assignment);
  std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (key.rfind("model.", 0) != 0 && key.rfind("train.", 0) != 0) key = "train." + key;
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[key.substr(start, dot - start)];
    if (!node->is_object()) *node = nlohmann::json::object();
  }
  (*node)[key.substr(start)] = value;
}

RunConfig load_run_config(const std::optional<fs::path>& path, const std::vector<std::string>& sets) {
  nlohmann::json j = nlohmann::json::object();
  if (path) {
    if (!fs::exists(*path)) throw Error(ErrorKind::MissingFile, path->string());
    j = nlohmann::json::parse(io::read_text(*path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::SchemaViolation, path->string(), "not a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (k != "model" && k != "train") throw Error(ErrorKind::SchemaViolation, k, "unknown section");
    }
  }
  for (const auto& s : sets) apply_override(j, s);
  RunConfig rc;
  if (j.contains("model")) rc.model = model::model_config_from_json(j["model"], rc.model);
  if (j.contains("train")) rc.train = training::train_config_from_json(j["train"], rc.train);
  rc.model.validate();
  rc.train.validate();
  return rc;
}

// ---------------------------------------------------------------- helpers

DatasetManifest require_manifest(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorKind::MissingFile, p.string());
  auto m = load_manifest(p);
  validate_manifest(m);
  return m;
}

std::vector<FixationMap> other_image_pool(const std::vector<FixationMap>& maps, const DatasetManifest& m, std::size_t i) {
  std::vector<FixationMap> pool;
  for (std::size_t j = 0; j < m.pairs.size(); ++j) {
    if (m.pairs[j].image_path != m.pairs[i].image_path) pool.push_back(maps[j]);
  }
  return pool;
}

std::array<double, 3> heat_color(double v) {
  auto ch = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  return {ch(4 * v - 3), ch(4 * v - 2), ch(4 * v - 1)};
}

// Image with the map blended on top as a heat overlay.
RgbImage overlay(const RgbImage& img, const Grid<double>& map) {
  const auto gray = io::to_gray8(map);
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto c = heat_color(gray[i] / 255.0);
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = 0.45 * img.pixels[3 * i + k] + 0.55 * 255.0 * c[k];
      out.pixels[3 * i + k] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
    }
  }
  return out;
}

RgbImage side_by_side(const std::vector<RgbImage>& tiles, std::size_t gap = 4) {
  std::size_t w = 0, h = 0;
  for (const auto& t : tiles) w += t.width, h = std::max(h, t.height);
  w += gap * (tiles.size() - 1);
  RgbImage out(w, h, 255);
  std::size_t x0 = 0;
  for (const auto& t : tiles) {
    for (std::size_t y = 0; y < t.height; ++y) {
      std::copy_n(&t.pixels[3 * y * t.width], 3 * t.width, &out.pixels[3 * (y * w + x0)]);
    }
    x0 += t.width + gap;
  }
  return out;
}

std::vector<training::ResultRow> read_results_csv(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  const std::vector<std::string> keys = {"auc_j", "sauc", "cc", "ig", "kl", "nss", "sim"};
  std::vector<training::ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    training::ResultRow row;
    std::size_t pos = 0;
    if (line[0] == '"') {
      const auto close = line.find('"', 1);
      if (close == std::string::npos) throw Error(ErrorKind::MalformedRow, path.string(), line);
      row.label = line.substr(1, close - 1);
      pos = close + 1;
    } else {
      pos = line.find(',');
      row.label = line.substr(0, pos);
    }
    for (const auto& k : keys) {
      if (pos >= line.size() || line[pos] != ',') throw Error(ErrorKind::MalformedRow, path.string(), line);
      const auto next = line.find(',', pos + 1);
      const auto cell = line.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
      if (!cell.empty()) {
        row.means.mean[k] = std::stod(cell);
        row.means.count[k] = 1;
      }
      pos = next == std::string::npos ? line.size() : next;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------- commands

int cmd_fixtures(const fs::path& out, std::uint64_t seed, FixtureSpec spec) {
  const auto m = generate_fixtures(spec, seed, out);
  const auto counts = condition_counts(m);
  std::cout << "wrote " << m.pairs.size() << " pairs to " << (out / "manifest.json").string() << "\n";
  for (const auto& [c, n] : counts) std::cout << "  " << to_string(c) << ": " << n << "\n";
  return 0;
}

int cmd_fixmap(const fs::path& manifest, double sigma_deg, const std::string& convention, bool png,
               const fs::path& out) {
  const auto m = require_manifest(manifest);
  const auto conv = parse_convention(convention);
  const double sigma = degrees_to_sigma(m.pixels_per_degree, sigma_deg, conv);
  for (const auto& p : m.pairs) {
    const auto d = density_map(fixation_map_for(m, p), sigma, Normalization::SumOne);
    io::write_salf(out / (p.pair_id + ".salf"), d.values);
    if (png) io::write_png_gray(out / "png" / (p.pair_id + ".png"), io::to_gray8(d.values));
  }
  json cfg{{"manifest", manifest.string()},
           {"sigma_deg", sigma_deg},
           {"convention", convention},
           {"sigma_px", sigma},
           {"normalization", "sum_one"}};
  io::write_text(out / "effective_config.json", cfg.dump(2) + "\n");
  std::cout << "wrote " << m.pairs.size() << " density maps (sigma " << sigma << " px)\n";
  return 0;
}

int cmd_attrs(const fs::path& manifest, std::size_t bins, const fs::path& out) {
  const auto m = require_manifest(manifest);
  const auto s = attributes::attribute_histogram(m, bins);
  attributes::write_summary(s, out);
  io::write_text(out / "effective_config.json", json{{"manifest", manifest.string()}, {"bins", bins}}.dump(2) + "\n");
  std::cout << "wrote attribute histograms for " << m.pairs.size() << " pairs\n";
  return 0;
}

int cmd_train(RunConfig rc) {
  const auto m = require_manifest(rc.manifest);
  if (rc.checkpoint && !fs::exists(*rc.checkpoint)) {
    throw Error(ErrorKind::MissingCheckpoint, rc.checkpoint->string());
  }
  training::ProtocolOptions opt{rc.out, rc.checkpoint, log_line};
  if (rc.ablation) {
    const auto r = training::run_ablation(*rc.ablation, m, rc.model, rc.train, opt);
    std::cout << r.markdown;
  } else {
    const auto r = training::run_protocol(m, rc.model, rc.train, opt);
    std::cout << training::markdown_table(r.rows);
  }
  io::write_text(rc.out / "effective_config.json", to_json(rc).dump(2) + "\n");
  return 0;
}

int cmd_predict(const fs::path& manifest, const std::optional<fs::path>& checkpoint, const std::string& baseline,
                bool null_text, const fs::path& out) {
  const auto m = require_manifest(manifest);
  std::optional<model::TgsalModel<double>> net;
  if (checkpoint) {
    net.emplace(model::load_checkpoint<double>(*checkpoint));
  } else if (baseline != "center" && baseline != "constant") {
    throw Error(ErrorKind::InvalidArgument, "--baseline", baseline);
  }
  for (const auto& p : m.pairs) {
    Grid<double> map;
    if (net) {
      map = net->predict(io::read_png_rgb(m.resolve(p.image_path)), null_text ? std::string_view{} : p.text).values;
    } else if (baseline == "center") {
      map = metrics::center_prior(p.width, p.height).values;
    } else {
      map = Grid<double>(p.width, p.height, 1.0 / static_cast<double>(p.width * p.height));
    }
    io::write_salf(out / (p.pair_id + ".salf"), map);
  }
  json cfg{{"manifest", manifest.string()}, {"null_text", null_text}};
  cfg["checkpoint"] = checkpoint ? json(checkpoint->string()) : json(nullptr);
  cfg["baseline"] = checkpoint ? json(nullptr) : json(baseline);
  io::write_text(out / "effective_config.json", cfg.dump(2) + "\n");
  std::cout << "wrote " << m.pairs.size() << " predictions\n";
  return 0;
}

int cmd_eval(const fs::path& manifest, const fs::path& pred_dir, double sigma_deg, const std::string& convention,
             std::size_t shuffles, std::uint64_t seed, const fs::path& out) {
  const auto m = require_manifest(manifest);
  if (!fs::is_directory(pred_dir)) throw Error(ErrorKind::MissingFile, pred_dir.string());
  const double sigma = degrees_to_sigma(m.pixels_per_degree, sigma_deg, parse_convention(convention));
  std::vector<FixationMap> maps;
  for (const auto& p : m.pairs) maps.push_back(fixation_map_for(m, p));
  std::string csv = std::string(metrics::kCsvHeader) + "\n";
  std::map<ConditionType, training::MetricMeans> by_condition;
  training::MetricMeans overall;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto& p = m.pairs[i];
    const auto path = pred_dir / (p.pair_id + ".salf");
    if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
    SaliencyMap pred{io::read_salf(path)};
    const auto gt = density_map(maps[i], sigma, Normalization::SumOne);
    const auto prior = metrics::center_prior(p.width, p.height);
    const auto pool = other_image_pool(maps, m, i);
    const auto r = metrics::evaluate_all(pred, maps[i], gt, pool, {shuffles, seed + i}, &prior);
    csv += metrics::csv_row(p.pair_id, std::string(to_string(p.condition)), r) + "\n";
    by_condition[p.condition].add(r);
    overall.add(r);
  }
  io::write_text(out / "metrics.csv", csv);
  std::vector<training::ResultRow> rows;
  for (const auto& [c, mm] : by_condition) rows.push_back({std::string(to_string(c)), mm});
  rows.push_back({"All pairs", overall});
  io::write_text(out / "summary.csv", training::results_csv(rows));
  io::write_text(out / "summary.md", training::markdown_table(rows));
  json cfg{{"manifest", manifest.string()}, {"pred", pred_dir.string()}, {"sigma_deg", sigma_deg},
           {"convention", convention}, {"sauc_shuffles", shuffles}, {"seed", seed}};
  io::write_text(out / "effective_config.json", cfg.dump(2) + "\n");
  std::cout << training::markdown_table(rows);
  return 0;
}

int cmd_gradcheck(const std::string& module, std::size_t trials, double epsilon, std::size_t samples,
                  std::uint64_t seed, const std::optional<fs::path>& out) {
  std::vector<std::string> ids;
  if (module == "all") {
    ids = training::gradcheck_modules();
  } else {
    ids = {module};
  }
  bool ok = true;
  json report = json::array();
  for (const auto& id : ids) {
    const auto r = training::gradient_check(id, trials, epsilon, samples, seed);
    const double tol = id == "loss" ? 1e-8 : 1e-4;
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%-18s max_rel_error %.3e  worst %-40s %s\n", id.c_str(), r.max_rel_error, r.worst_tensor.c_str(),
                pass ? "ok" : "FAIL");
    report.push_back({{"module", id}, {"max_rel_error", r.max_rel_error}, {"worst_tensor", r.worst_tensor},
                      {"trials", r.trials}, {"coordinates", r.coordinates}, {"tolerance", tol}, {"pass", pass}});
  }
  if (out) {
    io::write_text(*out / "gradcheck.json", report.dump(2) + "\n");
    io::write_text(*out / "effective_config.json",
                   json{{"module", module}, {"trials", trials}, {"epsilon", epsilon}, {"samples", samples}, {"seed", seed}}
                           .dump(2) + "\n");
  }
  return ok ? 0 : kExitRuntime;
}

int cmd_report(const fs::path& results, std::optional<fs::path> manifest, std::optional<fs::path> checkpoint,
               std::size_t panels, const fs::path& out) {
  if (!fs::is_directory(results)) throw Error(ErrorKind::MissingFile, results.string());
  std::vector<fs::path> tables;
  for (const auto& e : fs::directory_iterator(results)) {
    const auto name = e.path().filename().string();
    if (name == "results.csv" || (name.rfind("ablation_", 0) == 0 && e.path().extension() == ".csv")) tables.push_back(e.path());
  }
  std::sort(tables.begin(), tables.end());
  if (tables.empty()) throw Error(ErrorKind::MissingFile, (results / "results.csv").string(), "no result tables");

  std::string md = "# Results\n\n";
  const auto cfg_path = results / "effective_config.json";
  nlohmann::json cfg;
  if (fs::exists(cfg_path)) {
    cfg = nlohmann::json::parse(io::read_text(cfg_path), nullptr, false);
    if (cfg.is_object() && cfg.contains("train")) {
      const auto& t = cfg["train"];
      md += "Protocol " + t.value("protocol", std::string("?")) + ", " + std::to_string(t.value("repeats", 0)) +
            " repeat(s), seed " + std::to_string(t.value("seed", 0)) + ".\n\n";
    }
  }
  for (const auto& t : tables) {
    const auto stem = t.stem().string();
    md += "## " + (stem == "results" ? std::string("Per-condition scores") : "Ablation: " + stem.substr(9)) + "\n\n";
    md += training::markdown_table(read_results_csv(t), stem == "results" ? "Condition" : "Variant") + "\n";
  }

  if (!manifest && cfg.is_object() && cfg.contains("paths") && cfg["paths"]["manifest"].is_string()) {
    manifest = fs::path(cfg["paths"]["manifest"].get<std::string>());
  }
  if (!checkpoint) {
    std::vector<fs::path> ckpts;
    for (const auto& e : fs::directory_iterator(results)) {
      if (e.path().extension() == ".tgsc") ckpts.push_back(e.path());
    }
    std::sort(ckpts.begin(), ckpts.end());
    if (!ckpts.empty()) checkpoint = ckpts.front();
  }
  std::size_t written = 0;
  if (manifest && checkpoint && panels > 0) {
    const auto m = require_manifest(*manifest);
    const auto net = model::load_checkpoint<double>(*checkpoint);
    const double sigma = degrees_to_sigma(m.pixels_per_degree, 1.0);
    md += "## Heatmaps\n\nImage, ground truth, prediction with text, prediction without text (" +
          checkpoint->filename().string() + ").\n\n";
    std::set<ConditionType> seen;
    for (const auto& p : m.pairs) {
      if (written >= panels) break;
      if (!seen.insert(p.condition).second) continue;
      const auto img = io::read_png_rgb(m.resolve(p.image_path));
      const auto gt = density_map(fixation_map_for(m, p), sigma, Normalization::SumOne);
      const auto with_text = net.predict(img, p.text);
      const auto without = net.predict(img, {});
      const auto file = "panels/" + p.pair_id + ".png";
      io::write_png_rgb(out / file, side_by_side({img, overlay(img, gt.values), overlay(img, with_text.values),
                                                  overlay(img, without.values)}));
      md += "**" + p.pair_id + "** (" + std::string(to_string(p.condition)) + "): " + p.text + "\n\n![](" + file + ")\n\n";
      ++written;
    }
  }
  io::write_text(out / "report.md", md);
  json rc{{"results", results.string()}, {"panels", panels}};
  rc["manifest"] = manifest ? json(manifest->string()) : json(nullptr);
  rc["checkpoint"] = checkpoint ? json(checkpoint->string()) : json(nullptr);
  io::write_text(out / "effective_config.json", rc.dump(2) + "\n");
  std::cout << "wrote " << (out / "report.md").string() << " with " << tables.size() << " table(s) and "
            << written << " panel(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided saliency toolkit"};
  app.require_subcommand(1);

  fs::path out, manifest, pred_dir, results;
  std::uint64_t seed = 0;
  double sigma_deg = 1.0;
  std::string convention = "sigma";

  auto* fixtures = app.add_subcommand("fixtures", "Generate a synthetic fixture dataset");
  FixtureSpec spec;
  fixtures->add_option("--out", out, "Output directory")->required();
  fixtures->add_option("--seed", seed, "Generator seed");
  fixtures->add_option("--images", spec.images, "Images per group");
  fixtures->add_option("--subjects", spec.subjects, "Simulated viewers per pair");
  fixtures->add_option("--width", spec.width);
  fixtures->add_option("--height", spec.height);

  auto* fixmap = app.add_subcommand("fixmap", "Fixation lists to SALF density maps");
  bool png = false;
  fixmap->add_option("--manifest", manifest)->required();
  fixmap->add_option("--out", out)->required();
  fixmap->add_option("--sigma-deg", sigma_deg, "Kernel width in visual degrees");
  fixmap->add_option("--convention", convention, "sigma or fwhm");
  fixmap->add_flag("--png", png, "Also write grayscale previews");

  auto* attrs = app.add_subcommand("attrs", "Image attribute histograms");
  std::size_t bins = 10;
  attrs->add_option("--manifest", manifest)->required();
  attrs->add_option("--out", out)->required();
  attrs->add_option("--bins", bins);

  auto* train = app.add_subcommand("train", "Run a training protocol or an ablation grid");
  std::optional<fs::path> config, checkpoint;
  std::vector<std::string> sets;
  std::string protocol, ablation;
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out)->required();
  train->add_option("--config", config, "JSON file with optional \"model\" and \"train\" sections");
  train->add_option("--set", sets, "Override, e.g. train.epochs=5 or model.attention_heads=4");
  train->add_option("--protocol", protocol, "INDIVIDUAL_FINETUNE, JOINT_FINETUNE or JOINT_SCRATCH");
  train->add_option("--ablation", ablation, "heads, loss, fusion or structure");
  train->add_option("--checkpoint", checkpoint, "Pretrained weights for finetuning protocols");

  auto* eval = app.add_subcommand("eval", "Score a directory of SALF predictions");
  std::size_t shuffles = metrics::kDefaultShuffles;
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--pred", pred_dir, "Directory with <pair_id>.salf")->required();
  eval->add_option("--out", out)->required();
  eval->add_option("--sigma-deg", sigma_deg);
  eval->add_option("--convention", convention);
  eval->add_option("--shuffles", shuffles, "sAUC negative draws");
  eval->add_option("--seed", seed);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string module = "all";
  std::size_t trials = 2, samples = 24;
  double epsilon = 1e-6;
  std::optional<fs::path> gc_out;
  gradcheck->add_option("--module", module, "Module id or all");
  gradcheck->add_option("--trials", trials);
  gradcheck->add_option("--epsilon", epsilon);
  gradcheck->add_option("--samples", samples, "Coordinates sampled per tensor");
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--out", gc_out);

  auto* report = app.add_subcommand("report", "Markdown tables and heatmap panels from a training run");
  std::optional<fs::path> report_manifest;
  std::size_t panels = 5;
  report->add_option("--results", results, "Training output directory")->required();
  report->add_option("--out", out)->required();
  report->add_option("--manifest", report_manifest, "Defaults to the manifest recorded by the run");
  report->add_option("--checkpoint", checkpoint, "Defaults to the first checkpoint in --results");
  report->add_option("--panels", panels, "Number of heatmap panels");

  auto* predict = app.add_subcommand("predict", "Write SALF predictions for every pair");
  std::string baseline = "center";
  bool null_text = false;
  predict->add_option("--manifest", manifest)->required();
  predict->add_option("--out", out)->required();
  predict->add_option("--checkpoint", checkpoint);
  predict->add_option("--baseline", baseline, "center or constant, used without --checkpoint");
  predict->add_flag("--null-text", null_text, "Feed empty text to the model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*fixtures) return cmd_fixtures(out, seed, spec);
    if (*fixmap) return cmd_fixmap(manifest, sigma_deg, convention, png, out);
    if (*attrs) return cmd_attrs(manifest, bins, out);
    if (*train) {
      auto rc = load_run_config(config, sets);
      if (!protocol.empty()) rc.train.protocol = training::parse_protocol(protocol);
      if (!ablation.empty()) rc.ablation = training::parse_ablation(ablation);
      rc.manifest = manifest;
      rc.out = out;
      rc.checkpoint = checkpoint;
      return cmd_train(rc);
    }
    if (*eval) return cmd_eval(manifest, pred_dir, sigma_deg, convention, shuffles, seed, out);
    if (*gradcheck) return cmd_gradcheck(module, trials, epsilon, samples, seed, gc_out);
    if (*report) return cmd_report(results, report_manifest, checkpoint, panels, out);
    if (*predict) {
      if (checkpoint && !fs::exists(*checkpoint)) throw Error(ErrorKind::MissingCheckpoint, checkpoint->string());
      return cmd_predict(manifest, checkpoint, baseline, null_text, out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_runtime_error(e.kind()) ? kExitRuntime : kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: SchemaViolation: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
