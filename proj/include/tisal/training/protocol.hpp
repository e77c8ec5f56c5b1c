#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tisal/model/checkpoint.hpp"
#include "tisal/training/trainer.hpp"

namespace tisal::training {

inline constexpr const char* kAveragedRow = "Averaged among all conditions";

struct ResultRow {
  std::string label;
  MetricMeans means;  // mean over repeats of the per-repeat pair means
};

struct ProtocolResult {
  Protocol protocol = Protocol::JointFinetune;
  std::vector<ResultRow> rows;
  std::vector<std::filesystem::path> checkpoints;
  std::size_t models_trained = 0;
};

struct ProtocolOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::optional<std::filesystem::path> pretrain_checkpoint;
  std::function<void(const std::string&)> log;
};

namespace detail {

inline void say(const ProtocolOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

inline MetricMeans average_rows(const std::vector<MetricMeans>& rows) {
  MetricMeans out;
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.mean) {
      auto& n = out.count[k];
      auto& m = out.mean[k];
      ++n;
      m += (v - m) / static_cast<double>(n);
    }
  }
  return out;
}

// Row label -> per-repeat means, in first-seen order.
struct RowAccumulator {
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricMeans>> values;

  void add(const std::string& label, MetricMeans m) {
    if (!values.count(label)) order.push_back(label);
    values[label].push_back(std::move(m));
  }
  std::vector<ResultRow> rows() const {
    std::vector<ResultRow> out;
    for (const auto& l : order) out.push_back({l, average_rows(values.at(l))});
    return out;
  }
};

inline void write_pairs_csv(const std::vector<PairResult>& results, const std::filesystem::path& path) {
  std::string text = std::string(metrics::kCsvHeader) + "\n";
  for (const auto& r : results) text += metrics::csv_row(r.pair_id, std::string(to_string(r.condition)), r.report) + "\n";
  io::write_text(path, text);
}

}  // namespace detail

inline std::string format_mean(const MetricMeans& m, const char* key, const char* fmt = "%.4f") {
  const auto v = m.get(key);
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, *v);
  return buf;
}

/// Markdown table with the seven metric columns.
inline std::string markdown_table(const std::vector<ResultRow>& rows, const std::string& first_column = "Condition") {
  std::string s = "| " + first_column + " | AUC-J↑ | sAUC↑ | CC↑ | IG↑ | KL↓ | NSS↑ | SIM↑ |\n";
  s += "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    s += "| " + r.label;
    for (const char* k : {"auc_j", "sauc", "cc", "ig", "kl", "nss", "sim"}) s += " | " + format_mean(r.means, k);
    s += " |\n";
  }
  return s;
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string s = "row,auc_j,sauc,cc,ig,kl,nss,sim\n";
  for (const auto& r : rows) {
    s += "\"" + r.label + "\"";
    for (const char* k : {"auc_j", "sauc", "cc", "ig", "kl", "nss", "sim"}) {
      const auto v = r.means.get(k);
      s += ",";
      if (v) s += format_mean(r.means, k, "%.6f");
    }
    s += "\n";
  }
  return s;
}

/// Desk stand-in for large-scale pretraining: image-only training on the
/// PURE pairs of the training split.
inline model::TgsalModel<double> desk_pretrain(const model::ModelConfig& mc, const PreparedDataset& data,
                                               const std::set<std::string>& train_ids, const TrainConfig& tc) {
  model::TgsalModel<double> m(mc);
  auto pure = select(data, [&](const PreparedPair& p) {
    return train_ids.count(p.pair.pair_id) && p.pair.condition == ConditionType::Pure;
  });
  if (pure.empty()) pure = select(data, [&](const PreparedPair& p) { return train_ids.count(p.pair.pair_id) > 0; });
  TrainConfig pc = tc;
  pc.null_text = true;
  pc.max_steps = 0;
  pc.epochs = std::max<std::size_t>(1, tc.pretrain_epochs);
  train(m, pure, pc);
  return m;
}

/// Runs one protocol over `repeats` seeded splits and averages the rows.
inline ProtocolResult run_protocol(const DatasetManifest& manifest, const model::ModelConfig& mc,
                                   const TrainConfig& tc, const ProtocolOptions& opt = {},
                                   const PreparedDataset* prepared = nullptr) {
  tc.validate();
  mc.validate();
  const bool finetune = tc.protocol != Protocol::JointScratch;
  std::optional<model::TgsalModel<double>> loaded;
  if (finetune && opt.pretrain_checkpoint) {
    loaded.emplace(model::load_checkpoint<double>(*opt.pretrain_checkpoint));
    if (loaded->config().input_size != mc.input_size) {
      throw Error(ErrorKind::DimMismatch, opt.pretrain_checkpoint->string(), "checkpoint input size differs");
    }
  }
  std::optional<PreparedDataset> own;
  if (!prepared) own.emplace(prepare(manifest, mc.input_size, tc));
  const PreparedDataset& data = prepared ? *prepared : *own;

  ProtocolResult result;
  result.protocol = tc.protocol;
  detail::RowAccumulator acc;
  if (!opt.out_dir.empty()) io::write_text(opt.out_dir / "effective_config.json",
                                           nlohmann::ordered_json{{"model", model::to_json(mc)}, {"train", to_json(tc)}}.dump(2) + "\n");

  for (std::size_t r = 0; r < tc.repeats; ++r) {
    const std::uint64_t seed = tc.seed + r;
    const auto split = split_dataset(manifest, tc.train_fraction, seed);
    const std::set<std::string> train_ids(split.train.begin(), split.train.end());
    const std::set<std::string> test_ids(split.test.begin(), split.test.end());
    TrainConfig rc = tc;
    rc.seed = seed;
    model::ModelConfig rmc = mc;
    rmc.init_seed = mc.init_seed + r;

    auto make_base = [&]() -> model::TgsalModel<double> {
      if (!finetune) return model::TgsalModel<double>(rmc);
      if (loaded) return loaded->clone();
      return desk_pretrain(rmc, data, train_ids, rc);
    };
    auto apply_freeze = [&](model::TgsalModel<double>& m) {
      m.params().set_trainable_group("image_encoder", !mc.freeze_encoders);
      m.params().set_trainable_group("text_encoder", !mc.freeze_encoders);
    };
    auto tag = [&](const std::string& label) { return label + "_r" + std::to_string(r); };
    auto finish = [&](model::TgsalModel<double>& m, const std::string& label, const TrainHistory& h,
                      const std::vector<PairResult>& res) {
      ++result.models_trained;
      if (opt.out_dir.empty()) return;
      write_history(h, opt.out_dir / ("history_" + tag(label) + ".jsonl"));
      detail::write_pairs_csv(res, opt.out_dir / ("pairs_" + tag(label) + ".csv"));
      if (r == 0) {
        const auto path = opt.out_dir / ("checkpoint_" + label + ".tgsc");
        model::save_checkpoint(m, path);
        result.checkpoints.push_back(path);
      }
    };

    std::optional<model::TgsalModel<double>> base;
    if (tc.protocol == Protocol::IndividualFinetune) {
      base.emplace(make_base());
      for (auto c : kAllConditions) {
        auto tr = select(data, [&](const PreparedPair& p) { return train_ids.count(p.pair.pair_id) && p.pair.condition == c; });
        auto te = select(data, [&](const PreparedPair& p) { return test_ids.count(p.pair.pair_id) && p.pair.condition == c; });
        if (tr.empty() || te.empty()) continue;
        auto m = base->clone();
        apply_freeze(m);
        detail::say(opt, "repeat " + std::to_string(r) + ": " + std::string(to_string(c)) + " (" + std::to_string(tr.size()) + " train pairs)");
        const auto h = train(m, tr, rc);
        const auto res = evaluate(m, te, rc, seed);
        acc.add(std::string(to_string(c)), mean_of(res));
        finish(m, std::string(to_string(c)), h, res);
      }
    } else {
      auto m = make_base();
      apply_freeze(m);
      auto tr = select(data, [&](const PreparedPair& p) { return train_ids.count(p.pair.pair_id) > 0; });
      auto te = select(data, [&](const PreparedPair& p) { return test_ids.count(p.pair.pair_id) > 0; });
      detail::say(opt, "repeat " + std::to_string(r) + ": joint (" + std::to_string(tr.size()) + " train pairs)");
      const auto h = train(m, tr, rc);
      const auto res = evaluate(m, te, rc, seed);
      std::vector<MetricMeans> per_condition;
      for (auto c : kAllConditions) {
        std::vector<PairResult> sub;
        for (const auto& pr : res) {
          if (pr.condition == c) sub.push_back(pr);
        }
        if (sub.empty()) continue;
        per_condition.push_back(mean_of(sub));
        acc.add(std::string(to_string(c)), per_condition.back());
      }
      acc.add(kAveragedRow, detail::average_rows(per_condition));
      finish(m, "joint", h, res);
    }
  }
  result.rows = acc.rows();
  if (!opt.out_dir.empty()) {
    io::write_text(opt.out_dir / "results.csv", results_csv(result.rows));
    io::write_text(opt.out_dir / "results.md", markdown_table(result.rows));
  }
  return result;
}

// ---------------------------------------------------------------- ablations

enum class Ablation { Heads, Loss, Fusion, Structure };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Heads: return "heads";
    case Ablation::Loss: return "loss";
    case Ablation::Fusion: return "fusion";
    case Ablation::Structure: return "structure";
  }
  return "heads";
}

inline Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::Heads, Ablation::Loss, Ablation::Fusion, Ablation::Structure}) {
    if (s == to_string(a)) return a;
  }
  throw Error(ErrorKind::InvalidArgument, "ablation", s);
}

struct AblationVariant {
  std::string label;
  model::ModelConfig model;
  TrainConfig train;
};

inline std::vector<AblationVariant> ablation_grid(Ablation a, const model::ModelConfig& mc, const TrainConfig& tc) {
  std::vector<AblationVariant> out;
  switch (a) {
    case Ablation::Heads:
      for (std::size_t h : {2, 4, 8}) {
        auto m = mc;
        m.attention_heads = h;
        out.push_back({std::to_string(h) + " heads", m, tc});
      }
      break;
    case Ablation::Loss:
      for (auto k : {LossKind::L1, LossKind::L2, LossKind::Combined}) {
        auto t = tc;
        t.loss.kind = k;
        out.push_back({k == LossKind::L1 ? "L1" : k == LossKind::L2 ? "L2 (MSE)" : "CC + MSE", mc, t});
      }
      break;
    case Ablation::Fusion: {
      auto g = mc, l = mc;
      g.global_fusion = false;
      l.local_fusion = false;
      out.push_back({"w/o global", g, tc});
      out.push_back({"w/o local", l, tc});
      out.push_back({"full", mc, tc});
      break;
    }
    case Ablation::Structure:
      for (auto b : {model::DecoderBlock::Plain, model::DecoderBlock::Residual, model::DecoderBlock::ResidualDeconv,
                     model::DecoderBlock::DoubleConv}) {
        auto m = mc;
        m.block = b;
        out.push_back({model::to_string(b), m, tc});
      }
      break;
  }
  return out;
}

struct AblationResult {
  Ablation ablation = Ablation::Heads;
  std::vector<ResultRow> rows;  // one per variant: the averaged-over-conditions row
  std::string markdown;
};

/// Runs every variant of the grid under `tc.protocol` and tabulates the
/// condition-averaged scores.
inline AblationResult run_ablation(Ablation a, const DatasetManifest& manifest, const model::ModelConfig& mc,
                                   const TrainConfig& tc, const ProtocolOptions& opt = {}) {
  AblationResult out;
  out.ablation = a;
  const auto data = prepare(manifest, mc.input_size, tc);
  for (const auto& v : ablation_grid(a, mc, tc)) {
    ProtocolOptions vo = opt;
    vo.out_dir.clear();
    detail::say(opt, std::string(to_string(a)) + ": " + v.label);
    const auto res = run_protocol(manifest, v.model, v.train, vo, &data);
    ResultRow row{v.label, {}};
    for (const auto& r : res.rows) {
      if (r.label == kAveragedRow) row.means = r.means;
    }
    if (row.means.mean.empty()) row.means = detail::average_rows([&] {
      std::vector<MetricMeans> all;
      for (const auto& r : res.rows) all.push_back(r.means);
      return all;
    }());
    out.rows.push_back(row);
  }
  out.markdown = markdown_table(out.rows, "Variant");
  if (!opt.out_dir.empty()) {
    io::write_text(opt.out_dir / ("ablation_" + std::string(to_string(a)) + ".md"), out.markdown);
    io::write_text(opt.out_dir / ("ablation_" + std::string(to_string(a)) + ".csv"), results_csv(out.rows));
  }
  return out;
}

}  // namespace tisal::training
