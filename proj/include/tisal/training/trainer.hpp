#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tisal/data_model.hpp"
#include "tisal/fixproc.hpp"
#include "tisal/io.hpp"
#include "tisal/metrics.hpp"
#include "tisal/model/tgsal.hpp"
#include "tisal/nn/optim.hpp"
#include "tisal/training/loss.hpp"
#include "tisal/training/schedule.hpp"

namespace tisal::training {

enum class Protocol { IndividualFinetune, JointFinetune, JointScratch };

inline const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::IndividualFinetune: return "INDIVIDUAL_FINETUNE";
    case Protocol::JointFinetune: return "JOINT_FINETUNE";
    case Protocol::JointScratch: return "JOINT_SCRATCH";
  }
  return "JOINT_FINETUNE";
}

/// Case-insensitive.
inline Protocol parse_protocol(const std::string& s) {
  std::string upper = s;
  for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (auto p : {Protocol::IndividualFinetune, Protocol::JointFinetune, Protocol::JointScratch}) {
    if (upper == to_string(p)) return p;
  }
  throw Error(ErrorKind::SchemaViolation, "train.protocol", s);
}

struct TrainConfig {
  std::size_t epochs = 20;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::JointFinetune;
  std::size_t repeats = 10;
  std::size_t max_steps = 0;  // 0: epochs × batches per epoch
  double train_fraction = 0.8;
  double kernel_degrees = 1.0;
  KernelConvention kernel_convention = KernelConvention::Sigma;
  bool null_text = false;  // feed "" for every pair (image-only mode)
  std::size_t pretrain_epochs = 10;
  std::size_t val_every = 1;  // epochs between validation passes; 0 disables
  std::size_t eval_shuffles = metrics::kDefaultShuffles;
  std::size_t threads = 0;  // 0: TISAL_THREADS or 1
  LossConfig loss;

  void validate() const {
    if (lr_end > lr_start || !(lr_end > 0.0)) throw Error(ErrorKind::InvalidArgument, "train.lr", "need 0 < lr_end <= lr_start");
    if (repeats < 1) throw Error(ErrorKind::InvalidArgument, "train.repeats", "must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "train.batch_size", "must be >= 1");
    if (epochs < 1 && max_steps == 0) throw Error(ErrorKind::InvalidArgument, "train.epochs", "must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorKind::InvalidArgument, "train.train_fraction");
    loss.validate();
  }

  std::size_t worker_threads() const {
    if (threads) return threads;
    if (const char* env = std::getenv("TISAL_THREADS")) {
      const long n = std::strtol(env, nullptr, 10);
      if (n > 0) return static_cast<std::size_t>(n);
    }
    return 1;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {
      {"epochs", c.epochs},
      {"lr_start", c.lr_start},
      {"lr_end", c.lr_end},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"protocol", to_string(c.protocol)},
      {"repeats", c.repeats},
      {"max_steps", c.max_steps},
      {"train_fraction", c.train_fraction},
      {"kernel_degrees", c.kernel_degrees},
      {"kernel_convention", c.kernel_convention == KernelConvention::Sigma ? "sigma" : "fwhm"},
      {"null_text", c.null_text},
      {"pretrain_epochs", c.pretrain_epochs},
      {"val_every", c.val_every},
      {"eval_shuffles", c.eval_shuffles},
      {"threads", c.threads},
      {"loss", {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}, {"variance_epsilon", c.loss.variance_epsilon},
                {"kind", to_string(c.loss.kind)}}},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaViolation, "train", "expected an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") base.epochs = v.get<std::size_t>();
      else if (k == "lr_start") base.lr_start = v.get<double>();
      else if (k == "lr_end") base.lr_end = v.get<double>();
      else if (k == "batch_size") base.batch_size = v.get<std::size_t>();
      else if (k == "seed") base.seed = v.get<std::uint64_t>();
      else if (k == "protocol") base.protocol = parse_protocol(v.get<std::string>());
      else if (k == "repeats") base.repeats = v.get<std::size_t>();
      else if (k == "max_steps") base.max_steps = v.get<std::size_t>();
      else if (k == "train_fraction") base.train_fraction = v.get<double>();
      else if (k == "kernel_degrees") base.kernel_degrees = v.get<double>();
      else if (k == "kernel_convention") {
        const auto s = v.get<std::string>();
        if (s == "sigma") base.kernel_convention = KernelConvention::Sigma;
        else if (s == "fwhm") base.kernel_convention = KernelConvention::FullWidthHalfMax;
        else throw Error(ErrorKind::SchemaViolation, "train.kernel_convention", s);
      }
      else if (k == "null_text") base.null_text = v.get<bool>();
      else if (k == "pretrain_epochs") base.pretrain_epochs = v.get<std::size_t>();
      else if (k == "val_every") base.val_every = v.get<std::size_t>();
      else if (k == "eval_shuffles") base.eval_shuffles = v.get<std::size_t>();
      else if (k == "threads") base.threads = v.get<std::size_t>();
      else if (k == "loss") {
        for (const auto& [lk, lv] : v.items()) {
          if (lk == "alpha") base.loss.alpha = lv.get<double>();
          else if (lk == "beta") base.loss.beta = lv.get<double>();
          else if (lk == "variance_epsilon") base.loss.variance_epsilon = lv.get<double>();
          else if (lk == "kind") base.loss.kind = parse_loss_kind(lv.get<std::string>());
          else throw Error(ErrorKind::SchemaViolation, "train.loss." + lk, "unknown field");
        }
      }
      else throw Error(ErrorKind::SchemaViolation, "train." + k, "unknown field");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, "train", e.what());
  }
  base.validate();
  return base;
}

// ---------------------------------------------------------------- data

/// One pair with everything training and evaluation need, computed once.
struct PreparedPair {
  TextImagePair pair;
  nn::Tensor<double> input;   // 3×S×S
  nn::Tensor<double> target;  // 1×S×S, max-one density
  FixationMap fixations;
  DensityMap density;  // sum-one, original resolution
};

using PreparedDataset = std::vector<PreparedPair>;

inline nn::Tensor<double> model_target(const FixationMap& fm, double sigma_px, std::size_t size) {
  auto d = density_map(fm, sigma_px, Normalization::SumOne);
  auto small = resize_area(d.values, size, size);
  normalize(small, Normalization::MaxOne);
  return nn::Tensor<double>({1, size, size}, std::move(small.storage()));
}

/// Loads images and fixations for every pair of `m` (or only `pair_ids`).
inline PreparedDataset prepare(const DatasetManifest& m, std::size_t input_size, const TrainConfig& cfg,
                               const std::vector<std::string>* pair_ids = nullptr) {
  const double sigma = degrees_to_sigma(m.pixels_per_degree, cfg.kernel_degrees, cfg.kernel_convention);
  std::map<std::string, nn::Tensor<double>> images;
  PreparedDataset out;
  auto add = [&](const TextImagePair& p) {
    PreparedPair pp;
    pp.pair = p;
    auto it = images.find(p.image_path);
    if (it == images.end()) {
      const auto img = io::read_png_rgb(m.resolve(p.image_path));
      if (img.width != p.width || img.height != p.height) {
        throw Error(ErrorKind::SchemaViolation, p.pair_id, "image size differs from the manifest");
      }
      it = images.emplace(p.image_path, model::preprocess_image<double>(img, input_size)).first;
    }
    pp.input = it->second;
    pp.fixations = fixation_map_for(m, p);
    pp.density = density_map(pp.fixations, sigma, Normalization::SumOne);
    pp.target = model_target(pp.fixations, sigma, input_size);
    out.push_back(std::move(pp));
  };
  if (pair_ids) {
    for (const auto& id : *pair_ids) {
      const auto* p = m.find(id);
      if (!p) throw Error(ErrorKind::InvalidArgument, id, "pair not in manifest");
      add(*p);
    }
  } else {
    for (const auto& p : m.pairs) add(p);
  }
  return out;
}

inline std::vector<const PreparedPair*> select(const PreparedDataset& d,
                                               const std::function<bool(const PreparedPair&)>& keep) {
  std::vector<const PreparedPair*> out;
  for (const auto& p : d) {
    if (keep(p)) out.push_back(&p);
  }
  return out;
}

inline std::vector<const PreparedPair*> all_of(const PreparedDataset& d) {
  return select(d, [](const PreparedPair&) { return true; });
}

// ---------------------------------------------------------------- evaluation

struct PairResult {
  std::string pair_id;
  ConditionType condition = ConditionType::Pure;
  metrics::MetricReport report;
};

inline model::TokenSequence tokens_for(const model::TgsalModel<double>& m, const PreparedPair& p, bool null_text) {
  return m.tokenize(null_text ? std::string_view{} : std::string_view{p.pair.text});
}

inline SaliencyMap predict_pair(const model::TgsalModel<double>& m, const PreparedPair& p, bool null_text) {
  const auto raw = m.predict_raw(p.input, tokens_for(m, p, null_text));
  const std::size_t S = m.config().input_size;
  Grid<double> g(S, S, raw.data);
  return {resize_bilinear(g, p.pair.width, p.pair.height)};
}

/// Evaluates every pair. The sAUC negative pool of a pair is the fixations
/// of the other images in the set.
inline std::vector<PairResult> evaluate(const model::TgsalModel<double>& m,
                                        const std::vector<const PreparedPair*>& pairs, const TrainConfig& cfg,
                                        std::uint64_t seed) {
  std::vector<PairResult> out;
  std::map<std::pair<std::size_t, std::size_t>, DensityMap> priors;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = *pairs[i];
    std::vector<FixationMap> pool;
    for (const auto* q : pairs) {
      if (q->pair.image_path != p.pair.image_path) pool.push_back(q->fixations);
    }
    auto key = std::pair{p.pair.width, p.pair.height};
    auto it = priors.find(key);
    if (it == priors.end()) it = priors.emplace(key, metrics::center_prior(key.first, key.second)).first;
    metrics::EvalConfig ec{cfg.eval_shuffles, seed + i};
    const auto pred = predict_pair(m, p, cfg.null_text);
    out.push_back({p.pair.pair_id, p.pair.condition,
                   metrics::evaluate_all(pred, p.fixations, p.density, pool, ec, &it->second)});
  }
  return out;
}

/// Per-metric means over reports; metrics absent everywhere stay absent.
struct MetricMeans {
  std::map<std::string, double> mean;
  std::map<std::string, std::size_t> count;

  void add(const metrics::MetricReport& r) {
    r.for_each([&](const char* name, const metrics::MetricValue& v) {
      if (!v.present()) return;
      auto& n = count[name];
      auto& m = mean[name];
      ++n;
      m += (*v - m) / static_cast<double>(n);
    });
  }
  std::optional<double> get(const std::string& name) const {
    auto it = mean.find(name);
    if (it == mean.end()) return std::nullopt;
    return it->second;
  }
};

inline MetricMeans mean_of(const std::vector<PairResult>& results) {
  MetricMeans m;
  for (const auto& r : results) m.add(r.report);
  return m;
}

inline nlohmann::ordered_json to_json(const MetricMeans& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const char* k : {"auc_j", "sauc", "cc", "ig", "kl", "nss", "sim"}) {
    if (auto v = m.get(k)) j[k] = *v;
    else j[k] = nullptr;
  }
  return j;
}

// ---------------------------------------------------------------- training

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<MetricMeans> val;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j{{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}};
  j["val_metrics"] = r.val ? to_json(*r.val) : nlohmann::ordered_json(nullptr);
  return j;
}

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_loss;  // mean batch loss per step
};

inline void write_history(const TrainHistory& h, const std::filesystem::path& path) {
  std::string text;
  for (const auto& e : h.epochs) text += to_json(e).dump() + "\n";
  io::write_text(path, text);
}

inline std::size_t total_steps(std::size_t n, const TrainConfig& cfg) {
  if (cfg.max_steps) return cfg.max_steps;
  return cfg.epochs * ((n + cfg.batch_size - 1) / cfg.batch_size);
}

namespace detail {

struct SampleResult {
  nn::GradBuffer<double> grads;
  LossTerms terms;
};

inline SampleResult sample_gradient(const model::TgsalModel<double>& m, const PreparedPair& p,
                                    const TrainConfig& cfg) {
  nn::Tape<double> t;
  const auto f = m.forward(t, p.input, tokens_for(m, p, cfg.null_text));
  SampleResult r;
  const auto l = loss_node(t, f.map, p.target, cfg.loss, &r.terms);
  t.backward(l, nn::Tensor<double>({1}, 1.0));
  r.grads = nn::zero_grads(m.params());
  t.accumulate(r.grads);
  return r;
}

}  // namespace detail

/// Mini-batch training with Adam and cosine annealing. Per-sample gradients
/// are reduced in batch order, so results do not depend on `threads`.
inline TrainHistory train(model::TgsalModel<double>& m, const std::vector<const PreparedPair*>& data,
                          const TrainConfig& cfg, const std::vector<const PreparedPair*>* val = nullptr,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorKind::InvalidArgument, "train", "no training pairs");
  auto& store = m.params();
  nn::Adam<double> opt(store);
  SplitMix64 rng(cfg.seed);
  const std::size_t steps = total_steps(data.size(), cfg);
  const std::size_t threads = std::max<std::size_t>(1, cfg.worker_threads());
  TrainHistory h;
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0, epoch = 0;
  while (step < steps) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t b = 0; b < order.size() && step < steps; b += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - b);
      std::vector<detail::SampleResult> res(B);
      auto work = [&](std::size_t w) {
        for (std::size_t i = w; i < B; i += threads) res[i] = detail::sample_gradient(m, *data[order[b + i]], cfg);
      };
      if (threads == 1 || B == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(threads, B); ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
      }
      auto grads = nn::zero_grads(store);
      double batch_loss = 0.0;
      for (const auto& r : res) {
        batch_loss += r.terms.value;
        for (std::size_t i = 0; i < grads.size(); ++i) {
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += r.grads[i][j];
        }
      }
      batch_loss /= static_cast<double>(B);
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorKind::Divergence, "step " + std::to_string(step), "loss is not finite");
      }
      for (auto& g : grads) {
        for (auto& v : g.data) v /= static_cast<double>(B);
      }
      opt.step(store, grads, lr_at(step, steps, cfg.lr_start, cfg.lr_end));
      h.step_loss.push_back(batch_loss);
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++step;
    }
    ++epoch;
    EpochRecord rec{epoch, lr_at(step, steps, cfg.lr_start, cfg.lr_end), epoch_loss / static_cast<double>(epoch_batches), {}};
    const bool last = step >= steps;
    if (val && !val->empty() && cfg.val_every && (epoch % cfg.val_every == 0 || last)) {
      rec.val = mean_of(evaluate(m, *val, cfg, cfg.seed));
    }
    h.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return h;
}

/// Mean training-loss terms over `data` without updating the model.
inline LossTerms mean_loss(const model::TgsalModel<double>& m, const std::vector<const PreparedPair*>& data,
                           const TrainConfig& cfg) {
  LossTerms acc;
  for (const auto* p : data) {
    nn::Tape<double> t(false);
    const auto f = m.forward(t, p->input, tokens_for(m, *p, cfg.null_text));
    LossTerms lt;
    loss_node(t, f.map, p->target, cfg.loss, &lt);
    acc.value += lt.value, acc.cc += lt.cc, acc.mse += lt.mse, acc.mae += lt.mae;
  }
  const double n = static_cast<double>(data.size());
  acc.value /= n, acc.cc /= n, acc.mse /= n, acc.mae /= n;
  return acc;
}

/// Mean Pearson CC between model-resolution predictions and targets.
inline double mean_train_cc(const model::TgsalModel<double>& m, const std::vector<const PreparedPair*>& data,
                            bool null_text) {
  double acc = 0.0;
  for (const auto* p : data) {
    const auto raw = m.predict_raw(p->input, tokens_for(m, *p, null_text));
    const std::size_t S = m.config().input_size;
    acc += metrics::cc(Grid<double>(S, S, raw.data), Grid<double>(S, S, p->target.data));
  }
  return acc / static_cast<double>(data.size());
}

}  // namespace tisal::training
