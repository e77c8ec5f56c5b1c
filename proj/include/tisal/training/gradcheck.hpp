#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tisal/model/tgsal.hpp"
#include "tisal/training/loss.hpp"

namespace tisal::training {

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> ids = {"loss", "gtff", "ltff", "fusion_attention", "hfr",
                                               "text_encoder", "image_encoder", "forward"};
  return ids;
}

struct GradCheckReport {
  std::string module;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t trials = 0;
  std::size_t coordinates = 0;
};

/// Small 32×32 model used by the gradient checks.
inline model::ModelConfig gradcheck_config() {
  model::ModelConfig c;
  c.input_size = 32;
  c.stem_width = 4;
  c.encoder_widths = {4, 6, 6, 8};
  c.bottleneck_width = 8;
  c.decoder_widths = {8, 8, 4};
  c.attention_heads = 2;
  c.text_embed_dim = 8;
  c.text_vocab = 64;
  c.text_layers = 1;
  c.text_heads = 2;
  c.text_mlp_width = 16;
  c.max_tokens = 16;
  return c;
}

namespace detail {

// Relative to the module's RMS gradient, tensor gradients below this are
// treated as zero.
inline constexpr double kGradFloor = 1e-3;

using Objective = std::function<nn::Var(nn::Tape<double>&, const std::vector<nn::Var>&)>;

inline nn::Tensor<double> random_tensor(nn::Shape s, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Random linear functional of a node: a scalar objective with a dense gradient.
inline nn::Var project(nn::Tape<double>& t, nn::Var v, SplitMix64& rng) {
  return nn::ops::dot_const(t, v, random_tensor(t.shape(v), rng));
}

// Zero biases put dead ReLU inputs exactly on the kink, where central
// differences are meaningless.
inline void randomize_biases(nn::ParamStore<double>& store, SplitMix64& rng) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const auto& n = p.name;
    if (n.size() >= 5 && n.compare(n.size() - 5, 5, ".bias") == 0) {
      for (auto& v : p.value.data) v = rng.uniform(-0.2, 0.2);
    }
  }
}

// Norm-based relative error between analytic and central-difference
// gradients over sampled coordinates of each tensor; the worst tensor wins.
inline void check_instance(nn::ParamStore<double>& store, const std::string& prefix,
                           std::vector<nn::Tensor<double>>& inputs, const Objective& objective,
                           std::size_t samples, double eps, SplitMix64& rng, GradCheckReport& rep) {
  randomize_biases(store, rng);
  nn::Tape<double> t;
  std::vector<nn::Var> in;
  for (const auto& x : inputs) in.push_back(t.input(x, true));
  const nn::Var out = objective(t, in);
  t.backward(out, nn::Tensor<double>({1}, 1.0));
  std::vector<nn::Tensor<double>> input_grads;
  for (std::size_t i = 0; i < in.size(); ++i) {
    input_grads.push_back(t.has_grad(in[i]) ? t.grad(in[i]) : nn::Tensor<double>(inputs[i].shape));
  }
  auto param_grads = nn::zero_grads(store);
  t.accumulate(param_grads);

  auto eval = [&] {
    nn::Tape<double> e(false);
    std::vector<nn::Var> ein;
    for (const auto& x : inputs) ein.push_back(e.input(x, false));
    return e.value(objective(e, ein))[0];
  };
  struct Sampled {
    std::string name;
    std::vector<double> analytic, numeric;
  };
  std::vector<Sampled> sampled;
  auto check = [&](std::vector<double>& values, const std::vector<double>& analytic, const std::string& name) {
    const std::size_t n = values.size();
    if (n == 0) return;
    Sampled s{name, {}, {}};
    auto probe = [&](std::size_t i) {
      const double v = values[i];
      values[i] = v + eps;
      const double fp = eval();
      values[i] = v - eps;
      const double fm = eval();
      values[i] = v;
      s.analytic.push_back(analytic[i]);
      s.numeric.push_back((fp - fm) / (2.0 * eps));
    };
    if (n <= samples) {
      for (std::size_t i = 0; i < n; ++i) probe(i);
    } else {
      for (std::size_t i = 0; i < samples; ++i) probe(rng.index(n));
    }
    sampled.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) check(inputs[i].data, input_grads[i].data, "input" + std::to_string(i));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable || p.name.rfind(prefix, 0) != 0) continue;
    check(p.value.data, param_grads[i].data, p.name);
  }

  // The zero floor scales with the typical gradient so tensors whose exact
  // gradient vanishes (attention key biases) do not report pure noise.
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sampled) {
    for (double a : s.analytic) total += a * a;
    count += s.analytic.size();
  }
  const double rms = count ? std::sqrt(total / static_cast<double>(count)) : 0.0;
  for (const auto& s : sampled) {
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t k = 0; k < s.analytic.size(); ++k) {
      const double a = s.analytic[k], n = s.numeric[k];
      diff += (a - n) * (a - n), na += a * a, nn_ += n * n;
    }
    const double floor = std::max(kGradFloor * rms * std::sqrt(static_cast<double>(s.analytic.size())), 1e-300);
    const double err = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn_), floor);
    rep.coordinates += s.analytic.size();
    if (err >= rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_tensor = s.name;
    }
  }
}

}  // namespace detail

/// Compares analytic gradients of (objective ∘ module) with central finite
/// differences on `trials` random float64 instances. Module objectives are
/// random linear functionals of the module output, except "loss" and
/// "forward", which use the training loss.
inline GradCheckReport gradient_check(const std::string& module_id, std::size_t trials = 2, double epsilon = 1e-6,
                                      std::size_t samples = 24, std::uint64_t seed = 1) {
  using nn::Tape;
  using nn::Var;
  GradCheckReport rep;
  rep.module = module_id;
  const auto cfg = gradcheck_config();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    SplitMix64 rng(seed * 0x9E3779B97F4A7C15ULL + trial);
    auto wrng = rng.fork();
    nn::ParamStore<double> store;
    std::vector<nn::Tensor<double>> inputs;
    detail::Objective obj;
    std::string prefix;
    if (module_id == "loss") {
      inputs.push_back(detail::random_tensor({1, 12, 12}, rng, 0.05, 0.95));
      auto target = detail::random_tensor({1, 12, 12}, rng, 0.0, 1.0);
      obj = [target](Tape<double>& t, const std::vector<Var>& in) { return loss_node(t, in[0], target, LossConfig{}); };
    } else if (module_id == "gtff") {
      auto gtff = std::make_shared<model::Gtff<double>>(store, cfg, rng);
      prefix = "gtff";
      inputs.push_back(detail::random_tensor({cfg.bottleneck_width, 3, 3}, rng));
      inputs.push_back(detail::random_tensor({cfg.text_embed_dim}, rng));
      const auto w = detail::random_tensor({cfg.decoder_widths[0], 6, 6}, wrng);
      obj = [gtff, w](Tape<double>& t, const std::vector<Var>& in) {
        return nn::ops::dot_const(t, (*gtff)(t, in[0], in[1], 6, 6), w);
      };
    } else if (module_id == "ltff" || module_id == "hfr") {
      const bool ltff = module_id == "ltff";
      const std::size_t level = ltff ? 0 : 2;
      const std::size_t n = cfg.levels();
      const std::size_t in_w = level == 0 ? cfg.decoder_widths[0] : cfg.decoder_widths[level - 1];
      const std::size_t skip = cfg.encoder_widths[n - 2 - level];
      auto dec = std::make_shared<model::DecoderLevel<double>>(store, cfg, level, in_w, skip, rng);
      prefix = "decoder.level" + std::to_string(level);
      inputs.push_back(detail::random_tensor({in_w, 4, 4}, rng));
      inputs.push_back(detail::random_tensor({skip, 4, 4}, rng));
      if (ltff) inputs.push_back(detail::random_tensor({5, cfg.text_embed_dim}, rng));
      const auto w = detail::random_tensor({cfg.decoder_widths[level], 8, 8}, wrng);
      obj = [dec, w, ltff](Tape<double>& t, const std::vector<Var>& in) {
        std::optional<Var> tl;
        if (ltff) tl = in[2];
        return nn::ops::dot_const(t, (*dec)(t, in[0], in[1], tl, 8, 8), w);
      };
    } else if (module_id == "fusion_attention") {
      const std::size_t width = cfg.decoder_widths[0];
      auto fa = std::make_shared<model::FusionAttention<double>>(store, "fusion", width, cfg.text_embed_dim,
                                                                 cfg.attention_heads, rng);
      prefix = "fusion";
      inputs.push_back(detail::random_tensor({6, width}, rng));
      inputs.push_back(detail::random_tensor({4, cfg.text_embed_dim}, rng));
      const auto w = detail::random_tensor({6, width}, wrng);
      obj = [fa, w](Tape<double>& t, const std::vector<Var>& in) {
        return nn::ops::dot_const(t, (*fa)(t, in[0], in[1]).output, w);
      };
    } else if (module_id == "text_encoder") {
      auto te = std::make_shared<model::TextEncoder<double>>(store, cfg, rng);
      prefix = "text.";
      const auto seq = te->tokenize("a small teal square placed away from the circle");
      const auto wg = detail::random_tensor({cfg.text_embed_dim}, wrng);
      const auto wl = detail::random_tensor({seq.length(), cfg.text_embed_dim}, wrng);
      obj = [te, seq, wg, wl](Tape<double>& t, const std::vector<Var>&) {
        const auto o = (*te)(t, seq);
        return nn::ops::add(t, nn::ops::dot_const(t, o.global, wg), nn::ops::dot_const(t, o.local, wl));
      };
    } else if (module_id == "image_encoder") {
      auto ie = std::make_shared<model::ImageEncoder<double>>(store, cfg, rng);
      prefix = "image.";
      inputs.push_back(detail::random_tensor({3, cfg.input_size, cfg.input_size}, rng));
      auto probe = std::make_shared<SplitMix64>(wrng.fork());
      obj = [ie, probe](Tape<double>& t, const std::vector<Var>& in) {
        const auto f = (*ie)(t, in[0]);
        SplitMix64 r = *probe;
        Var s = detail::project(t, f.bottleneck, r);
        for (auto l : f.levels) s = nn::ops::add(t, s, detail::project(t, l, r));
        return s;
      };
    } else if (module_id == "forward") {
      auto mc = cfg;
      mc.init_seed = rng.next();
      auto m = std::make_shared<model::TgsalModel<double>>(mc);
      inputs.push_back(detail::random_tensor({3, cfg.input_size, cfg.input_size}, rng));
      const auto seq = m->tokenize("look for the small teal square placed away from the circle");
      const auto target = detail::random_tensor({1, cfg.input_size, cfg.input_size}, rng, 0.0, 1.0);
      obj = [m, seq, target](Tape<double>& t, const std::vector<Var>& in) {
        return loss_node(t, m->forward(t, in[0], seq).map, target, LossConfig{});
      };
      // the model owns its parameters; check them in place
      detail::check_instance(m->params(), prefix, inputs, obj, samples, epsilon, rng, rep);
      ++rep.trials;
      continue;
    } else {
      throw Error(ErrorKind::InvalidArgument, "gradient_check", "unknown module " + module_id);
    }
    detail::check_instance(store, prefix, inputs, obj, samples, epsilon, rng, rep);
    ++rep.trials;
  }
  return rep;
}

}  // namespace tisal::training
