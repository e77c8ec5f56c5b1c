#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tisal/error.hpp"
#include "tisal/grid.hpp"
#include "tisal/io.hpp"
#include "tisal/rng.hpp"

namespace tisal {

namespace fs = std::filesystem;

enum class ConditionType { Pure, Type1General, Type2Salient, Type3NonSalient, Type4Common };

inline constexpr std::array<ConditionType, 5> kAllConditions = {
    ConditionType::Pure, ConditionType::Type1General, ConditionType::Type2Salient,
    ConditionType::Type3NonSalient, ConditionType::Type4Common};

inline std::string_view to_string(ConditionType c) {
  switch (c) {
    case ConditionType::Pure: return "pure";
    case ConditionType::Type1General: return "type1";
    case ConditionType::Type2Salient: return "type2";
    case ConditionType::Type3NonSalient: return "type3";
    case ConditionType::Type4Common: return "type4";
  }
  return "pure";
}

inline std::optional<ConditionType> parse_condition(std::string_view s) {
  for (auto c : kAllConditions) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (unsigned char ch : text) {
    const bool space = std::isspace(ch) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline constexpr std::size_t kMinTextWords = 5;
inline constexpr std::size_t kMaxTextWords = 25;
inline constexpr std::size_t kMinImageSide = 32;

struct TextImagePair {
  std::string pair_id;
  std::string image_path;  // relative to the manifest directory unless absolute
  std::size_t width = 0;
  std::size_t height = 0;
  ConditionType condition = ConditionType::Pure;
  std::string text;
  std::string fixation_path;

  bool operator==(const TextImagePair&) const = default;
};

struct FixationRecord {
  std::string subject_id;
  double x = 0.0;
  double y = 0.0;
  double timestamp_ms = 0.0;
  double duration_ms = 0.0;

  bool operator==(const FixationRecord&) const = default;
};

struct DatasetManifest {
  int version = 1;
  double pixels_per_degree = 38.0;
  std::vector<TextImagePair> pairs;
  fs::path base_dir;  // directory relative paths resolve against; not serialized

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  const TextImagePair* find(std::string_view pair_id) const {
    for (const auto& p : pairs) {
      if (p.pair_id == pair_id) return &p;
    }
    return nullptr;
  }

  bool operator==(const DatasetManifest& o) const {
    return version == o.version && pixels_per_degree == o.pixels_per_degree && pairs == o.pairs;
  }
};

// ---------------------------------------------------------------- manifest

namespace detail {

using ojson = nlohmann::ordered_json;

inline void expect_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> keys,
                        const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::SchemaViolation, where, "expected an object");
  for (auto k : keys) {
    if (!obj.contains(std::string(k))) {
      throw Error(ErrorKind::SchemaViolation, std::string(k), "missing in " + where);
    }
  }
  for (const auto& [k, v] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw Error(ErrorKind::SchemaViolation, k, "unknown field in " + where);
    }
  }
}

inline std::size_t get_dimension(const nlohmann::json& v, const char* field) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw Error(ErrorKind::SchemaViolation, field, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline std::string get_string(const nlohmann::json& v, const char* field) {
  if (!v.is_string()) throw Error(ErrorKind::SchemaViolation, field, "expected a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Checks every data-model invariant of one pair (but not file existence).
inline void validate_pair(const TextImagePair& p) {
  if (p.pair_id.empty()) throw Error(ErrorKind::SchemaViolation, "pair_id", "empty");
  if (p.width < kMinImageSide) throw Error(ErrorKind::SchemaViolation, "width", p.pair_id + ": below 32 px");
  if (p.height < kMinImageSide) throw Error(ErrorKind::SchemaViolation, "height", p.pair_id + ": below 32 px");
  const auto words = word_count(p.text);
  if (words > kMaxTextWords) throw Error(ErrorKind::SchemaViolation, "text", p.pair_id + ": more than 25 words");
  if (p.condition == ConditionType::Pure) {
    if (words != 0) throw Error(ErrorKind::ConditionTextMismatch, p.pair_id, "pure pair carries text");
  } else if (words < kMinTextWords) {
    throw Error(ErrorKind::ConditionTextMismatch, p.pair_id, "guided pair needs at least 5 words");
  }
}

inline void validate_manifest(const DatasetManifest& m, bool check_files = true) {
  if (!(m.pixels_per_degree > 0.0) || !std::isfinite(m.pixels_per_degree)) {
    throw Error(ErrorKind::SchemaViolation, "pixels_per_degree", "must be > 0");
  }
  std::set<std::string> ids;
  for (const auto& p : m.pairs) {
    validate_pair(p);
    if (!ids.insert(p.pair_id).second) {
      throw Error(ErrorKind::SchemaViolation, "pair_id", "duplicate " + p.pair_id);
    }
    if (check_files) {
      for (const auto* f : {&p.image_path, &p.fixation_path}) {
        if (!fs::exists(m.resolve(*f))) throw Error(ErrorKind::MissingFile, *f);
      }
    }
  }
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir,
                                          bool check_files = true) {
  detail::expect_keys(j, {"version", "pixels_per_degree", "pairs"}, "manifest");
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  if (!j["version"].is_number_integer()) throw Error(ErrorKind::SchemaViolation, "version");
  m.version = j["version"].get<int>();
  if (!j["pixels_per_degree"].is_number()) throw Error(ErrorKind::SchemaViolation, "pixels_per_degree");
  m.pixels_per_degree = j["pixels_per_degree"].get<double>();
  if (!j["pairs"].is_array()) throw Error(ErrorKind::SchemaViolation, "pairs", "expected an array");
  for (const auto& jp : j["pairs"]) {
    detail::expect_keys(jp, {"pair_id", "image_path", "width", "height", "condition", "text",
                             "fixation_path"},
                        "pair");
    TextImagePair p;
    p.pair_id = detail::get_string(jp["pair_id"], "pair_id");
    p.image_path = detail::get_string(jp["image_path"], "image_path");
    p.width = detail::get_dimension(jp["width"], "width");
    p.height = detail::get_dimension(jp["height"], "height");
    const auto cond = parse_condition(detail::get_string(jp["condition"], "condition"));
    if (!cond) throw Error(ErrorKind::SchemaViolation, "condition", p.pair_id);
    p.condition = *cond;
    p.text = detail::get_string(jp["text"], "text");
    p.fixation_path = detail::get_string(jp["fixation_path"], "fixation_path");
    m.pairs.push_back(std::move(p));
  }
  validate_manifest(m, check_files);
  return m;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  detail::ojson j;
  j["version"] = m.version;
  j["pixels_per_degree"] = m.pixels_per_degree;
  j["pairs"] = detail::ojson::array();
  for (const auto& p : m.pairs) {
    detail::ojson jp;
    jp["pair_id"] = p.pair_id;
    jp["image_path"] = p.image_path;
    jp["width"] = p.width;
    jp["height"] = p.height;
    jp["condition"] = std::string(to_string(p.condition));
    jp["text"] = p.text;
    jp["fixation_path"] = p.fixation_path;
    j["pairs"].push_back(std::move(jp));
  }
  return j;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  const std::string text = io::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, "json", e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  io::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

/// Counts pairs per condition.
inline std::map<ConditionType, std::size_t> condition_counts(const DatasetManifest& m) {
  std::map<ConditionType, std::size_t> counts;
  for (auto c : kAllConditions) counts[c] = 0;
  for (const auto& p : m.pairs) ++counts[p.condition];
  return counts;
}

// ---------------------------------------------------------------- split

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Stratified, image-grouped split. Images are grouped by the set of
/// conditions they appear under; each group is shuffled with the seed and
/// cut at round(train_fraction * n), keeping at least one image per side.
/// Every pair of an image lands on the same side. Output order follows
/// manifest order.
inline DatasetSplit split_dataset(const DatasetManifest& m, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "train_fraction", "must lie in (0, 1)");
  }
  if (m.pairs.empty()) throw Error(ErrorKind::InvalidArgument, "manifest", "no pairs");

  // image -> bitmask of conditions, in first-seen order
  std::vector<std::string> images;
  std::map<std::string, unsigned> signature;
  for (const auto& p : m.pairs) {
    auto [it, fresh] = signature.try_emplace(p.image_path, 0u);
    if (fresh) images.push_back(p.image_path);
    it->second |= 1u << static_cast<unsigned>(p.condition);
  }
  std::map<unsigned, std::vector<std::string>> strata;
  for (const auto& img : images) strata[signature[img]].push_back(img);

  SplitMix64 rng(seed);
  std::set<std::string> train_images;
  for (auto& [mask, members] : strata) {
    if (members.size() < 2) {
      ConditionType first = ConditionType::Pure;
      for (auto c : kAllConditions) {
        if (mask & (1u << static_cast<unsigned>(c))) {
          first = c;
          break;
        }
      }
      throw Error(ErrorKind::EmptyCondition, std::string(to_string(first)),
                  "stratum needs at least 2 images");
    }
    auto order = members;
    rng.shuffle(order);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    train_images.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  }

  DatasetSplit split;
  for (const auto& p : m.pairs) {
    (train_images.count(p.image_path) ? split.train : split.test).push_back(p.pair_id);
  }
  return split;
}

// ---------------------------------------------------------------- fixations

inline constexpr std::string_view kFixationHeader = "subject_id,x,y,timestamp_ms,duration_ms";
inline constexpr double kBorderClampFraction = 0.05;

struct FixationLoad {
  std::vector<FixationRecord> records;
  std::size_t dropped = 0;  // far out-of-bounds rows
  std::size_t clamped = 0;  // near-border rows pulled inside
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

// Returns false when the coordinate lies too far outside [0, extent).
inline bool clamp_coordinate(double& v, std::size_t extent, bool& clamped) {
  const double e = static_cast<double>(extent);
  const double margin = kBorderClampFraction * e;
  if (v >= 0.0 && v < e) return true;
  if (v < 0.0 && v >= -margin) {
    v = 0.0;
    clamped = true;
    return true;
  }
  if (v >= e && v < e + margin) {
    v = std::nextafter(e, 0.0);
    clamped = true;
    return true;
  }
  return false;
}

}  // namespace detail

inline FixationLoad parse_fixations(const std::string& text, std::size_t width, std::size_t height) {
  FixationLoad out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kFixationHeader) throw Error(ErrorKind::MalformedRow, "1", "bad header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    FixationRecord r;
    if (fields.size() != 5 || fields[0].empty() || !detail::parse_double(fields[1], r.x) ||
        !detail::parse_double(fields[2], r.y) || !detail::parse_double(fields[3], r.timestamp_ms) ||
        !detail::parse_double(fields[4], r.duration_ms) || r.duration_ms < 0.0) {
      throw Error(ErrorKind::MalformedRow, std::to_string(line_no));
    }
    r.subject_id = std::string(fields[0]);
    ++data_rows;
    bool clamped = false;
    if (!detail::clamp_coordinate(r.x, width, clamped) ||
        !detail::clamp_coordinate(r.y, height, clamped)) {
      ++out.dropped;
      continue;
    }
    if (clamped) ++out.clamped;
    out.records.push_back(std::move(r));
  }
  if (line_no == 0) throw Error(ErrorKind::MalformedRow, "1", "missing header");
  if (data_rows > 0 && out.records.empty()) throw Error(ErrorKind::AllRowsOutOfBounds);
  return out;
}

/// Reads a fixation CSV and applies the border policy: coordinates within
/// 5% of the image extent outside the border are clamped inside, anything
/// further out is dropped and tallied.
inline FixationLoad load_fixations(const fs::path& path, std::size_t width, std::size_t height) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
  return parse_fixations(io::read_text(path), width, height);
}

inline std::string format_fixations(const std::vector<FixationRecord>& records) {
  std::string out(kFixationHeader);
  out += '\n';
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), ",%.3f,%.3f,%.3f,%.3f\n", r.x, r.y, r.timestamp_ms,
                  r.duration_ms);
    out += r.subject_id;
    out += buf;
  }
  return out;
}

inline void save_fixations(const fs::path& path, const std::vector<FixationRecord>& records) {
  io::write_text(path, format_fixations(records));
}

// ---------------------------------------------------------------- fixtures

struct FixtureSpec {
  std::size_t images = 4;  // images per group: general group (pure+type1) and object group (pure+type2..4)
  std::size_t subjects = 15;
  std::size_t fixations_per_subject = 6;
  std::size_t width = 320;
  std::size_t height = 240;
  double pixels_per_degree = 38.0;
  bool general_group = true;
  bool object_group = true;
};

struct Box {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Planted geometry of one synthetic image: a large "salient" disc and a
/// small "non-salient" square.
struct FixtureLayout {
  double salient_cx, salient_cy, salient_radius;
  double minor_cx, minor_cy, minor_half;
  std::size_t salient_color, minor_color;
  std::array<std::uint8_t, 3> background;

  Box salient_box() const {
    return {salient_cx - salient_radius, salient_cy - salient_radius,
            salient_cx + salient_radius, salient_cy + salient_radius};
  }
  Box minor_box() const {
    return {minor_cx - minor_half, minor_cy - minor_half, minor_cx + minor_half,
            minor_cy + minor_half};
  }
};

namespace detail {

struct NamedColor {
  const char* name;
  std::array<std::uint8_t, 3> rgb;
};

inline constexpr std::array<NamedColor, 4> kSalientColors = {{
    {"red", {225, 35, 35}}, {"green", {40, 190, 60}}, {"blue", {45, 80, 230}}, {"yellow", {235, 205, 35}}}};
inline constexpr std::array<NamedColor, 4> kMinorColors = {{
    {"purple", {120, 85, 140}}, {"brown", {125, 90, 60}}, {"teal", {60, 125, 125}}, {"olive", {115, 120, 60}}}};

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  SplitMix64 mix(seed ^ (0xD1B54A32D192ED03ULL * (a + 1)) ^ (0x8CB92BA72F3D8DD7ULL * (b + 1)));
  return mix.next();
}

// Mixture weights (salient, minor, broad) per condition.
inline std::array<double, 3> fixation_mixture(ConditionType c) {
  switch (c) {
    case ConditionType::Pure: return {0.70, 0.10, 0.20};
    case ConditionType::Type1General: return {0.45, 0.10, 0.45};
    case ConditionType::Type2Salient: return {0.85, 0.05, 0.10};
    case ConditionType::Type3NonSalient: return {0.12, 0.80, 0.08};
    case ConditionType::Type4Common: return {0.55, 0.35, 0.10};
  }
  return {1.0, 0.0, 0.0};
}

}  // namespace detail

inline FixtureLayout fixture_layout(const FixtureSpec& spec, std::uint64_t seed,
                                    std::size_t image_index) {
  SplitMix64 rng(detail::stream_seed(seed, image_index));
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  const double side = std::min(w, h);
  FixtureLayout L{};
  L.salient_radius = side * rng.uniform(0.14, 0.19);
  L.minor_half = side * rng.uniform(0.06, 0.08);
  L.salient_color = rng.index(detail::kSalientColors.size());
  L.minor_color = rng.index(detail::kMinorColors.size());
  const auto gray = static_cast<std::uint8_t>(100 + rng.index(50));
  L.background = {gray, gray, gray};
  L.salient_cx = rng.uniform(L.salient_radius + 1, w - L.salient_radius - 1);
  L.salient_cy = rng.uniform(L.salient_radius + 1, h - L.salient_radius - 1);
  const double min_gap = L.salient_radius + 1.5 * L.minor_half + 2.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    L.minor_cx = rng.uniform(L.minor_half + 1, w - L.minor_half - 1);
    L.minor_cy = rng.uniform(L.minor_half + 1, h - L.minor_half - 1);
    if (std::hypot(L.minor_cx - L.salient_cx, L.minor_cy - L.salient_cy) > min_gap) break;
  }
  return L;
}

inline RgbImage render_fixture_image(const FixtureSpec& spec, const FixtureLayout& L,
                                     std::uint64_t noise_seed) {
  RgbImage img(spec.width, spec.height);
  SplitMix64 noise(noise_seed);
  const auto& sc = detail::kSalientColors[L.salient_color].rgb;
  const auto& mc = detail::kMinorColors[L.minor_color].rgb;
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      std::array<std::uint8_t, 3> c = L.background;
      const int jitter = static_cast<int>(noise.index(17)) - 8;
      for (auto& ch : c) ch = static_cast<std::uint8_t>(std::clamp(int(ch) + jitter, 0, 255));
      if (std::hypot(px - L.salient_cx, py - L.salient_cy) <= L.salient_radius) c = sc;
      if (L.minor_box().contains(px, py)) c = mc;
      img.set(y, x, c[0], c[1], c[2]);
    }
  }
  return img;
}

inline std::string fixture_text(ConditionType c, const FixtureLayout& L) {
  const std::string big = detail::kSalientColors[L.salient_color].name;
  const std::string small = detail::kMinorColors[L.minor_color].name;
  switch (c) {
    case ConditionType::Pure: return "";
    case ConditionType::Type1General: return "a simple scene with a few shapes resting on a plain gray background";
    case ConditionType::Type2Salient: return "a large " + big + " circle stands out clearly in the picture";
    case ConditionType::Type3NonSalient: return "look for the small " + small + " square placed away from the circle";
    case ConditionType::Type4Common: return "a large " + big + " circle and a small " + small + " square share the scene";
  }
  return "";
}

inline std::vector<FixationRecord> sample_fixture_fixations(const FixtureSpec& spec,
                                                            const FixtureLayout& L,
                                                            ConditionType c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const auto weights = detail::fixation_mixture(c);
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  std::vector<FixationRecord> out;
  out.reserve(spec.subjects * spec.fixations_per_subject);
  char sid[32];
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    std::snprintf(sid, sizeof(sid), "s%02zu", s + 1);
    double t = 0.0;
    for (std::size_t k = 0; k < spec.fixations_per_subject; ++k) {
      const double u = rng.uniform();
      double cx, cy, sx, sy;
      if (u < weights[0]) {
        cx = L.salient_cx, cy = L.salient_cy, sx = sy = 0.5 * L.salient_radius;
      } else if (u < weights[0] + weights[1]) {
        cx = L.minor_cx, cy = L.minor_cy, sx = sy = 0.5 * L.minor_half;
      } else {
        cx = 0.5 * w, cy = 0.5 * h, sx = 0.25 * w, sy = 0.25 * h;
      }
      double x = 0.0, y = 0.0;
      for (int tries = 0; tries < 100; ++tries) {
        x = rng.normal(cx, sx);
        y = rng.normal(cy, sy);
        if (x >= 0.0 && x < w && y >= 0.0 && y < h) break;
        x = std::clamp(x, 0.0, w - 1.0);
        y = std::clamp(y, 0.0, h - 1.0);
      }
      const double duration = std::round(rng.uniform(150.0, 450.0));
      out.push_back({sid, x, y, t, duration});
      t += duration + std::round(rng.uniform(20.0, 60.0));
    }
  }
  return out;
}

/// Writes a synthetic dataset into `out_dir` (images/, fixations/,
/// manifest.json) and returns the manifest. Deterministic given the seed.
inline DatasetManifest generate_fixtures(const FixtureSpec& spec, std::uint64_t seed,
                                         const fs::path& out_dir) {
  if (spec.images < 1 || spec.subjects < 1 || spec.fixations_per_subject < 1 ||
      (!spec.general_group && !spec.object_group)) {
    throw Error(ErrorKind::InvalidArgument, "fixture spec", "need >= 1 image per condition");
  }
  if (spec.width < kMinImageSide || spec.height < kMinImageSide) {
    throw Error(ErrorKind::InvalidArgument, "fixture spec", "images must be at least 32x32");
  }
  DatasetManifest m;
  m.pixels_per_degree = spec.pixels_per_degree;
  m.base_dir = out_dir;

  struct Group {
    const char* tag;
    std::vector<ConditionType> conditions;
  };
  std::vector<Group> groups;
  if (spec.general_group) groups.push_back({"g", {ConditionType::Pure, ConditionType::Type1General}});
  if (spec.object_group) {
    groups.push_back({"o", {ConditionType::Pure, ConditionType::Type2Salient,
                            ConditionType::Type3NonSalient, ConditionType::Type4Common}});
  }

  std::size_t image_index = 0;
  char name[64];
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < spec.images; ++i, ++image_index) {
      const auto layout = fixture_layout(spec, seed, image_index);
      std::snprintf(name, sizeof(name), "%s%04zu", g.tag, i);
      const std::string image_rel = std::string("images/") + name + ".png";
      io::write_png_rgb(out_dir / image_rel,
                        render_fixture_image(spec, layout, detail::stream_seed(seed, image_index, 99)));
      for (auto c : g.conditions) {
        TextImagePair p;
        p.pair_id = std::string(name) + "_" + std::string(to_string(c));
        p.image_path = image_rel;
        p.width = spec.width;
        p.height = spec.height;
        p.condition = c;
        p.text = fixture_text(c, layout);
        p.fixation_path = "fixations/" + p.pair_id + ".csv";
        const auto fix = sample_fixture_fixations(
            spec, layout, c, detail::stream_seed(seed, image_index, 1 + static_cast<unsigned>(c)));
        save_fixations(out_dir / p.fixation_path, fix);
        m.pairs.push_back(std::move(p));
      }
    }
  }
  validate_manifest(m);
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace tisal
