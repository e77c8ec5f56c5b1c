#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "tisal/io.hpp"
#include "tisal/model/tgsal.hpp"

namespace tisal::model {

inline constexpr char kCheckpointMagic[4] = {'T', 'G', 'S', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "TGSC", u32 version, u32 config length, config
// JSON, u32 tensor count, then per tensor: u32 name length, name, u32 rank,
// u32 dims[rank], f32 data.
template <typename T>
std::string encode_checkpoint(const TgsalModel<T>& model) {
  using io::detail::put_le;
  std::string buf(kCheckpointMagic, 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  const std::string cfg = to_json(model.config()).dump();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.size()));
  buf += cfg;
  const auto& store = model.params();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (auto v : p.value.data) put_le<float>(buf, static_cast<float>(v));
  }
  return buf;
}

namespace detail {

class Reader {
 public:
  Reader(const std::string& buf, std::string name) : buf_(buf), name_(std::move(name)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    const U v = io::detail::get_le<U>(buf_.data() + pos_);
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorKind::SchemaViolation, name_, "truncated checkpoint");
  }
  const std::string& buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T = double>
TgsalModel<T> decode_checkpoint(const std::string& buf, const std::string& name = "checkpoint") {
  detail::Reader r(buf, name);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw Error(ErrorKind::SchemaViolation, name, "bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::SchemaViolation, name, "unsupported version " + std::to_string(version));
  }
  const std::string cfg_text = r.bytes(r.get<std::uint32_t>());
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(cfg_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, name, e.what());
  }
  TgsalModel<T> model(model_config_from_json(cfg_json));
  auto& store = model.params();
  const auto count = r.get<std::uint32_t>();
  if (count != store.size()) throw Error(ErrorKind::SchemaViolation, name, "tensor count does not match config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string pname = r.bytes(r.get<std::uint32_t>());
    auto* p = store.find(pname);
    if (!p) throw Error(ErrorKind::SchemaViolation, name, "unknown tensor " + pname);
    nn::Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != p->value.shape) throw Error(ErrorKind::SchemaViolation, name, "shape mismatch for " + pname);
    for (auto& v : p->value.data) v = static_cast<T>(r.get<float>());
  }
  if (!r.done()) throw Error(ErrorKind::SchemaViolation, name, "trailing bytes");
  return model;
}

template <typename T>
void save_checkpoint(const TgsalModel<T>& model, const std::filesystem::path& path) {
  io::write_text(path, encode_checkpoint(model));
}

template <typename T = double>
TgsalModel<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::MissingCheckpoint, path.string());
  return decode_checkpoint<T>(io::read_text(path), path.string());
}

}  // namespace tisal::model
