#pragma once

// Binary checkpoint container, all integers and floats little-endian:
//
//   "ACMTCKPT"            8 bytes magic
//   u32 version
//   u64 header length, header bytes (UTF-8 JSON describing the model)
//   u64 block count
//   per block: u32 name length, name, u32 rank, u64 dims[rank], f64 values[prod(dims)]
//   u8 has_adam
//   if has_adam: u64 step, f64 beta1, f64 beta2, f64 eps, then per block f64 m[], f64 v[]

#include <bit>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acmt/diff/adam.hpp"
#include "acmt/diff/tensor.hpp"
#include "acmt/error.hpp"
#include "acmt/mesh_io.hpp"

namespace acmt::diff {

inline constexpr std::string_view kCheckpointMagic = "ACMTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string header;  // self-description of architecture and hyper-parameters
  ParamStore params;
  std::optional<AdamState> adam;
};

namespace detail {

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::filesystem::path path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    const T v = io::detail::get_le<T>(reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw io::io_error(path_, "truncated checkpoint");
  }

  const std::string& bytes_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const std::string& header, const ParamStore& params, const AdamState* adam) {
  using io::detail::put_le;
  std::string out(kCheckpointMagic);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  put_le(out, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params.all()) {
    put_le(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_le(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_le(out, static_cast<std::uint64_t>(d));
    for (double v : p.value.values()) put_le(out, v);
  }
  put_le(out, static_cast<std::uint8_t>(adam ? 1 : 0));
  if (adam) {
    require(adam->m.size() == params.size(), ErrorCategory::mismatch, "Adam state does not match parameters");
    put_le(out, adam->step);
    put_le(out, adam->beta1);
    put_le(out, adam->beta2);
    put_le(out, adam->eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (double v : adam->m[k].values()) put_le(out, v);
      for (double v : adam->v[k].values()) put_le(out, v);
    }
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::string& header, const ParamStore& params,
                            const AdamState* adam = nullptr) {
  io::write_text_file(path, serialize_checkpoint(header, params, adam));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_text_file(path);
  detail::ByteReader in(bytes, path);
  if (in.get_string(kCheckpointMagic.size()) != kCheckpointMagic) throw io::io_error(path, "not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw io::io_error(path, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.header = in.get_string(static_cast<std::size_t>(in.get<std::uint64_t>()));
  const auto blocks = in.get<std::uint64_t>();
  ck.params.reserve(blocks);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    std::string name = in.get_string(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.get<std::uint64_t>());
      count *= d;
    }
    std::vector<double> values(count);
    for (auto& v : values) v = in.get<double>();
    ck.params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (in.get<std::uint8_t>()) {
    AdamState s = AdamState::for_params(ck.params);
    s.step = in.get<std::uint64_t>();
    s.beta1 = in.get<double>();
    s.beta2 = in.get<double>();
    s.eps = in.get<double>();
    for (std::size_t k = 0; k < ck.params.size(); ++k) {
      for (auto& v : s.m[k].values()) v = in.get<double>();
      for (auto& v : s.v[k].values()) v = in.get<double>();
    }
    ck.adam = std::move(s);
  }
  if (!in.at_end()) throw io::io_error(path, "trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace acmt::diff
