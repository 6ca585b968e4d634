// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Self-describing binary checkpoints.
 *
 * Layout (all integers and reals little-endian):
 *
 *   "CGANCKPT"                8 bytes
 *   u32 version               = 1
 *   u64 header length, then header text: "key=value\n" lines
 *   u64 tensor count, then per tensor:
 *       u32 name length, name bytes
 *       u8  dtype (0 = f32, 1 = f64)
 *       u64 rows, u64 cols
 *       rows*cols values, column-major
 *   u64 history length, then training log lines (may be empty)
 *
 * Tensor names are "param/<path>", "buffer/<path>", "adam_m/<path>" and
 * "adam_v/<path>". The header carries the architecture, the scalar type,
 * and for training checkpoints the iteration, optimizer step counters and
 * RNG state.
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>

#include "png_io.hpp"
#include "trainer.hpp"

namespace cgan {

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
               std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(bits & 0xff));
    if constexpr (sizeof(U) > 1) bits >>= 8;
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  template <typename U>
  U get() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<Bits>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("checkpoint '" + name_ + "': " + what);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated file");
  }
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

inline std::string arch_header(const Architecture& a) {
  std::ostringstream os;
  os << "generators=" << a.generators << "\nlatent_dim=" << a.latent_dim << "\nhidden_dim=" << a.hidden_dim
     << "\nimage_size=" << a.image_size << "\ngen_width=" << a.gen_width << "\ndisc_width=" << a.disc_width
     << "\nencoders=" << (a.encoders ? 1 : 0) << "\n";
  return os.str();
}

inline int header_int(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw IoError("checkpoint header lacks '" + key + "'");
  return std::stoi(it->second);
}

} // namespace detail

template <typename T>
struct Checkpoint {
  ModelBundle<T> bundle;
  std::optional<TrainState<T>> state;
  std::map<std::string, std::string> header;
};

/// Serializes a model and, optionally, its training state.
template <typename T>
std::string serialize_checkpoint(const ModelBundle<T>& bundle_in, const TrainState<T>* state_in = nullptr,
                                 const std::map<std::string, std::string>& extra = {}) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  // visit() is non-const by design; serialization reads through copies.
  ModelBundle<T> bundle = bundle_in;
  std::string header = "format=cgan-checkpoint\nscalar=" + std::string(std::is_same_v<T, float> ? "f32" : "f64") +
                       "\n" + detail::arch_header(bundle.arch);
  std::optional<TrainState<T>> state;
  if (state_in) {
    state = *state_in;
    std::ostringstream os;
    os << "iteration=" << state->iteration << "\nsteps_conditioner=" << state->steps_conditioner
       << "\nsteps_discriminator=" << state->steps_discriminator << "\n";
    for (std::size_t i = 0; i < state->steps_generators.size(); ++i)
      os << "steps_generator" << i << "=" << state->steps_generators[i] << "\n";
    for (std::size_t i = 0; i < state->steps_encoders.size(); ++i)
      os << "steps_encoder" << i << "=" << state->steps_encoders[i] << "\n";
    os << "rng=" << state->rng << "\n";
    header += os.str();
  }
  for (const auto& [k, v] : extra) {
    if (v.find('\n') != std::string::npos) throw ArgumentError("checkpoint header values must be single-line");
    header += k + "=" + v + "\n";
  }

  std::vector<std::pair<std::string, const Matrix<T>*>> tensors;
  for (const auto& p : parameters(bundle)) tensors.emplace_back("param/" + p.name, p.value);
  for (const auto& p : buffers(bundle)) tensors.emplace_back("buffer/" + p.name, p.value);
  if (state) {
    for (const auto& p : parameters(state->moment1)) tensors.emplace_back("adam_m/" + p.name, p.value);
    for (const auto& p : parameters(state->moment2)) tensors.emplace_back("adam_v/" + p.name, p.value);
  }

  std::string out(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::put_le(out, detail::kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  detail::put_le(out, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le(out, detail::dtype_code<T>());
    detail::put_le(out, static_cast<std::uint64_t>(m->rows()));
    detail::put_le(out, static_cast<std::uint64_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) detail::put_le(out, m->data()[i]);
  }
  std::string history;
  if (state)
    for (const auto& r : state->history) history += r.to_line() + "\n";
  detail::put_le(out, static_cast<std::uint64_t>(history.size()));
  out += history;
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelBundle<T>& bundle,
                     const TrainState<T>* state = nullptr, const std::map<std::string, std::string>& extra = {}) {
  write_file_atomic(path, serialize_checkpoint(bundle, state, extra));
}

/// Reads only the architecture from a checkpoint header.
inline std::map<std::string, std::string> parse_checkpoint_header(const std::string& bytes, const std::string& name) {
  detail::Reader rd(bytes, name);
  if (rd.get_string(8) != std::string(detail::kCheckpointMagic, 8)) rd.fail("not a checkpoint (bad magic)");
  if (rd.get<std::uint32_t>() != detail::kCheckpointVersion) rd.fail("unsupported version");
  const auto len = rd.get<std::uint64_t>();
  std::istringstream hs(rd.get_string(len));
  std::map<std::string, std::string> header;
  for (std::string line; std::getline(hs, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) rd.fail("malformed header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return header;
}

inline Architecture architecture_from_header(const std::map<std::string, std::string>& h) {
  Architecture a;
  a.generators = detail::header_int(h, "generators");
  a.latent_dim = detail::header_int(h, "latent_dim");
  a.hidden_dim = detail::header_int(h, "hidden_dim");
  a.image_size = detail::header_int(h, "image_size");
  a.gen_width = detail::header_int(h, "gen_width");
  a.disc_width = detail::header_int(h, "disc_width");
  a.encoders = detail::header_int(h, "encoders") != 0;
  return a;
}

/**
 * Rebuilds a model (and training state, if stored). With `expected`, any
 * architecture difference is rejected with a ConfigurationError.
 */
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes, const std::string& name = "<memory>",
                                     const Architecture* expected = nullptr) {
  Checkpoint<T> ck;
  ck.header = parse_checkpoint_header(bytes, name);
  const std::string scalar = std::is_same_v<T, float> ? "f32" : "f64";
  if (ck.header["scalar"] != scalar)
    throw ConfigurationError("checkpoint '" + name + "' stores " + ck.header["scalar"] + " values, expected " + scalar);
  const Architecture arch = architecture_from_header(ck.header);
  if (expected && !(arch == *expected))
    throw ConfigurationError("checkpoint '" + name + "' architecture does not match the requested model");

  ck.bundle = ModelBundle<T>::create(arch, 0);
  const bool has_state = ck.header.count("iteration") > 0;
  if (has_state) {
    TrainState<T> st = TrainState<T>::create(ck.bundle, 0);
    st.iteration = std::stoll(ck.header["iteration"]);
    st.steps_conditioner = std::stoll(ck.header["steps_conditioner"]);
    st.steps_discriminator = std::stoll(ck.header["steps_discriminator"]);
    for (std::size_t i = 0; i < st.steps_generators.size(); ++i)
      st.steps_generators[i] = std::stoll(ck.header.at("steps_generator" + std::to_string(i)));
    for (std::size_t i = 0; i < st.steps_encoders.size(); ++i)
      st.steps_encoders[i] = std::stoll(ck.header.at("steps_encoder" + std::to_string(i)));
    std::istringstream rs(ck.header["rng"]);
    rs >> st.rng;
    if (!rs) throw IoError("checkpoint '" + name + "': corrupt RNG state");
    ck.state = std::move(st);
  }

  std::map<std::string, Matrix<T>*> slots;
  for (const auto& p : parameters(ck.bundle)) slots["param/" + p.name] = p.value;
  for (const auto& p : buffers(ck.bundle)) slots["buffer/" + p.name] = p.value;
  if (ck.state) {
    for (const auto& p : parameters(ck.state->moment1)) slots["adam_m/" + p.name] = p.value;
    for (const auto& p : parameters(ck.state->moment2)) slots["adam_v/" + p.name] = p.value;
  }

  detail::Reader rd(bytes, name);
  rd.get_string(8);
  rd.get<std::uint32_t>();
  rd.get_string(rd.get<std::uint64_t>());
  const auto count = rd.get<std::uint64_t>();
  if (count != slots.size()) rd.fail("tensor count does not match the architecture");
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string tname = rd.get_string(rd.get<std::uint32_t>());
    auto it = slots.find(tname);
    if (it == slots.end()) rd.fail("unexpected tensor '" + tname + "'");
    if (rd.get<std::uint8_t>() != detail::dtype_code<T>()) rd.fail("dtype mismatch for '" + tname + "'");
    const auto rows = rd.get<std::uint64_t>(), cols = rd.get<std::uint64_t>();
    Matrix<T>& m = *it->second;
    if (static_cast<Eigen::Index>(rows) != m.rows() || static_cast<Eigen::Index>(cols) != m.cols())
      rd.fail("shape mismatch for '" + tname + "'");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rd.get<T>();
    slots.erase(it);
  }
  const std::string history = rd.get_string(rd.get<std::uint64_t>());
  if (!rd.at_end()) rd.fail("trailing bytes");
  if (ck.state) {
    std::istringstream hs(history);
    for (std::string line; std::getline(hs, line);) ck.state->history.push_back(parse_report_line(line));
  }
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const Architecture* expected = nullptr) {
  return deserialize_checkpoint<T>(read_file(path), path.string(), expected);
}

} // namespace cgan
