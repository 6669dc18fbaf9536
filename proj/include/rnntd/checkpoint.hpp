#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rnntd/errors.hpp"
#include "rnntd/events.hpp"
#include "rnntd/linalg.hpp"
#include "rnntd/model.hpp"

namespace rnntd {

/// Self-describing binary container for fitted models.
///
/// Layout (all integers and doubles little-endian):
///
///   bytes 0-7   magic "RNTDCKPT"
///   u32         format version (1)
///   u32         entry count
///   entries, each:
///     u8        kind (1 string, 2 i64, 3 f64, 4 f64 matrix, 5 string list)
///     u32       name length, then the name bytes (UTF-8)
///     payload:
///       string       u64 length + bytes
///       i64          8 bytes
///       f64          8 bytes (IEEE 754 binary64)
///       f64 matrix   u64 rows, u64 cols, rows*cols f64 in row-major order
///       string list  u64 count, then each string as u64 length + bytes
///
/// Every checkpoint has a string entry "variant" naming the model family and a
/// string list "vocabulary" with the mark strings in id order.
class Checkpoint {
 public:
  static constexpr std::array<char, 8> kMagic{'R', 'N', 'T', 'D', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  using Strings = std::vector<std::string>;
  using Value = std::variant<std::string, std::int64_t, double, Matrix, Strings>;

  void set(const std::string& name, Value value) {
    for (auto& [key, v] : entries_)
      if (key == name) {
        v = std::move(value);
        return;
      }
    entries_.emplace_back(name, std::move(value));
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  template <typename T>
  const T& get(const std::string& name) const {
    const Value* v = find(name);
    if (!v) throw DataError("checkpoint: missing entry '" + name + "'");
    const T* typed = std::get_if<T>(v);
    if (!typed) throw DataError("checkpoint: entry '" + name + "' has the wrong kind");
    return *typed;
  }

  const std::string& text(const std::string& name) const { return get<std::string>(name); }
  std::int64_t integer(const std::string& name) const { return get<std::int64_t>(name); }
  double real(const std::string& name) const { return get<double>(name); }
  const Matrix& matrix(const std::string& name) const { return get<Matrix>(name); }
  const Strings& strings(const std::string& name) const { return get<Strings>(name); }

  std::size_t count(const std::string& name) const {
    const auto n = integer(name);
    if (n < 0) throw DataError("checkpoint: entry '" + name + "' is negative");
    return static_cast<std::size_t>(n);
  }

  const std::vector<std::pair<std::string, Value>>& entries() const noexcept { return entries_; }

  void write(std::ostream& out) const {
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, value] : entries_) {
      out.put(static_cast<char>(value.index() + 1));
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      std::visit([&out](const auto& v) { put_value(out, v); }, value);
    }
    if (!out) throw DataError("checkpoint: write failed");
  }

  static Checkpoint read(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw DataError("checkpoint: bad magic (not a checkpoint file)");
    const auto version = get_u32(in);
    if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    const auto n = get_u32(in);
    for (std::uint32_t i = 0; i < n; ++i) {
      const int kind = in.get();
      std::string name(get_u32(in), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      switch (kind) {
        case 1: c.set(name, get_string(in)); break;
        case 2: c.set(name, static_cast<std::int64_t>(get_u64(in))); break;
        case 3: c.set(name, get_f64(in)); break;
        case 4: {
          const auto rows = get_u64(in), cols = get_u64(in);
          if (cols != 0 && rows > (1ull << 40) / cols) throw DataError("checkpoint: matrix too large");
          std::vector<double> data(rows * cols);
          for (double& x : data) x = get_f64(in);
          c.set(name, Matrix(rows, cols, std::move(data)));
          break;
        }
        case 5: {
          const auto count = get_u64(in);
          Strings list;
          for (std::uint64_t k = 0; k < count && in; ++k) list.push_back(get_string(in));
          c.set(name, std::move(list));
          break;
        }
        default: throw DataError("checkpoint: unknown entry kind " + std::to_string(kind));
      }
      if (!in) throw DataError("checkpoint: truncated file");
    }
    return c;
  }

  /// Writes to a sibling temporary file and renames it into place.
  void save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write checkpoint " + tmp.string());
      write(out);
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    return read(in);
  }

 private:
  const Value* find(const std::string& name) const {
    for (const auto& [key, v] : entries_)
      if (key == name) return &v;
    return nullptr;
  }

  static void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void put_f64(std::ostream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put_u64(out, bits);
  }
  static void put_value(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static void put_value(std::ostream& out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }
  static void put_value(std::ostream& out, double x) { put_f64(out, x); }
  static void put_value(std::ostream& out, const Matrix& m) {
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    for (double x : m.values()) put_f64(out, x);
  }
  static void put_value(std::ostream& out, const Strings& list) {
    put_u64(out, list.size());
    for (const auto& s : list) put_value(out, s);
  }

  static std::uint64_t get_bytes(std::istream& in, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      const int b = in.get();
      if (b == std::char_traits<char>::eof()) throw DataError("checkpoint: truncated file");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b)) << (8 * i);
    }
    return v;
  }
  static std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_bytes(in, 4)); }
  static std::uint64_t get_u64(std::istream& in) { return get_bytes(in, 8); }
  static double get_f64(std::istream& in) {
    const std::uint64_t bits = get_u64(in);
    double x;
    std::memcpy(&x, &bits, sizeof x);
    return x;
  }
  static std::string get_string(std::istream& in) {
    const auto n = get_u64(in);
    if (n > (1ull << 32)) throw DataError("checkpoint: string too long");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint: truncated file");
    return s;
  }

  std::vector<std::pair<std::string, Value>> entries_;
};

inline Checkpoint::Strings vocabulary_strings(const MarkVocabulary& vocab) {
  Checkpoint::Strings out;
  for (std::size_t i = 0; i < vocab.size(); ++i) out.push_back(vocab.decode(i));
  return out;
}

/// Stores the neural model under `variant` ("rnn-td" or "rmtpp").
inline void store_model(Checkpoint& c, const ModelParams& p, const std::string& variant) {
  c.set("variant", variant);
  c.set("hidden", static_cast<std::int64_t>(p.hidden));
  c.set("marks", static_cast<std::int64_t>(p.marks));
  c.set("embed", static_cast<std::int64_t>(p.embed_dim));
  c.set("calendar", static_cast<std::int64_t>(p.features.calendar ? 1 : 0));
  c.set("epoch_unix_seconds", static_cast<std::int64_t>(p.features.epoch_unix_seconds));
  c.set("head", std::string(p.head == IntensityHead::Shared ? "shared" : "mark-specific"));
  c.set("shaping", std::string(to_string(p.shaping.kind)));
  c.set("shaping_w", p.shaping.w);
  c.set("input_time", p.input_time);
  c.set("input_mark", p.input_mark);
  c.set("recurrent", p.recurrent);
  c.set("mark_logits", p.mark_logits);
  c.set("intensity", p.intensity);
  c.set("intensity_bias", Matrix(1, p.intensity_bias.size(), p.intensity_bias));
  c.set("mark_embedding", p.mark_embedding);
}

inline ModelParams load_model(const Checkpoint& c) {
  FeatureConfig features;
  features.calendar = c.integer("calendar") != 0;
  features.epoch_unix_seconds = c.integer("epoch_unix_seconds");
  const ModelDims dims{c.count("hidden"), c.count("marks"), c.count("embed"), features};
  const auto head = c.text("head") == "shared" ? IntensityHead::Shared : IntensityHead::MarkSpecific;
  auto p = ModelParams::zeros(dims, parse_shaping(c.text("shaping")), head);
  p.shaping.w = c.real("shaping_w");
  p.input_time = c.matrix("input_time");
  p.input_mark = c.matrix("input_mark");
  p.recurrent = c.matrix("recurrent");
  p.mark_logits = c.matrix("mark_logits");
  p.intensity = c.matrix("intensity");
  const auto& bias = c.matrix("intensity_bias");
  p.intensity_bias.assign(bias.values().begin(), bias.values().end());
  p.mark_embedding = c.matrix("mark_embedding");
  p.validate();
  return p;
}

}  // namespace rnntd
