// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/model_io.hpp"

#include <bit>
#include <cstring>

#include "sieve/errors.hpp"

namespace sieve::vlm {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'D', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t u64(const char* what) {
    if (bytes_.size() - pos_ < 8) throw FormatError(std::string("model: truncated ") + what + " at byte " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  int i32(const char* what) {
    const std::uint64_t v = u64(what);
    if (v > 1u << 30) throw FormatError(std::string("model: implausible ") + what + " at byte " + std::to_string(pos_ - 8));
    return static_cast<int>(v);
  }
  std::size_t pos() const { return pos_; }
  void expect_magic() {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), kMagic, 4) != 0) throw FormatError("model: bad magic at byte 0");
    pos_ = 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const Model& model) {
  const auto& c = model.config();
  std::string out(kMagic, 4);
  put_u64(out, kFormatVersion);
  for (int v : {c.d_model, c.n_layers, c.n_heads, c.patch_size, c.image_side, c.mid_layers.first, c.mid_layers.last,
                c.max_seq, static_cast<int>(c.vocab.size())})
    put_u64(out, static_cast<std::uint64_t>(v));
  put_u64(out, c.seed);
  put_u64(out, model.version());
  put_u64(out, model.params().size());
  for (double v : model.params()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Model deserialize_model(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic();
  if (r.u64("format version") != kFormatVersion) throw FormatError("model: unsupported format version at byte 4");
  ModelConfig c;
  c.d_model = r.i32("d_model");
  c.n_layers = r.i32("n_layers");
  c.n_heads = r.i32("n_heads");
  c.patch_size = r.i32("patch_size");
  c.image_side = r.i32("image_side");
  c.mid_layers.first = r.i32("mid layer");
  c.mid_layers.last = r.i32("mid layer");
  c.max_seq = r.i32("max_seq");
  const std::size_t vocab_at = r.pos();
  if (static_cast<std::size_t>(r.i32("vocab size")) != c.vocab.size())
    throw FormatError("model: vocabulary size mismatch at byte " + std::to_string(vocab_at));
  c.seed = r.u64("seed");
  const std::uint64_t version = r.u64("version");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model: stored shape is invalid: ") + e.what());
  }
  Model model(c);
  const std::size_t count_at = r.pos();
  if (r.u64("parameter count") != model.params().size())
    throw FormatError("model: parameter count does not match the stored shape at byte " + std::to_string(count_at));
  std::vector<double> values(model.params().size());
  for (auto& v : values) v = std::bit_cast<double>(r.u64("parameters"));
  if (!r.done()) throw FormatError("model: trailing bytes at byte " + std::to_string(r.pos()));
  std::copy(values.begin(), values.end(), model.mutable_params().begin());
  model.set_version(static_cast<std::uint32_t>(version));
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file_atomic(path, serialize_model(model)); }

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace sieve::vlm
