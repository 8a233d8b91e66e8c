#include "lode/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "lode/error.hpp"

namespace lode::checkpoint {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const model::ModelParams& p) {
  p.validate();
  const model::Architecture& a = p.arch;
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  for (std::size_t v : {a.feature_count, a.latent_dim, a.encoder_hidden, a.dynamics_hidden,
                        a.decoder_hidden, a.classifier_hidden, a.noise_dim})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(p.feature_names.size()));
  for (const auto& name : p.feature_names) w.str(name);
  for (double s : p.obs_noise) w.f64(s);
  w.u8(p.norm.empty() ? 0 : 1);
  if (!p.norm.empty()) {
    for (double m : p.norm.mean) w.f64(m);
    for (double s : p.norm.std) w.f64(s);
  }
  w.f64(p.window);
  const auto layout = model::parameter_layout(a);
  w.u32(static_cast<std::uint32_t>(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const ad::Tensor& t = p.weights[i];
    w.str(layout[i].name);
    w.u32(static_cast<std::uint32_t>(t.shape().rank()));
    for (std::size_t d = 0; d < t.shape().rank(); ++d) w.u64(t.shape()[d]);
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

model::ModelParams deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                               ", this build reads version " + std::to_string(kFormatVersion));
  model::ModelParams p;
  model::Architecture& a = p.arch;
  for (std::size_t* v : {&a.feature_count, &a.latent_dim, &a.encoder_hidden, &a.dynamics_hidden,
                         &a.decoder_hidden, &a.classifier_hidden, &a.noise_dim})
    *v = r.u32();
  if (a.feature_count == 0 || a.feature_count > 4096 || a.latent_dim == 0)
    throw IoError("checkpoint architecture record is invalid");
  const std::uint32_t names = r.u32();
  if (names > a.feature_count) throw IoError("checkpoint has too many feature names");
  for (std::uint32_t i = 0; i < names; ++i) p.feature_names.push_back(r.str());
  for (std::size_t k = 0; k < a.feature_count; ++k) p.obs_noise.push_back(r.f64());
  if (r.u8() != 0) {
    for (std::size_t k = 0; k < a.feature_count; ++k) p.norm.mean.push_back(r.f64());
    for (std::size_t k = 0; k < a.feature_count; ++k) p.norm.std.push_back(r.f64());
  }
  p.window = r.f64();

  const auto layout = model::parameter_layout(a);
  if (r.u32() != layout.size()) throw IoError("checkpoint weight count disagrees with architecture");
  for (const auto& spec : layout) {
    const std::string name = r.str();
    if (name != spec.name) throw IoError("expected weight " + spec.name + ", found " + name);
    const std::uint32_t rank = r.u32();
    if (rank != spec.shape.rank()) throw IoError("weight " + name + " has the wrong rank");
    for (std::uint32_t d = 0; d < rank; ++d)
      if (r.u64() != spec.shape[d]) throw IoError("weight " + name + " has the wrong shape");
    std::vector<double> data(spec.shape.size());
    for (double& v : data) v = r.f64();
    try {
      p.weights.emplace_back(spec.shape, std::move(data));
    } catch (const Error&) {
      throw IoError("weight " + name + " holds non-finite values");
    }
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  try {
    p.validate();
  } catch (const ContractViolation& e) {
    throw IoError(std::string("checkpoint is inconsistent: ") + e.what());
  }
  return p;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save(const model::ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

model::ModelParams load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace lode::checkpoint
