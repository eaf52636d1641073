// Binary checkpoint container.
//
// Layout (all integers little-endian, doubles as their IEEE-754 bit pattern):
//   magic "GMILCKPT" | u32 version | u64 len + config JSON | u64 len + metadata JSON
//   | u64 tensor count | per tensor: u64 len + name, u64 rows, u64 cols, rows*cols f64
// Parameter tensors come first in ParameterSet order, then extras by name
// under an "extra:" prefix.

#include <bit>
#include <cstring>
#include <fstream>

#include "gmil/errors.hpp"
#include "gmil/model.hpp"

namespace gmil {
namespace {

constexpr char kMagic[8] = {'G', 'M', 'I', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kExtraPrefix = "extra:";

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}

  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, std::size_t rows, std::size_t cols,
              std::span<const double> v) {
    str(name);
    u64(rows);
    u64(cols);
    for (double d : v) f64(d);
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (std::uint64_t{1} << 32)) fail("string length out of range");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated string");
    return s;
  }
  [[noreturn]] void fail(const std::string& what) {
    throw FormatError("checkpoint '" + path_ + "': " + what);
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    if (!in_) fail("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::ifstream& in_;
  std::string path_;
};

std::pair<std::size_t, std::size_t> shape_of(const ParameterSet& p, const std::string& name,
                                             std::size_t len) {
  // Matrices report their own shape; vectors are stored as len x 1.
  auto match = [&](const Matrix& m) { return std::pair{m.rows(), m.cols()}; };
  if (name == "attention.V") return match(p.att_v);
  if (name == "head.weight") return match(p.head_w);
  if (name.starts_with("conv.")) return match(p.conv[std::stoul(name.substr(5))]);
  if (name.starts_with("encoder.") && name.ends_with(".weight"))
    return match(p.encoder[std::stoul(name.substr(8))].weight);
  return {len, 1};
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.params.check_shapes();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(nlohmann::json(ckpt.params.config).dump());
  w.str(ckpt.metadata.dump());
  std::size_t count = ckpt.extras.size();
  ckpt.params.for_each_tensor([&](const std::string&, std::span<const double>) { ++count; });
  w.u64(count);
  ckpt.params.for_each_tensor([&](const std::string& name, std::span<const double> v) {
    auto [r, c] = shape_of(ckpt.params, name, v.size());
    w.tensor(name, r, c, v);
  });
  for (const auto& [name, v] : ckpt.extras) w.tensor(kExtraPrefix + name, v.size(), 1, v);
  if (!out) throw Error("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  try {
    ck.params.config = nlohmann::json::parse(r.str()).get<ModelConfig>();
    ck.metadata = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad JSON header: ") + e.what());
  }
  // Allocate tensors with the configured shapes, then fill by name.
  Rng dummy(0);
  ck.params = [&] {
    ModelParams p = ModelParams::init(ck.params.config, dummy);
    p.for_each_tensor([](const std::string&, std::span<double> s) {
      std::fill(s.begin(), s.end(), 0.0);
    });
    return p;
  }();

  std::map<std::string, std::span<double>> slots;
  ck.params.for_each_tensor(
      [&](const std::string& name, std::span<double> s) { slots.emplace(name, s); });

  const std::uint64_t count = r.u64();
  std::size_t filled = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows * cols > (std::uint64_t{1} << 34)) r.fail("tensor '" + name + "' too large");
    if (name.starts_with(kExtraPrefix)) {
      Vector v(rows * cols);
      for (double& d : v) d = r.f64();
      ck.extras.emplace(name.substr(std::strlen(kExtraPrefix)), std::move(v));
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) r.fail("unknown tensor '" + name + "'");
    auto [er, ec] = shape_of(ck.params, name, it->second.size());
    if (rows != er || cols != ec) {
      r.fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
             std::to_string(cols) + ", config implies " + std::to_string(er) + "x" +
             std::to_string(ec));
    }
    for (double& d : it->second) d = r.f64();
    ++filled;
  }
  if (filled != slots.size()) r.fail("missing parameter tensors");
  return ck;
}

}  // namespace gmil
