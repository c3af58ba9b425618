#include "rpexlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rpexlab {

namespace {

constexpr char kMagic[8] = {'R', 'P', 'E', 'X', 'L', 'A', 'B', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  unsigned char u8() {
    need(1);
    return static_cast<unsigned char>(bytes_[pos_++]);
  }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put_mlp(const std::string& name, const Mlp& net) {
  records_[name] = Record{true, net.widths(), net.flat_params()};
}

void Checkpoint::put_vector(const std::string& name, std::span<const double> values) {
  records_[name] = Record{false, {}, std::vector<double>(values.begin(), values.end())};
}

void Checkpoint::put_vector(const std::string& name, const Vec& values) {
  put_vector(name, std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

const Checkpoint::Record& Checkpoint::find(const std::string& name, bool want_mlp) const {
  const auto it = records_.find(name);
  if (it == records_.end()) throw CheckpointError("checkpoint has no record '" + name + "'");
  if (it->second.is_mlp != want_mlp) throw CheckpointError("checkpoint record '" + name + "' has the wrong kind");
  return it->second;
}

Mlp Checkpoint::get_mlp(const std::string& name) const {
  const Record& r = find(name, true);
  return Mlp::from_params(r.widths, r.values);
}

std::vector<double> Checkpoint::get_vector(const std::string& name) const { return find(name, false).values; }

Vec Checkpoint::get_vec(const std::string& name) const {
  const auto& v = find(name, false).values;
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [name, record] : records_) out.push_back(name);
  return out;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, records_.size());
  for (const auto& [name, r] : records_) {
    out.push_back(static_cast<char>(r.is_mlp ? 0 : 1));
    put_u64(out, name.size());
    out += name;
    if (r.is_mlp) {
      put_u64(out, r.widths.size());
      for (int w : r.widths) put_u64(out, static_cast<std::uint64_t>(w));
    } else {
      put_u64(out, r.values.size());
    }
    for (double v : r.values) put_f64(out, v);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  Checkpoint ckpt;
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const unsigned char kind = in.u8();
    if (kind > 1) throw CheckpointError("unknown checkpoint record kind");
    const std::string name = in.str(in.u64());
    Record r;
    r.is_mlp = kind == 0;
    std::uint64_t n = 0;
    if (r.is_mlp) {
      const std::uint64_t nw = in.u64();
      if (nw < 2 || nw > 64) throw CheckpointError("implausible network depth in checkpoint");
      for (std::uint64_t k = 0; k < nw; ++k) {
        const std::uint64_t w = in.u64();
        if (w == 0 || w > (1u << 20)) throw CheckpointError("implausible layer width in checkpoint");
        r.widths.push_back(static_cast<int>(w));
      }
      for (std::size_t l = 0; l + 1 < r.widths.size(); ++l) {
        n += static_cast<std::uint64_t>(r.widths[l] + 1) * static_cast<std::uint64_t>(r.widths[l + 1]);
      }
    } else {
      n = in.u64();
    }
    if (n > bytes.size() / 8) throw CheckpointError("checkpoint truncated");
    r.values.resize(n);
    for (auto& v : r.values) v = in.f64();
    ckpt.records_[name] = std::move(r);
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint records");
  return ckpt;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace rpexlab
