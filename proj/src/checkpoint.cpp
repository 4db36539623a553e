#include "driftscope/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "driftscope/common.hpp"
#include "driftscope/linalg.hpp"

namespace driftscope {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename U>
  void put(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error("checkpoint: truncated file");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

void Checkpoint::validate() const {
  if (step < 0) throw Error("checkpoint: negative step");
  for (const auto& [name, t] : tensors) {
    if (name.empty()) throw Error("checkpoint: empty tensor name");
    if (t.numel() != t.data.size())
      throw Error("checkpoint: tensor '" + name + "' shape does not match data length");
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.tensors.empty()) throw Error("checkpoint: no tensors");
  ckpt.validate();
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(ckpt.step));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
  }
  for (const auto& [name, t] : ckpt.tensors)
    for (float f : t.data) w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error("checkpoint: bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw Error("checkpoint: unsupported version");
  Checkpoint ckpt;
  ckpt.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  if (count == 0) throw Error("checkpoint: no tensors");
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    auto nb = r.take(len);
    std::string name(nb.begin(), nb.end());
    Tensor t;
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>());
    if (!ckpt.tensors.emplace(name, std::move(t)).second) throw Error("checkpoint: duplicate tensor '" + name + "'");
    order.push_back(std::move(name));
  }
  for (const auto& name : order) {
    Tensor& t = ckpt.tensors.at(name);
    t.data.resize(t.numel());
    for (auto& f : t.data) f = std::bit_cast<float>(r.get<std::uint32_t>());
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  ckpt.validate();
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("checkpoint: cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::int64_t read_checkpoint_step(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::uint8_t head[16];
  if (!f.read(reinterpret_cast<char*>(head), 16)) throw Error("checkpoint: cannot read '" + path.string() + "'");
  ByteReader r(head);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error("checkpoint: bad magic in '" + path.string() + "'");
  r.get<std::uint32_t>();
  return static_cast<std::int64_t>(r.get<std::uint64_t>());
}

// ---------------------------------------------------------------------------

TrunkSelector TrunkSelector::for_block(int block) {
  TrunkSelector s;
  s.block_ = block;
  return s;
}

std::optional<int> TrunkSelector::block_index(const std::string& name) {
  constexpr std::string_view prefix = "blocks.";
  if (name.rfind(prefix, 0) != 0) return std::nullopt;
  const auto dot_pos = name.find('.', prefix.size());
  if (dot_pos == std::string::npos || dot_pos == prefix.size()) return std::nullopt;
  int id = 0;
  for (std::size_t i = prefix.size(); i < dot_pos; ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    id = id * 10 + (name[i] - '0');
  }
  return id;
}

bool TrunkSelector::matches(const std::string& name) const {
  static constexpr std::string_view kSuffixes[] = {".attn.qkv.weight", ".attn.proj.weight", ".mlp.up.weight",
                                                   ".mlp.down.weight"};
  const auto id = block_index(name);
  if (!id) return false;
  if (block_ && *block_ != *id) return false;
  return std::any_of(std::begin(kSuffixes), std::end(kSuffixes), [&](std::string_view s) {
    return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  });
}

std::string TrunkSelector::label() const { return block_ ? "block" + std::to_string(*block_) : "trunk"; }

std::size_t trunk_dimension(const Checkpoint& ckpt, const TrunkSelector& sel) {
  std::size_t d = 0;
  for (const auto& [name, t] : ckpt.tensors)
    if (sel.matches(name)) d += t.data.size();
  return d;
}

std::vector<double> flatten_trunk(const Checkpoint& ckpt, const TrunkSelector& sel) {
  std::vector<double> out;
  out.reserve(trunk_dimension(ckpt, sel));
  for (const auto& [name, t] : ckpt.tensors)  // std::map iterates in lexicographic order
    if (sel.matches(name)) out.insert(out.end(), t.data.begin(), t.data.end());
  if (out.empty()) throw Error("flatten_trunk: no tensors match selector " + sel.label());
  return out;
}

std::size_t Trajectory::index_of(std::int64_t step) const {
  auto it = std::lower_bound(steps.begin(), steps.end(), step);
  if (it == steps.end() || *it != step) throw Error("trajectory: no checkpoint at step " + std::to_string(step));
  return static_cast<std::size_t>(it - steps.begin());
}

bool Trajectory::contains(std::int64_t step) const { return std::binary_search(steps.begin(), steps.end(), step); }

namespace {

void check_compatible(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) throw Error("checkpoints have different tensor sets");
  auto ib = b.tensors.begin();
  for (const auto& [name, t] : a.tensors) {
    if (ib->first != name || ib->second.shape != t.shape)
      throw Error("checkpoint shape mismatch at tensor '" + name + "'");
    ++ib;
  }
}

void append_sorted(Trajectory& traj, std::int64_t step, std::vector<double> flat) {
  if (traj.steps.empty()) traj.dim = flat.size();
  if (flat.size() != traj.dim) throw Error("trajectory: dimension mismatch");
  auto it = std::lower_bound(traj.steps.begin(), traj.steps.end(), step);
  if (it != traj.steps.end() && *it == step) throw Error("trajectory: duplicate step " + std::to_string(step));
  const auto idx = static_cast<std::size_t>(it - traj.steps.begin());
  traj.steps.insert(it, step);
  traj.data.insert(traj.data.begin() + static_cast<std::ptrdiff_t>(idx * traj.dim), flat.begin(), flat.end());
}

}  // namespace

Trajectory make_trajectory(std::span<const Checkpoint> ckpts, const TrunkSelector& sel) {
  Trajectory traj;
  traj.label = sel.label();
  for (const auto& c : ckpts) {
    check_compatible(ckpts.front(), c);
    append_sorted(traj, c.step, flatten_trunk(c, sel));
  }
  return traj;
}

Trajectory load_trajectory(std::span<const std::filesystem::path> paths, const TrunkSelector& sel) {
  Trajectory traj;
  traj.label = sel.label();
  std::optional<Checkpoint> first;
  for (const auto& p : paths) {
    Checkpoint c = read_checkpoint(p);
    if (!first) {
      first = c;
    } else {
      check_compatible(*first, c);
    }
    append_sorted(traj, c.step, flatten_trunk(c, sel));
  }
  return traj;
}

void normalize_rows(DriftMatrix& x) {
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto r = x.row(t);
    const double n = norm(r);
    if (n > 0.0) scale(r, 1.0 / n);
  }
  x.row_normalized = true;
}

DriftMatrix build_drift_matrix(const Trajectory& traj, std::int64_t anchor_step, bool row_normalize,
                               std::optional<std::int64_t> last_step) {
  const std::size_t a = traj.index_of(anchor_step);
  DriftMatrix x;
  x.anchor_step = anchor_step;
  x.dim = traj.dim;
  for (std::size_t i = a + 1; i < traj.size(); ++i) {
    if (last_step && traj.steps[i] > *last_step) break;
    x.steps.push_back(traj.steps[i]);
  }
  if (x.steps.size() < 2)
    throw Error("drift matrix needs at least 2 checkpoints after anchor step " + std::to_string(anchor_step));
  x.data.resize(x.steps.size() * x.dim);
  const auto base = traj.at(a);
  for (std::size_t t = 0; t < x.steps.size(); ++t) {
    const auto src = traj.at(a + 1 + t);
    auto dst = x.row(t);
    for (std::size_t j = 0; j < x.dim; ++j) dst[j] = src[j] - base[j];
  }
  if (row_normalize) normalize_rows(x);
  return x;
}

DriftMatrix build_drift_matrix(std::span<const Checkpoint> ckpts, std::int64_t anchor_step,
                               const TrunkSelector& sel, bool row_normalize) {
  const bool has_anchor =
      std::any_of(ckpts.begin(), ckpts.end(), [&](const Checkpoint& c) { return c.step == anchor_step; });
  if (!has_anchor) throw Error("drift matrix: anchor step " + std::to_string(anchor_step) + " missing");
  return build_drift_matrix(make_trajectory(ckpts, sel), anchor_step, row_normalize);
}

}  // namespace driftscope
