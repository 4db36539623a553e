#pragma once

// Named float32 parameter tensors, the DSCK binary file format, trunk selection and
// drift-matrix assembly.
//
// DSCK layout (little-endian, no padding):
//   "DSCK" | u32 version=1 | u64 step | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u64 dims[rank]
//   then every payload (raw f32) concatenated in header order.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace driftscope {

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t numel() const;
  bool operator==(const Tensor&) const = default;
};

struct Checkpoint {
  std::int64_t step = 0;
  std::map<std::string, Tensor> tensors;  // ordered by name

  // Throws if step < 0 or any tensor's shape disagrees with its payload length.
  void validate() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Reads only the step field of the header.
std::int64_t read_checkpoint_step(const std::filesystem::path& path);

// Selects trunk weight matrices: attention QKV/output and MLP up/down projections.
// Embeddings, positional parameters, biases and layer-norm parameters are excluded.
class TrunkSelector {
 public:
  TrunkSelector() = default;
  // Restrict selection to one transformer block.
  static TrunkSelector for_block(int block);

  bool matches(const std::string& name) const;
  // Block id parsed from "blocks.<i>.", or nullopt for non-block tensors.
  static std::optional<int> block_index(const std::string& name);

  std::optional<int> block() const { return block_; }
  std::string label() const;

 private:
  std::optional<int> block_;
};

// Concatenation of the selected tensors in lexicographic name order, widened to 64-bit.
std::vector<double> flatten_trunk(const Checkpoint& ckpt, const TrunkSelector& sel);
std::size_t trunk_dimension(const Checkpoint& ckpt, const TrunkSelector& sel);

struct DriftMatrix {
  std::int64_t anchor_step = 0;
  std::vector<std::int64_t> steps;
  std::size_t dim = 0;
  std::vector<double> data;  // steps.size() x dim, row-major
  bool row_normalized = false;

  std::size_t rows() const { return steps.size(); }
  std::span<const double> row(std::size_t t) const { return {data.data() + t * dim, dim}; }
  std::span<double> row(std::size_t t) { return {data.data() + t * dim, dim}; }
};

// Flattened trunk parameters for an ordered series of checkpoints. Analysis
// operations work on this rather than re-flattening checkpoints.
struct Trajectory {
  std::vector<std::int64_t> steps;  // ascending
  std::size_t dim = 0;
  std::vector<double> data;  // steps.size() x dim
  std::string label;         // selector label, e.g. "trunk" or "block0"

  std::size_t size() const { return steps.size(); }
  std::span<const double> at(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::size_t index_of(std::int64_t step) const;  // throws if absent
  bool contains(std::int64_t step) const;
};

Trajectory make_trajectory(std::span<const Checkpoint> ckpts, const TrunkSelector& sel);
// Streams checkpoints from disk one at a time.
Trajectory load_trajectory(std::span<const std::filesystem::path> paths, const TrunkSelector& sel);

// Rows are theta(t) - theta(anchor) for every checkpoint after the anchor, ordered by step.
DriftMatrix build_drift_matrix(std::span<const Checkpoint> ckpts, std::int64_t anchor_step,
                               const TrunkSelector& sel, bool row_normalize);
// Same, restricted to checkpoints with anchor < step <= last_step (all if last_step is nullopt).
DriftMatrix build_drift_matrix(const Trajectory& traj, std::int64_t anchor_step, bool row_normalize,
                               std::optional<std::int64_t> last_step = std::nullopt);

void normalize_rows(DriftMatrix& x);

}  // namespace driftscope
