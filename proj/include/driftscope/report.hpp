#pragma once

// Plain-text report helpers, the DVEC direction-file format and run manifests.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace driftscope {

using Json = nlohmann::json;

// Builds a CSV document. An optional leading "# flags ..." comment records the
// invocation that produced it.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header, std::string flags = {});
  CsvTable& row(std::vector<std::string> cells);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::string flags_;
  std::vector<std::vector<std::string>> rows_;
};

std::string format_int(std::int64_t x);

// Writes through a temporary file and renames, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// DVEC: "DVEC" | u32 version=1 | u64 dim | dim x f64, little-endian.
void write_direction(const std::filesystem::path& path, std::span<const double> v);
std::vector<double> read_direction(const std::filesystem::path& path);

struct RunManifest {
  std::string run_id;
  std::string config_hash;  // FNV-1a 64 of config.json, hex
  std::vector<std::string> checkpoints;
  std::vector<std::string> outputs;
  std::string tool_version;
  std::vector<std::string> invocation;

  Json to_json() const;
  static RunManifest from_json(const Json& j);
};

std::string hash_hex(std::uint64_t h);
std::string config_hash(const std::filesystem::path& config_json);

// Reads <dir>/manifest.json, or an empty manifest carrying `run_id` when absent.
RunManifest load_manifest(const std::filesystem::path& dir, const std::string& run_id);
// Sorts and de-duplicates the lists, checks every listed file exists, then writes.
void save_manifest(const std::filesystem::path& dir, RunManifest manifest);

// Exclusive lock on a run directory, held for the object's lifetime.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace driftscope
