#include "driftscope/report.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "driftscope/common.hpp"

namespace driftscope {

namespace fs = std::filesystem;

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string format_int(std::int64_t x) { return std::to_string(x); }

CsvTable::CsvTable(std::vector<std::string> header, std::string flags)
    : header_(std::move(header)), flags_(std::move(flags)) {}

CsvTable& CsvTable::row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) throw Error("csv: row width does not match header");
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::str() const {
  std::string out;
  if (!flags_.empty()) out += "# flags " + flags_ + "\n";
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_direction(const fs::path& path, std::span<const double> v) {
  std::string bytes = "DVEC";
  auto put = [&bytes](std::uint64_t x, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  };
  put(1, 4);
  put(v.size(), 8);
  for (double x : v) put(std::bit_cast<std::uint64_t>(x), 8);
  write_text_file(path, bytes);
}

std::vector<double> read_direction(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  auto get = [&bytes](std::size_t at, int n) {
    std::uint64_t x = 0;
    for (int i = 0; i < n; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return x;
  };
  if (bytes.size() < 16 || bytes.compare(0, 4, "DVEC") != 0) throw Error("direction file: bad magic in " + path.string());
  if (get(4, 4) != 1) throw Error("direction file: unsupported version");
  const std::uint64_t dim = get(8, 8);
  if (bytes.size() != 16 + dim * 8) throw Error("direction file: size does not match header dimension");
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = std::bit_cast<double>(get(16 + 8 * i, 8));
  return v;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const fs::path& config_json) { return hash_hex(fnv1a64(read_text_file(config_json))); }

Json RunManifest::to_json() const {
  Json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  j["checkpoints"] = checkpoints;
  j["outputs"] = outputs;
  j["tool_version"] = tool_version;
  j["invocation"] = invocation;
  return j;
}

RunManifest RunManifest::from_json(const Json& j) {
  RunManifest m;
  m.run_id = j.value("run_id", "");
  m.config_hash = j.value("config_hash", "");
  m.checkpoints = j.value("checkpoints", std::vector<std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.tool_version = j.value("tool_version", "");
  m.invocation = j.value("invocation", std::vector<std::string>{});
  return m;
}

RunManifest load_manifest(const fs::path& dir, const std::string& run_id) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) {
    RunManifest m;
    m.run_id = run_id;
    return m;
  }
  return RunManifest::from_json(Json::parse(read_text_file(p)));
}

void save_manifest(const fs::path& dir, RunManifest m) {
  for (auto* list : {&m.checkpoints, &m.outputs}) {
    std::sort(list->begin(), list->end());
    list->erase(std::unique(list->begin(), list->end()), list->end());
    for (const auto& f : *list)
      if (!fs::exists(dir / f)) throw Error("manifest: referenced file missing: " + f);
  }
  if (fs::exists(dir / "config.json")) m.config_hash = config_hash(dir / "config.json");
  m.tool_version = kToolVersion;
  write_text_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw Error("run directory is locked by another command: " + dir.string());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace driftscope
