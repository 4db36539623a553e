#include <doctest.h>

#include "driftscope/common.hpp"
#include "driftscope/report.hpp"
#include "test_util.hpp"

using namespace driftscope;

TEST_CASE("csv: flags line, header and rows") {
  CsvTable t({"a", "b"}, "analyze pca --run x");
  t.row({"1", "2"}).row({"3", "4"});
  CHECK(t.str() == "# flags analyze pca --run x\na,b\n1,2\n3,4\n");
  CsvTable plain({"x"});
  plain.row({"5"});
  CHECK(plain.str() == "x\n5\n");
  CHECK_THROWS_AS(plain.row({"1", "2"}), Error);
}

TEST_CASE("format_double keeps full precision") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_int(-42) == "-42");
}

TEST_CASE("direction files round trip and reject garbage") {
  const auto dir = testutil::scratch("dvec");
  const std::vector<double> v{0.6, -0.8, 0.0};
  write_direction(dir / "v.vec", v);
  CHECK(read_direction(dir / "v.vec") == v);
  write_text_file(dir / "bad.vec", "nope");
  CHECK_THROWS_AS(read_direction(dir / "bad.vec"), Error);
  CHECK_THROWS_AS(read_direction(dir / "missing.vec"), Error);
}

TEST_CASE("manifest: save sorts, hashes config and checks files") {
  const auto dir = testutil::scratch("manifest");
  write_text_file(dir / "config.json", "{}\n");
  write_text_file(dir / "b.csv", "x\n");
  write_text_file(dir / "a.csv", "x\n");
  RunManifest m;
  m.run_id = "r";
  m.outputs = {"b.csv", "a.csv", "b.csv"};
  save_manifest(dir, m);
  const RunManifest back = load_manifest(dir, "ignored");
  CHECK(back.outputs == std::vector<std::string>{"a.csv", "b.csv"});
  CHECK(back.config_hash == hash_hex(fnv1a64("{}\n")));
  CHECK(back.tool_version == kToolVersion);
  m.outputs = {"missing.csv"};
  CHECK_THROWS_AS(save_manifest(dir, m), Error);
  CHECK(load_manifest(testutil::scratch("empty_manifest"), "fresh").run_id == "fresh");
}

TEST_CASE("run lock is exclusive") {
  const auto dir = testutil::scratch("lock");
  {
    RunLock a(dir);
    CHECK_THROWS_AS(RunLock{dir}, Error);
  }
  RunLock again(dir);
}
