#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "vpa/synthdata.hpp"

using namespace vpa;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_cfg() {
  GeneratorConfig g;
  g.n_pretrain = 8;
  g.n_train = 8;
  g.n_val = 4;
  g.n_test = 4;
  return g;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vpa_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("same seed generates byte-identical datasets") {
  GeneratorConfig g = small_cfg();
  Dataset a = generate(g), b = generate(g);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].patches == b.items[i].patches);
    CHECK(a.items[i].tokens == b.items[i].tokens);
    CHECK(a.items[i].labels == b.items[i].labels);
  }
}

TEST_CASE("clean data places identical concept components") {
  GeneratorConfig g = small_cfg();
  g.noise_std = 0.0;
  g.domain_shift = 0.0;
  g.n_pretrain = 32;
  Dataset ds = generate(g);
  // find two pretrain items with the same single label and compare the
  // concept patch slot frame by frame up to the temporal envelope sign
  const PairedItem* first = nullptr;
  const PairedItem* second = nullptr;
  for (const auto& it : ds.items) {
    if (it.split != Split::kPretrain) continue;
    if (!first) {
      first = &it;
      continue;
    }
    if (it.labels == first->labels) {
      second = &it;
      break;
    }
  }
  REQUIRE(first != nullptr);
  REQUIRE(second != nullptr);
  // identical concept vectors modulated by the same envelope: the concept
  // slot (patch 0) must agree exactly frame by frame
  bool slot_equal = true;
  const int pd = g.patch_dim, np = g.patches;
  for (int f = 0; f < g.frames; ++f)
    for (int c = 0; c < pd; ++c)
      if (first->patches[(f * np + 0) * pd + c] !=
          second->patches[(f * np + 0) * pd + c])
        slot_equal = false;
  CHECK(slot_equal);
}

TEST_CASE("round trip through disk is byte-identical") {
  TempDir dir("roundtrip");
  GeneratorConfig g = small_cfg();
  Dataset ds = generate(g);
  save(ds, dir.path.string());
  const std::string m1 = read_file(dir.path / "manifest.jsonl");
  const std::string f1 = read_file(dir.path / "features.bin");
  Dataset back = load(dir.path.string());
  REQUIRE(back.items.size() == ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(back.items[i].patches == ds.items[i].patches);
    CHECK(back.items[i].tokens == ds.items[i].tokens);
    CHECK(back.items[i].labels == ds.items[i].labels);
    CHECK(back.items[i].split == ds.items[i].split);
  }
  save(back, dir.path.string());
  CHECK(read_file(dir.path / "manifest.jsonl") == m1);
  CHECK(read_file(dir.path / "features.bin") == f1);
}

TEST_CASE("empty dataset round-trips to empty") {
  TempDir dir("empty");
  GeneratorConfig g = small_cfg();
  g.n_pretrain = g.n_train = g.n_val = g.n_test = 0;
  Dataset ds = generate(g);
  CHECK(ds.items.empty());
  save(ds, dir.path.string());
  Dataset back = load(dir.path.string());
  CHECK(back.items.empty());
}

TEST_CASE("corrupted feature payload fails the checksum") {
  TempDir dir("corrupt");
  Dataset ds = generate(small_cfg());
  save(ds, dir.path.string());
  {
    std::fstream f(dir.path / "features.bin",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(100);
    char b = 0x7f;
    f.write(&b, 1);
  }
  CHECK_THROWS_WITH_AS(load(dir.path.string()),
                       doctest::Contains("checksum"), DataError);
}

TEST_CASE("truncated feature file is reported as truncated") {
  TempDir dir("trunc");
  Dataset ds = generate(small_cfg());
  save(ds, dir.path.string());
  fs::resize_file(dir.path / "features.bin",
                  fs::file_size(dir.path / "features.bin") / 2);
  CHECK_THROWS_WITH_AS(load(dir.path.string()),
                       doctest::Contains("truncated"), DataError);
}

TEST_CASE("foreign manifest version is rejected") {
  TempDir dir("version");
  Dataset ds = generate(small_cfg());
  save(ds, dir.path.string());
  std::string m = read_file(dir.path / "manifest.jsonl");
  const auto pos = m.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  m.replace(pos, 11, "\"version\":9");
  std::ofstream(dir.path / "manifest.jsonl", std::ios::binary) << m;
  CHECK_THROWS_WITH_AS(load(dir.path.string()),
                       doctest::Contains("version-mismatch"), DataError);
}

TEST_CASE("invalid generator configs name the offending field") {
  GeneratorConfig g = small_cfg();
  g.vocab = 6;  // too small for 8 concept words
  CHECK_THROWS_WITH_AS(g.validate(), doctest::Contains("vocab"), ConfigError);
  g = small_cfg();
  g.domain_shift = 1.5;
  CHECK_THROWS_WITH_AS(g.validate(), doctest::Contains("domain_shift"),
                       ConfigError);
  g = small_cfg();
  g.labels_per_item = 0;
  CHECK_THROWS_WITH_AS(g.validate(), doctest::Contains("labels_per_item"),
                       ConfigError);
}

TEST_CASE("centroid classifier clears the separability floor") {
  GeneratorConfig g;  // defaults: noise 0.1, 8 concepts
  Dataset ds = generate(g);
  CHECK(centroid_accuracy(ds, Split::kPretrain) >= 0.95);
}

TEST_CASE("splits are sized and labeled as configured") {
  GeneratorConfig g = small_cfg();
  Dataset ds = generate(g);
  CHECK(ds.split_indices(Split::kPretrain).size() == 8);
  CHECK(ds.split_indices(Split::kAdaptTrain).size() == 8);
  CHECK(ds.split_indices(Split::kAdaptVal).size() == 4);
  CHECK(ds.split_indices(Split::kAdaptTest).size() == 4);
  for (const auto& it : ds.items) {
    REQUIRE(!it.labels.empty());
    for (int l : it.labels) CHECK((l >= 0 && l < g.n_concepts));
    CHECK(it.tokens.front() == 0);
    CHECK(it.tokens.back() == 1);
  }
}

TEST_CASE("class templates name exactly one concept") {
  Dataset ds = generate(small_cfg());
  auto t = ds.class_template(3);
  CHECK(t.front() == 0);
  CHECK(t.back() == 1);
  CHECK_THROWS_AS(ds.class_template(99), DataError);
}
