#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "cvqa/dataset.hpp"
#include "cvqa/error.hpp"
#include "test_util.hpp"

using namespace cvqa;
using namespace cvqa::data;
using cvqa::testing::TempDir;

namespace {

// Byte writer independent of the library's binary helpers.
struct Bytes {
  std::string s;
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* text) { s.append(text); }
};

std::string emb1_bytes(const std::vector<EmbeddingRecord>& records, std::size_t d_img, std::size_t d_txt) {
  std::ostringstream out(std::ios::binary);
  write_emb1(records, d_img, d_txt, out);
  return out.str();
}

Emb1Contents parse(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_emb1(in);
}

Errc parse_error(const std::string& bytes) {
  try {
    (void)parse(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::invalid_argument;
}

EmbeddingRecord make_record(Rng& rng, std::uint64_t id, int task, int label, std::size_t d_img,
                            std::size_t d_txt) {
  EmbeddingRecord r;
  r.record_id = id;
  r.task_id = static_cast<std::uint16_t>(task);
  r.label_id = static_cast<std::uint16_t>(label);
  if (d_img > 0) r.image_embedding = EmbeddingVector(cvqa::testing::random_floats(rng, d_img));
  if (d_txt > 0) r.text_embedding = EmbeddingVector(cvqa::testing::random_floats(rng, d_txt));
  return r;
}

Manifest two_task_manifest(std::size_t d_img, std::size_t d_txt) {
  Manifest m;
  m.dataset_name = "toy";
  m.label_names = {"a", "b", "c", "d"};
  m.tasks = {{0, "first", {0, 1}, "{label}"}, {1, "second", {2, 3}, "a {label}"}};
  m.d_img = d_img;
  m.d_txt = d_txt;
  return m;
}

Dataset toy_dataset(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.manifest = two_task_manifest(3, 2);
  std::uint64_t id = 100;
  for (int task = 0; task < 2; ++task) {
    for (int label : d.manifest.tasks[static_cast<std::size_t>(task)].label_ids) {
      for (std::size_t i = 0; i < per_class; ++i) d.records.push_back(make_record(rng, id++, task, label, 3, 2));
    }
  }
  return d;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("EMB1 written by an external exporter is readable") {
    Bytes b;
    b.raw("EMB1");
    b.u32(1);
    b.u64(2);
    b.u32(2);
    b.u32(1);
    b.u64(7);
    b.u16(0);
    b.u16(1);
    b.u32(0);
    b.f32(0.5f);
    b.f32(-1.25f);
    b.f32(3.0f);
    b.u64(9);
    b.u16(2);
    b.u16(3);
    b.u32(0);
    b.f32(1e-3f);
    b.f32(2.0f);
    b.f32(-0.0f);

    auto c = parse(b.s);
    CHECK(c.d_img == 2);
    CHECK(c.d_txt == 1);
    REQUIRE(c.records.size() == 2);
    CHECK(c.records[0].record_id == 7);
    CHECK(c.records[0].task_id == 0);
    CHECK(c.records[0].label_id == 1);
    CHECK(c.records[0].image_embedding == EmbeddingVector{0.5f, -1.25f});
    CHECK(c.records[0].text_embedding == EmbeddingVector{3.0f});
    CHECK(c.records[1].record_id == 9);
    CHECK(c.records[1].task_id == 2);
    CHECK(c.records[1].label_id == 3);
    CHECK(std::signbit(c.records[1].text_embedding[0]));

    // And the library writes exactly those bytes back.
    CHECK(emb1_bytes(c.records, 2, 1) == b.s);
  }

  TEST_CASE("EMB1 randomized round-trips are bit-exact") {
    Rng rng(2024);
    for (int trial = 0; trial < 120; ++trial) {
      const std::size_t d_img = 1 + rng.uniform_index(24);
      const std::size_t d_txt = 1 + rng.uniform_index(24);
      const std::size_t n = rng.uniform_index(40);
      std::vector<EmbeddingRecord> records;
      for (std::size_t i = 0; i < n; ++i) {
        auto r = make_record(rng, rng.next_u64(), static_cast<int>(rng.uniform_index(65536)),
                             static_cast<int>(rng.uniform_index(65536)), d_img, d_txt);
        records.push_back(std::move(r));
      }
      const auto bytes = emb1_bytes(records, d_img, d_txt);
      CHECK(bytes.size() == 24 + n * (16 + 4 * (d_img + d_txt)));
      auto c = parse(bytes);
      CHECK(c.d_img == d_img);
      CHECK(c.d_txt == d_txt);
      CHECK(c.records == records);
      CHECK(emb1_bytes(c.records, d_img, d_txt) == bytes);
    }
  }

  TEST_CASE("EMB1 with an absent image modality") {
    Rng rng(3);
    std::vector<EmbeddingRecord> records = {make_record(rng, 1, 0, 0, 0, 4), make_record(rng, 2, 0, 1, 0, 4)};
    auto c = parse(emb1_bytes(records, 0, 4));
    CHECK(c.d_img == 0);
    CHECK(c.records == records);
    CHECK(c.records[0].image_embedding.empty());
  }

  TEST_CASE("EMB1 rejects malformed input") {
    Rng rng(4);
    std::vector<EmbeddingRecord> records = {make_record(rng, 1, 0, 0, 2, 2)};
    const auto good = emb1_bytes(records, 2, 2);

    auto bad = good;
    bad[0] = 'X';
    CHECK(parse_error(bad) == Errc::bad_magic);

    bad = good;
    bad[4] = 2;
    CHECK(parse_error(bad) == Errc::bad_version);

    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, std::size_t{23}, good.size() - 1}) {
      CHECK(parse_error(good.substr(0, cut)) == Errc::truncated);
    }

    bad = good;
    bad[24 + 12] = 1;  // padding word
    CHECK(parse_error(bad) == Errc::corrupt);

    bad = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bad.data() + 24 + 16, &nan, 4);
    CHECK(parse_error(bad) == Errc::non_finite);

    Bytes b;
    b.raw("EMB1");
    b.u32(1);
    b.u64(1);
    b.u32(0);
    b.u32(0);
    CHECK(parse_error(b.s) == Errc::dimension_mismatch);
  }

  TEST_CASE("write_emb1 rejects records that disagree with the header dims") {
    Rng rng(5);
    std::vector<EmbeddingRecord> records = {make_record(rng, 1, 0, 0, 2, 3)};
    std::ostringstream out;
    CHECK(error_of([&] { write_emb1(records, 2, 2, out); }) == Errc::dimension_mismatch);
  }

  TEST_CASE("manifest JSON round-trip") {
    auto m = two_task_manifest(8, 4);
    m.split = {{1, Split::train}, {2, Split::test}, {99, Split::train}};
    m.prompt_table = "prompts.emb1";
    m.provenance = {{"encoder", "toy"}, {"seed", "7"}};
    m.train_images = 10;
    m.test_images = 3;
    CHECK(manifest_from_json(manifest_to_json(m)) == m);

    auto bare = two_task_manifest(1, 1);
    CHECK(manifest_from_json(manifest_to_json(bare)) == bare);
  }

  TEST_CASE("manifest parse errors") {
    CHECK(error_of([] { (void)manifest_from_json("{not json"); }) == Errc::corrupt);
    auto text = manifest_to_json(two_task_manifest(2, 2));
    auto pos = text.find("cvqa.manifest/1");
    REQUIRE(pos != std::string::npos);
    auto wrong = text;
    wrong.replace(pos, 15, "cvqa.manifest/9");
    CHECK(error_of([&] { (void)manifest_from_json(wrong); }) == Errc::bad_version);

    auto m = two_task_manifest(2, 2);
    m.split = {{1, Split::train}};
    auto j = manifest_to_json(m);
    auto test_pos = j.find("\"test\": []");
    REQUIRE(test_pos != std::string::npos);
    j.replace(test_pos, 10, "\"test\": [1]");
    CHECK(error_of([&] { (void)manifest_from_json(j); }) == Errc::corrupt);
  }

  TEST_CASE("manifest validation") {
    auto m = two_task_manifest(2, 2);
    CHECK_NOTHROW(m.validate());
    auto dup = m;
    dup.tasks[1].task_id = 0;
    CHECK_THROWS_AS(dup.validate(), Error);
    auto outside = m;
    outside.tasks[0].label_ids = {0, 7};
    CHECK_THROWS_AS(outside.validate(), Error);
    CHECK(m.find_task(1)->name == "second");
    CHECK(m.find_task(5) == nullptr);
  }

  TEST_CASE("dataset save and load") {
    TempDir dir;
    auto d = toy_dataset(4, 11);
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      d.manifest.split[d.records[i].record_id] = i % 3 == 0 ? Split::test : Split::train;
    }
    const auto path = dir / "toy.emb1";
    save_dataset(d, path);
    CHECK(std::filesystem::exists(manifest_path_for(path)));
    CHECK(manifest_path_for(path).filename() == "toy.manifest");
    auto loaded = load_dataset(path);
    CHECK(loaded.manifest == d.manifest);
    CHECK(loaded.records == d.records);
  }

  TEST_CASE("load_dataset detects header and manifest disagreement") {
    TempDir dir;
    auto d = toy_dataset(2, 12);
    const auto path = dir / "toy.emb1";
    save_dataset(d, path);
    auto m = d.manifest;
    m.d_img = 5;
    cvqa::testing::write_file(manifest_path_for(path), manifest_to_json(m));
    CHECK(error_of([&] { (void)load_dataset(path); }) == Errc::dimension_mismatch);
    CHECK(error_of([&] { (void)load_dataset(dir / "missing.emb1"); }) == Errc::io_error);
  }

  TEST_CASE("validate_records") {
    auto d = toy_dataset(2, 13);
    CHECK_NOTHROW(validate_records(d));

    auto unknown_task = d;
    unknown_task.records[0].task_id = 9;
    CHECK(error_of([&] { validate_records(unknown_task); }) == Errc::corrupt);

    auto bad_label = d;
    bad_label.records[0].label_id = 3;  // belongs to task 1
    CHECK(error_of([&] { validate_records(bad_label); }) == Errc::label_out_of_range);

    auto dup = d;
    dup.records[1].record_id = dup.records[0].record_id;
    CHECK(error_of([&] { validate_records(dup); }) == Errc::corrupt);

    auto partial = d;
    partial.manifest.split[partial.records[0].record_id] = Split::train;
    CHECK(error_of([&] { validate_records(partial); }) == Errc::corrupt);
  }

  TEST_CASE("prompt table round-trip") {
    TempDir dir;
    Rng rng(14);
    std::vector<PromptSet> sets;
    sets.emplace_back(0, std::vector<LabelPrompt>{{0, EmbeddingVector(cvqa::testing::random_floats(rng, 6))},
                                                  {1, EmbeddingVector(cvqa::testing::random_floats(rng, 6))}});
    sets.emplace_back(2, std::vector<LabelPrompt>{{2, EmbeddingVector(cvqa::testing::random_floats(rng, 6))},
                                                  {3, EmbeddingVector(cvqa::testing::random_floats(rng, 6))}});
    const auto path = dir / "prompts.emb1";
    save_prompt_table(sets, path);
    auto loaded = load_prompt_table(path);
    REQUIRE(loaded.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
      CHECK(loaded[s].task_id() == sets[s].task_id());
      REQUIRE(loaded[s].size() == 2);
      for (std::size_t e = 0; e < 2; ++e) {
        CHECK(loaded[s].entries()[e].label_id == sets[s].entries()[e].label_id);
        CHECK(loaded[s].entries()[e].embedding == sets[s].entries()[e].embedding);
      }
    }

    auto d = toy_dataset(1, 15);
    std::ofstream out(dir / "notprompts.emb1", std::ios::binary);
    write_emb1(d.records, 3, 2, out);
    out.close();
    CHECK(error_of([&] { (void)load_prompt_table(dir / "notprompts.emb1"); }) == Errc::corrupt);
  }

  TEST_CASE("split honors a pre-assigned split") {
    auto d = toy_dataset(5, 16);
    std::set<std::size_t> expect_test;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const bool test = (i * 7) % 4 == 1;
      d.manifest.split[d.records[i].record_id] = test ? Split::test : Split::train;
      if (test) expect_test.insert(i);
    }
    auto s = split(d, 0.5, 1);
    CHECK(std::set<std::size_t>(s.test.begin(), s.test.end()) == expect_test);
    CHECK(s.train.size() + s.test.size() == d.records.size());
    CHECK(s.warnings.empty());
  }

  TEST_CASE("stratified split sizes") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      Dataset d;
      d.manifest = two_task_manifest(2, 2);
      std::map<std::pair<int, int>, std::size_t> sizes;
      std::uint64_t id = 0;
      for (int task = 0; task < 2; ++task) {
        for (int label : d.manifest.tasks[static_cast<std::size_t>(task)].label_ids) {
          const std::size_t n = 2 + rng.uniform_index(30);
          sizes[{task, label}] = n;
          for (std::size_t i = 0; i < n; ++i) d.records.push_back(make_record(rng, id++, task, label, 2, 2));
        }
      }
      rng.shuffle(std::span(d.records));
      const double frac = 0.05 + 0.9 * rng.uniform();
      auto s = split(d, frac, rng.next_u64());

      std::size_t capacity = 0;  // each class keeps one train record
      for (const auto& [key, n] : sizes) capacity += n - 1;
      const auto expected_total = std::min(
          capacity, static_cast<std::size_t>(std::llround(frac * static_cast<double>(d.records.size()))));
      CHECK(s.test.size() == expected_total);
      CHECK(s.train.size() + s.test.size() == d.records.size());
      CHECK(std::is_sorted(s.train.begin(), s.train.end()));
      CHECK(std::is_sorted(s.test.begin(), s.test.end()));
      std::set<std::size_t> all(s.train.begin(), s.train.end());
      all.insert(s.test.begin(), s.test.end());
      CHECK(all.size() == d.records.size());

      std::map<std::pair<int, int>, std::size_t> test_per_class;
      for (auto i : s.test) ++test_per_class[{d.records[i].task_id, d.records[i].label_id}];
      bool any_capped = false;
      for (const auto& [key, n] : sizes) any_capped |= std::floor(frac * static_cast<double>(n)) + 1 > static_cast<double>(n - 1);
      for (const auto& [key, n] : sizes) {
        const auto floor_share = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n)));
        const auto got = test_per_class[key];
        CHECK(got >= std::min(floor_share, n - 1));
        // Units a capped class cannot take move to others, so the +1 bound only holds uncapped.
        if (!any_capped) CHECK(got <= floor_share + 1);
        CHECK(got < n);
      }
    }
  }

  TEST_CASE("split is deterministic per seed") {
    auto d = toy_dataset(20, 18);
    auto a = split(d, 0.3, 5);
    auto b = split(d, 0.3, 5);
    auto c = split(d, 0.3, 6);
    CHECK(a.test == b.test);
    CHECK(a.train == b.train);
    CHECK(a.test != c.test);
  }

  TEST_CASE("singleton classes stay in train with a warning") {
    Rng rng(19);
    Dataset d;
    d.manifest = two_task_manifest(2, 2);
    d.records.push_back(make_record(rng, 1, 0, 0, 2, 2));
    for (std::uint64_t id = 2; id < 12; ++id) d.records.push_back(make_record(rng, id, 0, 1, 2, 2));
    auto s = split(d, 0.5, 3);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("label 0") != std::string::npos);
    CHECK(std::find(s.train.begin(), s.train.end(), 0) != s.train.end());
    CHECK(s.test.size() == 5);
  }

  TEST_CASE("split rejects fractions outside (0, 1)") {
    auto d = toy_dataset(3, 20);
    for (double f : {0.0, 1.0, -0.1, 1.5}) CHECK(error_of([&] { (void)split(d, f, 1); }) == Errc::invalid_argument);
  }

  TEST_CASE("count validation") {
    auto d = toy_dataset(3, 21);  // 12 records, task 0 ids 100..105, task 1 ids 106..111
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      if (i == 11) continue;
      d.manifest.split[d.records[i].record_id] = i % 4 == 0 ? Split::test : Split::train;
    }
    d.manifest.train_images = 5;
    ExpectedCounts e;
    e.train = 8;
    e.test = 3;
    e.total = 12;
    e.train_images = 5;
    e.train_per_task = {{0, 4}, {1, 4}};
    e.test_per_task = {{0, 2}, {1, 1}};
    auto r = validate_counts(d, e);
    CHECK(r.train == 8);
    CHECK(r.test == 3);
    CHECK(r.unassigned == 1);
    CHECK(r.total == 12);
    CHECK(r.ok());

    e.test = 4;
    e.test_images = 2;
    r = validate_counts(d, e);
    REQUIRE(r.mismatches.size() == 2);
    CHECK(r.mismatches[0].quantity == "test records");
    CHECK(r.mismatches[0].expected == 4);
    CHECK(r.mismatches[0].actual == 3);
    CHECK(r.mismatches[1].quantity == "test images");
  }

  TEST_CASE("FloodNet reference counts") {
    auto e = floodnet_expected_counts();
    CHECK(e.train == 3620u);
    CHECK(e.test == 891u);
    CHECK(e.total == 4511u);
    CHECK(*e.train + *e.test == *e.total);
    CHECK(e.train_images == 1158u);
    CHECK(e.test_images == 290u);

    auto parsed = expected_counts_from_json(
        R"({"name": "floodnet-vqa", "train": 3620, "test": 891, "total": 4511,
            "train_images": 1158, "test_images": 290, "train_per_task": {"1": 10}})");
    CHECK(parsed.name == e.name);
    CHECK(parsed.train == e.train);
    CHECK(parsed.total == e.total);
    CHECK(parsed.test_images == e.test_images);
    CHECK(parsed.train_per_task.at(1) == 10);
    CHECK(error_of([] { (void)expected_counts_from_json("[1,"); }) == Errc::corrupt);
  }

  TEST_CASE("FloodNet manifest template") {
    auto m = floodnet_manifest_template();
    CHECK_NOTHROW(m.validate());
    CHECK(m.tasks.size() == 3);
    CHECK(m.tasks[0].name == "Yes/No");
    CHECK(m.tasks[1].name == "Image Condition Recognition");
    CHECK(m.tasks[2].name == "Road Condition Recognition");
    CHECK(m.d_img == 768);
    CHECK(m.d_txt == 768);
    for (const auto& t : m.tasks) CHECK(t.label_ids.size() == 2);
    CHECK(manifest_from_json(manifest_to_json(m)) == m);
  }

  TEST_CASE("shipped data/ files match the built-in FloodNet bundle") {
    auto slurp = [](const char* name) {
      std::ifstream in(std::string(CVQA_SOURCE_DIR) + "/data/" + name);
      REQUIRE(in);
      std::stringstream text;
      text << in.rdbuf();
      return text.str();
    };
    CHECK(manifest_from_json(slurp("floodnet.manifest")) == floodnet_manifest_template());
    const auto file = expected_counts_from_json(slurp("floodnet_expected.json"));
    const auto builtin = floodnet_expected_counts();
    CHECK(file.name == builtin.name);
    CHECK(file.train == builtin.train);
    CHECK(file.test == builtin.test);
    CHECK(file.total == builtin.total);
    CHECK(file.train_images == builtin.train_images);
    CHECK(file.test_images == builtin.test_images);
  }
}
