#include "asbd/data.hpp"
#include "asbd/errors.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace asbd;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("asbd_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("vocabulary order: reserved, frequency, then lexicographic") {
  const std::vector<Sentence> corpus{{"a", "b", "a"}};
  const Vocab v = Vocab::build(corpus);
  CHECK(v.size() == 6);
  CHECK(v.id("<pad>") == kPadId);
  CHECK(v.id("<s>") == kBosId);
  CHECK(v.id("</s>") == kEosId);
  CHECK(v.id("<unk>") == kUnkId);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);

  const std::vector<Sentence> tie{{"zeta", "alpha", "mid"}};
  const Vocab t = Vocab::build(tie);
  CHECK(t.id("alpha") == 4);
  CHECK(t.id("mid") == 5);
  CHECK(t.id("zeta") == 6);
}

TEST_CASE("min_freq drops rare tokens to UNK") {
  const std::vector<Sentence> corpus{{"a", "b", "a"}};
  const Vocab v = Vocab::build(corpus, 2);
  CHECK_FALSE(v.contains("b"));
  CHECK(v.encode({"b", "a"}) == std::vector<int>{kUnkId, 4});
  CHECK(v.decode(v.encode({"b"})) == Sentence{"<unk>"});
}

TEST_CASE("max_size caps the vocabulary including reserved ids") {
  const std::vector<Sentence> corpus{{"a", "a", "a", "b", "b", "c"}};
  const Vocab v = Vocab::build(corpus, 1, 6);
  CHECK(v.size() == 6);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
  CHECK_FALSE(v.contains("c"));
  CHECK_THROWS_AS(Vocab::build(corpus, 1, 3), ConfigError);
  CHECK_THROWS_AS(Vocab::build(std::vector<Sentence>{}), DataError);
}

TEST_CASE("encode then decode is the identity for in-vocabulary text") {
  const std::vector<Sentence> corpus{{"the", "cat", "sat"}, {"on", "the", "mat"}};
  const Vocab v = Vocab::build(corpus);
  for (const auto& s : corpus) CHECK(v.decode(v.encode(s)) == s);
  const std::vector<int> with_specials{kBosId, v.id("cat"), kEosId, kPadId};
  CHECK(v.decode(with_specials) == Sentence{"cat"});
  CHECK_THROWS_AS(v.token(99), IndexError);
  CHECK(Vocab::from_tokens(v.tokens()) == v);
}

TEST_CASE("tsv parsing: pairs, skips and CRLF") {
  std::istringstream lf("hello world\tguten tag\nno tab here\n\tempty source\nsrc\t\n a  b \t c\n");
  const ParallelCorpus c = parse_parallel_tsv(lf);
  REQUIRE(c.pairs.size() == 2);
  CHECK(c.pairs[0].source == Sentence{"hello", "world"});
  CHECK(c.pairs[0].target == Sentence{"guten", "tag"});
  CHECK(c.pairs[1].source == Sentence{"a", "b"});
  CHECK(c.skipped == 3);
  CHECK(c.line_count == 5);

  std::istringstream crlf("hello world\tguten tag\r\nno tab here\r\n a  b \t c\r\n");
  std::istringstream plain("hello world\tguten tag\nno tab here\n a  b \t c\n");
  const ParallelCorpus x = parse_parallel_tsv(crlf);
  const ParallelCorpus y = parse_parallel_tsv(plain);
  REQUIRE(x.pairs.size() == y.pairs.size());
  for (std::size_t k = 0; k < x.pairs.size(); ++k) {
    CHECK(x.pairs[k].source == y.pairs[k].source);
    CHECK(x.pairs[k].target == y.pairs[k].target);
  }
  CHECK(x.skipped == y.skipped);
}

TEST_CASE("tsv files: round trip, missing file, no valid lines") {
  const auto dir = scratch_dir("tsv");
  const std::vector<SentencePair> pairs{{{"a", "b"}, {"c"}}, {{"d"}, {"e", "f"}}};
  write_parallel_tsv(dir / "x.tsv", pairs);
  const ParallelCorpus back = load_parallel_tsv(dir / "x.tsv");
  REQUIRE(back.pairs.size() == 2);
  CHECK(back.pairs[1].target == Sentence{"e", "f"});
  CHECK(back.path == dir / "x.tsv");

  try {
    load_parallel_tsv(dir / "missing.tsv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing.tsv") != std::string::npos);
  }
  std::ofstream(dir / "bad.tsv") << "no tabs\nat all\n";
  CHECK_THROWS_AS(load_parallel_tsv(dir / "bad.tsv"), DataError);
}

TEST_CASE("length buckets") {
  const std::vector<std::size_t> b{10, 20, 30};
  CHECK(length_bucket(15, b) == 1);
  CHECK(length_bucket(10, b) == 0);
  CHECK(length_bucket(1, b) == 0);
  CHECK(length_bucket(99, b) == 3);
  CHECK(bucket_label(0, b) == "1-10");
  CHECK(bucket_label(1, b) == "11-20");
  CHECK(bucket_label(3, b) == "31+");
  CHECK_THROWS_AS(length_bucket(0, b), DataError);
  const std::vector<std::size_t> bad{10, 10};
  CHECK_THROWS_AS(validate_boundaries(bad), ConfigError);

  // Total and exhaustive: every length lands in exactly one bucket.
  for (std::size_t len = 1; len < 100; ++len) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k <= b.size(); ++k) {
      const std::size_t lo = k == 0 ? 1 : b[k - 1] + 1;
      const std::size_t hi = k == b.size() ? SIZE_MAX : b[k];
      if (len >= lo && len <= hi) {
        ++hits;
        CHECK(length_bucket(len, b) == k);
      }
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("synthetic tasks") {
  SyntheticSpec spec;
  spec.count = 200;
  spec.min_len = 2;
  spec.max_len = 6;
  spec.alphabet = 10;
  spec.seed = 3;

  spec.task = SyntheticTask::copy;
  for (const auto& p : gen_synthetic(spec).pairs) {
    CHECK(p.target == p.source);
    CHECK(p.source.size() >= 2);
    CHECK(p.source.size() <= 6);
  }

  spec.task = SyntheticTask::reverse;
  for (const auto& p : gen_synthetic(spec).pairs) CHECK(p.target == Sentence(p.source.rbegin(), p.source.rend()));

  spec.task = SyntheticTask::suffix_checksum;
  for (const auto& p : gen_synthetic(spec).pairs) {
    REQUIRE(p.target.size() == p.source.size() + 1);
    CHECK(Sentence(p.target.begin(), p.target.end() - 1) == p.source);
    int sum = 0;
    for (const auto& tok : p.source) sum += std::stoi(tok.substr(1));
    CHECK(p.target.back() == synthetic_token(sum % 10 + 4));
  }

  CHECK(synthetic_token(4) == "t4");
  CHECK(parse_synthetic_task("suffix_checksum") == SyntheticTask::suffix_checksum);
  CHECK_THROWS_AS(parse_synthetic_task("sort"), ConfigError);
}

TEST_CASE("checksum of payload [4,5,6] over alphabet 10 is id 9") {
  // Payload ids 4,5,6 are t4,t5,t6; (15 mod 10) + 4 = 9.
  SyntheticSpec spec;
  spec.task = SyntheticTask::suffix_checksum;
  spec.alphabet = 10;
  spec.min_len = 3;
  spec.max_len = 3;
  spec.count = 20000;
  spec.seed = 1;
  bool seen = false;
  for (const auto& p : gen_synthetic(spec).pairs) {
    if (p.source == Sentence{"t4", "t5", "t6"}) {
      CHECK(p.target.back() == "t9");
      seen = true;
    }
  }
  CHECK(seen);
}

TEST_CASE("synthetic generation is seed-deterministic") {
  SyntheticSpec spec;
  spec.count = 50;
  spec.min_len = 1;
  spec.max_len = 9;
  spec.alphabet = 7;
  spec.seed = 12;
  const auto a = gen_synthetic(spec);
  const auto b = gen_synthetic(spec);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t k = 0; k < a.pairs.size(); ++k) CHECK(a.pairs[k].source == b.pairs[k].source);
  spec.seed = 13;
  const auto c = gen_synthetic(spec);
  bool differs = false;
  for (std::size_t k = 0; k < a.pairs.size(); ++k) differs = differs || a.pairs[k].source != c.pairs[k].source;
  CHECK(differs);

  spec.alphabet = 1;
  CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
  spec.alphabet = 4;
  spec.min_len = 0;
  CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
}

TEST_CASE("corpus encoding uses each side's vocabulary") {
  ParallelCorpus c;
  c.pairs = {{{"x", "y"}, {"p"}}, {{"y"}, {"q", "p"}}};
  const Vocab sv = Vocab::build(source_side(c));
  const Vocab tv = Vocab::build(target_side(c));
  const auto enc = encode_corpus(c, sv, tv);
  REQUIRE(enc.size() == 2);
  CHECK(enc[0].source == sv.encode({"x", "y"}));
  CHECK(enc[1].target == tv.encode({"q", "p"}));
}

}  // TEST_SUITE
