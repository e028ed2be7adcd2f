#ifndef ASBD_DATA_HPP
#define ASBD_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace asbd {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

using Sentence = std::vector<std::string>;

class Vocab {
 public:
  // Only the reserved entries <pad> <s> </s> <unk>.
  Vocab();

  // Reserved ids first, then tokens by (frequency desc, token asc) with
  // count >= min_freq. max_size caps the total size including reserved ids;
  // 0 means unlimited.
  static Vocab build(std::span<const Sentence> sentences, int min_freq = 1, std::size_t max_size = 0);

  // Rebuilds from an id-ordered token list (checkpoint headers).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Sentence& sentence) const;
  // Special ids are dropped, so decode(encode(s)) == s for in-vocab s.
  Sentence decode(std::span<const int> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  explicit Vocab(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct SentencePair {
  Sentence source;
  Sentence target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::filesystem::path path;  // empty for generated corpora
  std::size_t line_count = 0;
  std::size_t skipped = 0;
};

// Whitespace split (spaces, tabs, CR).
Sentence tokenize(const std::string& line);
std::string join(const Sentence& tokens);

// One `source<TAB>target` pair per line; CRLF accepted. Lines without a TAB or
// with an empty side are skipped and counted.
ParallelCorpus load_parallel_tsv(const std::filesystem::path& path);
ParallelCorpus parse_parallel_tsv(std::istream& in, const std::filesystem::path& label = {});
void write_parallel_tsv(const std::filesystem::path& path, std::span<const SentencePair> pairs);

std::vector<Sentence> source_side(const ParallelCorpus& corpus);
std::vector<Sentence> target_side(const ParallelCorpus& corpus);

// Inclusive upper bounds: boundaries [10,20,30] give buckets 1-10, 11-20,
// 21-30 and 31+.
std::size_t length_bucket(std::size_t length, std::span<const std::size_t> boundaries);
std::string bucket_label(std::size_t bucket, std::span<const std::size_t> boundaries);
void validate_boundaries(std::span<const std::size_t> boundaries);

enum class SyntheticTask { copy, reverse, suffix_checksum };

SyntheticTask parse_synthetic_task(const std::string& name);
std::string to_string(SyntheticTask task);

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::copy;
  std::size_t count = 0;
  std::size_t min_len = 1;
  std::size_t max_len = 1;
  std::size_t alphabet = 2;
  std::uint64_t seed = 0;
};

// Token k of the alphabet is spelled "t<k+4>". suffix_checksum appends
// t<(sum of payload ids mod alphabet) + 4>.
ParallelCorpus gen_synthetic(const SyntheticSpec& spec);
std::string synthetic_token(int id);

// Encoded pair with ids from the two vocabularies.
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocab& src_vocab, const Vocab& tgt_vocab);

}  // namespace asbd

#endif  // ASBD_DATA_HPP
