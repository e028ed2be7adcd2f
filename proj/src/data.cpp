#include "asbd/data.hpp"

#include "asbd/errors.hpp"
#include "asbd/rng.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace asbd {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"<pad>", "<s>", "</s>", "<unk>"};
  return tokens;
}

}  // namespace

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < static_cast<std::size_t>(kNumReserved) ||
      !std::equal(reserved_tokens().begin(), reserved_tokens().end(), tokens_.begin())) {
    throw DataError("vocabulary must start with the reserved tokens <pad> <s> </s> <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) { return Vocab(std::move(tokens)); }

Vocab Vocab::build(std::span<const Sentence> sentences, int min_freq, std::size_t max_size) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  if (max_size != 0 && max_size < static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("max vocabulary size must leave room for the reserved tokens");
  }
  std::map<std::string, long long> counts;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    for (const auto& tok : s) {
      ++counts[tok];
      ++total;
    }
  }
  if (total == 0) throw DataError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, long long>> ranked;
  for (auto& [tok, n] : counts) {
    const bool reserved = std::find(reserved_tokens().begin(), reserved_tokens().end(), tok) != reserved_tokens().end();
    if (n >= min_freq && !reserved) ranked.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = reserved_tokens();
  for (const auto& [tok, n] : ranked) {
    if (max_size != 0 && tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const Sentence& sentence) const {
  std::vector<int> ids;
  ids.reserve(sentence.size());
  for (const auto& tok : sentence) ids.push_back(id(tok));
  return ids;
}

Sentence Vocab::decode(std::span<const int> ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (int i : ids) {
    if (i == kPadId || i == kBosId || i == kEosId) continue;
    out.push_back(token(i));
  }
  return out;
}

// ---------------------------------------------------------------- TSV

Sentence tokenize(const std::string& line) {
  Sentence out;
  std::string current;
  for (char c : line) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v') {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

ParallelCorpus parse_parallel_tsv(std::istream& in, const std::filesystem::path& label) {
  ParallelCorpus corpus;
  corpus.path = label;
  std::string line;
  while (std::getline(in, line)) {
    ++corpus.line_count;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ++corpus.skipped;
      continue;
    }
    SentencePair pair{tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))};
    if (pair.source.empty() || pair.target.empty()) {
      ++corpus.skipped;
      continue;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

ParallelCorpus load_parallel_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file '" + path.string() + "'");
  ParallelCorpus corpus = parse_parallel_tsv(in, path);
  if (corpus.pairs.empty()) throw DataError("no valid sentence pairs in '" + path.string() + "'");
  return corpus;
}

void write_parallel_tsv(const std::filesystem::path& path, std::span<const SentencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file '" + path.string() + "'");
  for (const auto& p : pairs) out << join(p.source) << '\t' << join(p.target) << '\n';
  if (!out) throw IoError("failed writing corpus file '" + path.string() + "'");
}

std::vector<Sentence> source_side(const ParallelCorpus& corpus) {
  std::vector<Sentence> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) out.push_back(p.source);
  return out;
}

std::vector<Sentence> target_side(const ParallelCorpus& corpus) {
  std::vector<Sentence> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) out.push_back(p.target);
  return out;
}

// ---------------------------------------------------------------- buckets

void validate_boundaries(std::span<const std::size_t> boundaries) {
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] == 0) throw ConfigError("bucket boundaries must be positive");
    if (i > 0 && boundaries[i] <= boundaries[i - 1]) throw ConfigError("bucket boundaries must be strictly ascending");
  }
}

std::size_t length_bucket(std::size_t length, std::span<const std::size_t> boundaries) {
  if (length == 0) throw DataError("length_bucket: length must be >= 1");
  validate_boundaries(boundaries);
  const auto it = std::lower_bound(boundaries.begin(), boundaries.end(), length);
  return static_cast<std::size_t>(it - boundaries.begin());
}

std::string bucket_label(std::size_t bucket, std::span<const std::size_t> boundaries) {
  if (bucket > boundaries.size()) throw IndexError("bucket index out of range");
  const std::size_t lo = bucket == 0 ? 1 : boundaries[bucket - 1] + 1;
  if (bucket == boundaries.size()) return std::to_string(lo) + "+";
  return std::to_string(lo) + "-" + std::to_string(boundaries[bucket]);
}

// ---------------------------------------------------------------- synthetic

SyntheticTask parse_synthetic_task(const std::string& name) {
  if (name == "copy") return SyntheticTask::copy;
  if (name == "reverse") return SyntheticTask::reverse;
  if (name == "suffix_checksum") return SyntheticTask::suffix_checksum;
  throw ConfigError("unknown synthetic task '" + name + "' (expected copy, reverse or suffix_checksum)");
}

std::string to_string(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::copy:
      return "copy";
    case SyntheticTask::reverse:
      return "reverse";
    case SyntheticTask::suffix_checksum:
      return "suffix_checksum";
  }
  return "?";
}

std::string synthetic_token(int id) { return "t" + std::to_string(id); }

ParallelCorpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.alphabet < 2) throw ConfigError("synthetic alphabet must have at least 2 symbols");
  if (spec.min_len < 1 || spec.max_len < spec.min_len) throw ConfigError("invalid synthetic length range");
  Rng rng(spec.seed);
  ParallelCorpus corpus;
  corpus.pairs.reserve(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    const auto len = static_cast<std::size_t>(
        rng.between(static_cast<long long>(spec.min_len), static_cast<long long>(spec.max_len)));
    std::vector<int> ids(len);
    for (auto& id : ids) id = kNumReserved + static_cast<int>(rng.below(spec.alphabet));

    std::vector<int> target = ids;
    if (spec.task == SyntheticTask::reverse) std::reverse(target.begin(), target.end());
    if (spec.task == SyntheticTask::suffix_checksum) {
      const long long total = std::accumulate(ids.begin(), ids.end(), 0LL);
      target.push_back(static_cast<int>(total % static_cast<long long>(spec.alphabet)) + kNumReserved);
    }
    SentencePair pair;
    for (int id : ids) pair.source.push_back(synthetic_token(id));
    for (int id : target) pair.target.push_back(synthetic_token(id));
    corpus.pairs.push_back(std::move(pair));
  }
  corpus.line_count = spec.count;
  return corpus;
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) out.push_back({src_vocab.encode(p.source), tgt_vocab.encode(p.target)});
  return out;
}

}  // namespace asbd
