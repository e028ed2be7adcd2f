#include "asbd/cli.hpp"

#include "asbd/checkpoint.hpp"
#include "asbd/data.hpp"
#include "asbd/errors.hpp"
#include "asbd/gradcheck.hpp"
#include "asbd/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace asbd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::vector<std::size_t> parse_boundaries(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad bucket boundary '" + item + "'");
    }
  }
  validate_boundaries(out);
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("ASBD_SEED");
  if (text == nullptr || *text == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != std::string(text).size()) throw std::invalid_argument(text);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string("ASBD_SEED is not an unsigned integer: ") + text);
  }
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  const fs::path probe = dir / ".asbd_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

void ensure_readable_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::is_regular_file(path)) throw IoError(what + " file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError(what + " file is not readable: " + path.string());
}

}  // namespace

RunConfig RunConfig::parse(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "train") {
      c.train_path = resolve(base_dir, get_as<std::string>(value, key));
    } else if (key == "valid") {
      c.valid_path = resolve(base_dir, get_as<std::string>(value, key));
    } else if (key == "test") {
      c.test_path = resolve(base_dir, get_as<std::string>(value, key));
    } else if (key == "checkpoint_dir") {
      c.checkpoint_dir = resolve(base_dir, get_as<std::string>(value, key));
    } else if (key == "report_dir") {
      c.report_dir = resolve(base_dir, get_as<std::string>(value, key));
    } else if (key == "d_model") {
      c.model.d_model = get_as<Index>(value, key);
    } else if (key == "n_heads") {
      c.model.n_heads = get_as<Index>(value, key);
    } else if (key == "d_ff") {
      c.model.d_ff = get_as<Index>(value, key);
    } else if (key == "n_enc_layers") {
      c.model.n_enc_layers = get_as<int>(value, key);
    } else if (key == "n_dec_layers") {
      c.model.n_dec_layers = get_as<int>(value, key);
    } else if (key == "extra_res_fwd") {
      c.model.extra_res_fwd = get_as<int>(value, key);
    } else if (key == "extra_res_rev") {
      c.model.extra_res_rev = get_as<int>(value, key);
    } else if (key == "max_len") {
      c.model.max_len = get_as<Index>(value, key);
    } else if (key == "dropout") {
      c.model.dropout = get_as<double>(value, key);
    } else if (key == "lambda") {
      c.model.loss_weight_lambda = get_as<double>(value, key);
    } else if (key == "share_tgt_embedding") {
      c.model.share_tgt_embedding = get_as<bool>(value, key);
    } else if (key == "epochs") {
      c.training.epochs = get_as<int>(value, key);
    } else if (key == "batch_size") {
      c.training.batch_size = get_as<Index>(value, key);
    } else if (key == "warmup") {
      c.training.warmup = get_as<std::int64_t>(value, key);
    } else if (key == "lr_scale") {
      c.training.lr_scale = get_as<double>(value, key);
    } else if (key == "clip_norm") {
      c.training.clip_norm = get_as<double>(value, key);
    } else if (key == "patience") {
      c.training.patience = get_as<int>(value, key);
    } else if (key == "min_delta") {
      c.training.min_delta = get_as<double>(value, key);
    } else if (key == "chunk_batches") {
      c.training.chunk_batches = get_as<Index>(value, key);
    } else if (key == "min_freq") {
      c.min_freq = get_as<int>(value, key);
    } else if (key == "max_vocab") {
      c.max_vocab = get_as<std::size_t>(value, key);
    } else if (key == "strategy") {
      c.strategy = parse_merge_strategy(get_as<std::string>(value, key));
    } else if (key == "beam") {
      c.beam = get_as<Index>(value, key);
    } else if (key == "bucket_boundaries") {
      c.bucket_boundaries = get_as<std::vector<std::size_t>>(value, key);
      validate_boundaries(c.bucket_boundaries);
    } else if (key == "seed") {
      c.seed = get_as<std::uint64_t>(value, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (c.beam < 1) throw ConfigError("beam must be >= 1");
  c.training.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void RunConfig::validate_paths() const {
  ensure_readable_file(train_path, "train");
  ensure_readable_file(valid_path, "valid");
  if (!test_path.empty()) ensure_readable_file(test_path, "test");
  if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir is required");
  ensure_writable_dir(checkpoint_dir);
  if (!report_dir.empty()) ensure_writable_dir(report_dir);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const auto env = env_seed()) return *env;
  return 1;
}

// ---------------------------------------------------------------- commands

namespace {

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,valid_bleu\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_fixed(r.train_loss, 6) << ',' << format_fixed(r.valid_bleu, 6) << '\n';
  }
  return out.str();
}

// --- synth

struct SynthArgs {
  std::string task = "copy";
  std::size_t n = 1000;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t alphabet = 20;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

int cmd_synth(const SynthArgs& a, Streams& s) {
  SyntheticSpec spec;
  spec.task = parse_synthetic_task(a.task);
  spec.count = a.n;
  spec.min_len = a.min_len;
  spec.max_len = a.max_len;
  spec.alphabet = a.alphabet;
  spec.seed = resolve_seed(a.seed, std::nullopt);
  if (spec.count == 0) throw ConfigError("--n must be >= 1");
  ParallelCorpus corpus = gen_synthetic(spec);

  std::vector<std::size_t> order(corpus.pairs.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  Rng split_rng = Rng(spec.seed).fork(0x53504c4954);  // "SPLIT"
  split_rng.shuffle(order);
  const std::size_t n_train = corpus.pairs.size() * 8 / 10;
  const std::size_t n_valid = corpus.pairs.size() / 10;
  std::vector<SentencePair> train, valid, test;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dest = k < n_train ? train : (k < n_train + n_valid ? valid : test);
    dest.push_back(corpus.pairs[order[k]]);
  }
  const fs::path dir(a.out_dir);
  ensure_writable_dir(dir);
  write_parallel_tsv(dir / "train.tsv", train);
  write_parallel_tsv(dir / "valid.tsv", valid);
  write_parallel_tsv(dir / "test.tsv", test);
  s.out << "wrote " << train.size() << "/" << valid.size() << "/" << test.size() << " pairs (" << to_string(spec.task)
        << ", seed " << spec.seed << ") to " << dir.string() << "\n";
  return kExitOk;
}

// --- train

struct TrainArgs {
  std::string config;
  std::optional<std::string> strategy;
  std::optional<double> lambda;
  std::optional<int> extra_res_fwd;
  std::optional<int> extra_res_rev;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint_dir;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, Streams& s) {
  RunConfig rc = RunConfig::load(a.config);
  if (a.strategy) rc.strategy = parse_merge_strategy(*a.strategy);
  if (a.lambda) rc.model.loss_weight_lambda = *a.lambda;
  if (a.extra_res_fwd) rc.model.extra_res_fwd = *a.extra_res_fwd;
  if (a.extra_res_rev) rc.model.extra_res_rev = *a.extra_res_rev;
  if (a.epochs) rc.training.epochs = *a.epochs;
  if (a.checkpoint_dir) rc.checkpoint_dir = *a.checkpoint_dir;
  const std::uint64_t seed = resolve_seed(a.seed, rc.seed);
  rc.model.seed = seed;
  rc.training.seed = seed;
  rc.training.valid_strategy = rc.strategy;
  rc.training.validate();
  rc.validate_paths();

  const ParallelCorpus train_corpus = load_parallel_tsv(rc.train_path);
  const ParallelCorpus valid_corpus = load_parallel_tsv(rc.valid_path);
  const Vocab src_vocab = Vocab::build(source_side(train_corpus), rc.min_freq, rc.max_vocab);
  const Vocab tgt_vocab = Vocab::build(target_side(train_corpus), rc.min_freq, rc.max_vocab);
  rc.model.src_vocab = static_cast<Index>(src_vocab.size());
  rc.model.tgt_vocab = static_cast<Index>(tgt_vocab.size());
  rc.model.validate();
  const auto train_pairs = encode_corpus(train_corpus, src_vocab, tgt_vocab);
  const auto valid_pairs = encode_corpus(valid_corpus, src_vocab, tgt_vocab);

  BidirModel<float> model = init_model<float>(rc.model);
  const fs::path ckpt_path = rc.checkpoint_dir / "best.ckpt";
  const fs::path history_path = rc.checkpoint_dir / "history.csv";
  s.out << "train " << train_pairs.size() << " pairs, valid " << valid_pairs.size() << " pairs, "
        << parameter_count(model.parameters()) << " parameters, strategy " << to_string(rc.strategy) << ", seed "
        << seed << "\n";

  TrainConfig tc = rc.training;
  tc.on_best = [&](int epoch, const std::vector<EpochRecord>& history) {
    save_checkpoint(ckpt_path, model, src_vocab, tgt_vocab, epoch, history);
  };
  tc.on_epoch = [&](const EpochRecord& r) {
    if (!a.quiet) {
      s.out << "epoch " << r.epoch << " train_loss " << format_fixed(r.train_loss, 6) << " valid_bleu "
            << format_fixed(r.valid_bleu, 3) << "\n";
      s.out.flush();
    }
  };
  const TrainResult result = train(model, train_pairs, valid_pairs, tc);
  write_text_file(history_path, history_csv(result.history));
  if (result.history.empty()) save_checkpoint(ckpt_path, model, src_vocab, tgt_vocab, 0, result.history);
  if (result.history.empty()) {
    s.out << "no epochs run; saved untrained model to " << ckpt_path.string() << "\n";
  } else {
    s.out << "best valid_bleu " << format_fixed(result.best_bleu, 3) << " at epoch " << result.best_epoch
          << (result.stopped_early ? " (early stop)" : "") << "\n";
  }
  return kExitOk;
}

// --- translate

struct TranslateArgs {
  std::string checkpoint;
  std::string input = "-";
  std::string output = "-";
  std::string strategy = "score_split";
  Index beam = 1;
  bool emit_splits = false;
};

std::vector<std::vector<std::string>> translate_sentences(const Checkpoint<float>& ckpt,
                                                          const std::vector<Sentence>& sources,
                                                          const TranslateOptions& options,
                                                          std::vector<MergedTranslation>* merged = nullptr) {
  std::vector<std::vector<int>> ids;
  std::vector<std::size_t> where;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k].empty()) continue;
    ids.push_back(ckpt.src_vocab.encode(sources[k]));
    where.push_back(k);
  }
  const auto results = translate_batch(ckpt.model, ids, options);
  std::vector<std::vector<std::string>> out(sources.size());
  if (merged) merged->assign(sources.size(), MergedTranslation{});
  for (std::size_t r = 0; r < results.size(); ++r) {
    out[where[r]] = ckpt.tgt_vocab.decode(results[r].merged.tokens);
    if (merged) (*merged)[where[r]] = results[r].merged;
  }
  return out;
}

int cmd_translate(const TranslateArgs& a, Streams& s) {
  TranslateOptions options;
  options.strategy = parse_merge_strategy(a.strategy);
  options.beam = a.beam;
  if (options.beam < 1) throw ConfigError("--beam must be >= 1");
  const Checkpoint<float> ckpt = load_checkpoint<float>(a.checkpoint);

  std::ifstream file_in;
  std::istream* in = &s.in;
  if (a.input != "-") {
    file_in.open(a.input);
    if (!file_in) throw IoError("cannot read " + a.input);
    in = &file_in;
  }
  std::vector<Sentence> sources;
  std::string line;
  while (std::getline(*in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    sources.push_back(tokenize(line.substr(0, line.find('\t'))));
  }

  std::vector<MergedTranslation> merged;
  const auto outputs = translate_sentences(ckpt, sources, options, &merged);
  std::ostringstream text;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    text << join(outputs[k]);
    if (a.emit_splits) {
      text << '\t' << merged[k].split_i << '\t' << merged[k].split_j << '\t' << format_fixed(merged[k].norm_score, 6)
           << '\t' << to_string(options.strategy);
    }
    text << '\n';
  }
  if (a.output == "-") {
    s.out << text.str();
  } else {
    write_text_file(a.output, text.str());
  }
  return kExitOk;
}

// --- evaluate

struct EvaluateArgs {
  std::string config;
  std::string test;
  std::vector<std::string> systems;
  std::vector<std::string> hyps;
  std::string boundaries;
  std::string report_dir;
  Index beam = 1;
};

std::pair<std::string, std::string> split_named(const std::string& spec, const std::string& flag) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw ConfigError(flag + " expects name=value, got '" + spec + "'");
  }
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

int cmd_evaluate(const EvaluateArgs& a, Streams& s) {
  fs::path test_path;
  fs::path report_dir;
  std::vector<std::size_t> boundaries{10, 20, 30, 40, 50};
  Index beam = a.beam;
  if (!a.config.empty()) {
    const RunConfig rc = RunConfig::load(a.config);
    test_path = rc.test_path;
    report_dir = rc.report_dir;
    boundaries = rc.bucket_boundaries;
  }
  if (!a.test.empty()) test_path = a.test;
  if (!a.report_dir.empty()) report_dir = a.report_dir;
  if (!a.boundaries.empty()) boundaries = parse_boundaries(a.boundaries);
  if (a.systems.empty() && a.hyps.empty()) throw ConfigError("evaluate needs at least one --system or --hyp");
  if (test_path.empty()) throw ConfigError("evaluate needs a test corpus (--test or config 'test')");
  if (report_dir.empty()) throw ConfigError("evaluate needs a report directory (--report-dir or config 'report_dir')");
  ensure_readable_file(test_path, "test");
  ensure_writable_dir(report_dir);

  const ParallelCorpus test = load_parallel_tsv(test_path);
  const auto sources = source_side(test);
  const auto references = target_side(test);
  std::vector<std::string> names;
  std::vector<std::vector<double>> scores;  // [system][sentence]
  std::set<std::string> seen;

  const auto add_system = [&](const std::string& name, const std::vector<Sentence>& hyps) {
    if (!seen.insert(name).second) throw ConfigError("duplicate system name '" + name + "'");
    std::vector<double> col;
    for (std::size_t k = 0; k < references.size(); ++k) col.push_back(sentence_bleu(hyps[k], references[k]).value);
    names.push_back(name);
    scores.push_back(std::move(col));
  };

  std::map<std::string, Checkpoint<float>> loaded;
  for (const auto& spec : a.systems) {
    auto [name, rest] = split_named(spec, "--system");
    std::string path = rest;
    MergeStrategy strategy = MergeStrategy::score_split;
    const auto colon = rest.rfind(':');
    if (colon != std::string::npos) {
      try {
        strategy = parse_merge_strategy(rest.substr(colon + 1));
        path = rest.substr(0, colon);
      } catch (const ConfigError&) {
        // The colon belongs to the path.
      }
    }
    auto it = loaded.find(path);
    if (it == loaded.end()) it = loaded.emplace(path, load_checkpoint<float>(path)).first;
    TranslateOptions options;
    options.strategy = strategy;
    options.beam = beam;
    std::vector<Sentence> hyps = translate_sentences(it->second, sources, options);
    add_system(name, hyps);
  }
  for (const auto& spec : a.hyps) {
    const auto [name, path] = split_named(spec, "--hyp");
    std::ifstream in(path);
    if (!in) throw IoError("cannot read hypothesis file " + path);
    std::vector<Sentence> hyps;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      hyps.push_back(tokenize(line.substr(0, line.find('\t'))));
    }
    if (hyps.size() != references.size()) {
      throw DataError("hypothesis file " + path + " has " + std::to_string(hyps.size()) + " lines, test has " +
                      std::to_string(references.size()) + " pairs");
    }
    add_system(name, hyps);
  }

  std::vector<SummaryRow> summary;
  for (std::size_t sys = 0; sys < names.size(); ++sys) summary.push_back({names[sys], mean_score(scores[sys])});
  std::vector<BucketItem> items;
  for (std::size_t k = 0; k < references.size(); ++k) {
    BucketItem item;
    item.src_len = sources[k].size();
    for (const auto& col : scores) item.scores.push_back(col[k]);
    items.push_back(std::move(item));
  }
  const BucketReport report = bucket_report(items, names, boundaries);

  std::ostringstream summary_text;
  write_summary_csv(summary_text, summary);
  std::ostringstream bucket_text;
  write_bucket_csv(bucket_text, report);
  write_text_file(report_dir / "summary.csv", summary_text.str());
  write_text_file(report_dir / "buckets.csv", bucket_text.str());
  s.out << summary_text.str();
  return kExitOk;
}

// --- gradcheck

struct GradcheckArgs {
  std::optional<std::uint64_t> seed;
  int seeds = 20;
  std::string precision = "double";
  std::optional<double> h;
  std::optional<double> tolerance;
  std::string inject_sign_flip;
};

struct SignFlipGuard {
  explicit SignFlipGuard(const std::string& op) { set_gradient_sign_flip(op); }
  ~SignFlipGuard() { set_gradient_sign_flip(""); }
};

int cmd_gradcheck(const GradcheckArgs& a, Streams& s) {
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const bool use_double = a.precision == "double";
  if (!use_double && a.precision != "float") throw ConfigError("--precision must be double or float");
  const double h = a.h.value_or(use_double ? 1e-4 : 1e-2);
  const double tolerance = a.tolerance.value_or(use_double ? 1e-4 : 5e-2);
  const std::uint64_t first = resolve_seed(a.seed, std::nullopt);

  struct Worst {
    double error = 0.0;
    std::uint64_t seed = 0;
    std::string parameter;
  };
  std::map<std::string, Worst> worst;
  SignFlipGuard guard(a.inject_sign_flip);
  for (int k = 0; k < a.seeds; ++k) {
    const std::uint64_t seed = first + static_cast<std::uint64_t>(k);
    const auto cases = use_double ? gradcheck_suite<double>(seed, h) : gradcheck_suite<float>(seed, h);
    for (const auto& c : cases) {
      auto& w = worst[c.name];
      if (c.result.max_rel_error > w.error || w.parameter.empty()) {
        w = {std::max(w.error, c.result.max_rel_error), seed, c.result.worst_parameter};
      }
    }
  }

  s.out << "gradcheck: " << a.seeds << " seeds from " << first << ", " << a.precision << ", h=" << h
        << ", tolerance " << tolerance << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %-14s %s\n", "op", "max_rel_error", "status");
  s.out << line;
  std::string worst_name;
  for (const auto& name : gradcheck_case_names()) {
    const Worst& w = worst.at(name);
    std::snprintf(line, sizeof line, "%-22s %-14.3e %s\n", name.c_str(), w.error, w.error < tolerance ? "ok" : "FAIL");
    s.out << line;
    if (worst_name.empty() || w.error > worst.at(worst_name).error) worst_name = name;
  }
  const Worst& w = worst.at(worst_name);
  if (w.error < tolerance) {
    s.out << "all " << worst.size() << " checks passed\n";
    return kExitOk;
  }
  s.err << "gradcheck failed: worst offender " << worst_name << " (parameter " << w.parameter << ", seed " << w.seed
        << ") max relative error " << w.error << "\n";
  return kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  Streams streams{in, out, err};
  CLI::App app{"Asynchronous segmented bidirectional-decoding NMT toolkit"};
  app.name("asbd");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic parallel corpus (train/valid/test TSV)");
  synth_cmd->add_option("--task", synth.task, "copy | reverse | suffix_checksum")
      ->check(CLI::IsMember({"copy", "reverse", "suffix_checksum"}));
  synth_cmd->add_option("--n", synth.n, "Total number of pairs");
  synth_cmd->add_option("--min-len", synth.min_len, "Minimum payload length");
  synth_cmd->add_option("--max-len", synth.max_len, "Maximum payload length");
  synth_cmd->add_option("--alphabet", synth.alphabet, "Number of distinct symbols");
  synth_cmd->add_option("--seed", synth.seed, "Seed (falls back to ASBD_SEED, then 1)");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a RunConfig JSON file");
  train_cmd->add_option("config,--config", train_args.config, "RunConfig JSON")->required();
  train_cmd->add_option("--strategy", train_args.strategy, "Validation merge strategy");
  train_cmd->add_option("--lambda", train_args.lambda, "Forward loss weight in [0,1]");
  train_cmd->add_option("--extra-res-fwd", train_args.extra_res_fwd, "Extra residual blocks on the forward decoder");
  train_cmd->add_option("--extra-res-rev", train_args.extra_res_rev, "Extra residual blocks on the reverse decoder");
  train_cmd->add_option("--epochs", train_args.epochs, "Epoch cap");
  train_cmd->add_option("--seed", train_args.seed, "Seed (overrides config and ASBD_SEED)");
  train_cmd->add_option("--checkpoint-dir", train_args.checkpoint_dir, "Output directory for best.ckpt/history.csv");
  train_cmd->add_flag("--quiet", train_args.quiet, "Suppress per-epoch lines");

  TranslateArgs tr;
  auto* translate_cmd = app.add_subcommand("translate", "Translate sentences (one per line, TSV source column)");
  translate_cmd->add_option("--checkpoint", tr.checkpoint, "Checkpoint file")->required();
  translate_cmd->add_option("--input", tr.input, "Input file, '-' for stdin");
  translate_cmd->add_option("--output", tr.output, "Output file, '-' for stdout");
  translate_cmd->add_option("--strategy", tr.strategy, "score_split | midpoint | rescore | l2r_only | r2l_only");
  translate_cmd->add_option("--beam", tr.beam, "Beam width (1 = greedy)");
  translate_cmd->add_flag("--emit-splits", tr.emit_splits, "Append i, j, norm_score, strategy columns");

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Write summary.csv and buckets.csv for one or more systems");
  evaluate_cmd->add_option("--config", ev.config, "RunConfig JSON supplying test, report_dir, bucket_boundaries");
  evaluate_cmd->add_option("--test", ev.test, "Test TSV");
  evaluate_cmd->add_option("--system", ev.systems, "name=checkpoint[:strategy] (repeatable)");
  evaluate_cmd->add_option("--hyp", ev.hyps, "name=hypothesis file (repeatable)");
  evaluate_cmd->add_option("--boundaries", ev.boundaries, "Comma-separated bucket upper bounds");
  evaluate_cmd->add_option("--report-dir", ev.report_dir, "Output directory");
  evaluate_cmd->add_option("--beam", ev.beam, "Beam width for checkpoint systems");

  GradcheckArgs gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and composed block");
  gradcheck_cmd->add_option("--seed", gc.seed, "First seed (falls back to ASBD_SEED, then 1)");
  gradcheck_cmd->add_option("--seeds", gc.seeds, "Number of consecutive seeds");
  gradcheck_cmd->add_option("--precision", gc.precision, "double | float")->check(CLI::IsMember({"double", "float"}));
  gradcheck_cmd->add_option("--step", gc.h, "Finite-difference step h");
  gradcheck_cmd->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");
  gradcheck_cmd->add_option("--inject-sign-flip", gc.inject_sign_flip, "Test hook: negate the gradient of OP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, streams);
    if (train_cmd->parsed()) return cmd_train(train_args, streams);
    if (translate_cmd->parsed()) return cmd_translate(tr, streams);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ev, streams);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gc, streams);
  } catch (const NumericError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace asbd
