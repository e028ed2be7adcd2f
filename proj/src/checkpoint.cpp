#include "asbd/checkpoint.hpp"

#include "asbd/errors.hpp"

#include <json.hpp>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

namespace asbd {

using nlohmann::json;

CheckpointError::CheckpointError(Kind kind, const std::string& message)
    : std::runtime_error(to_string(kind) + ": " + message), kind_(kind) {}

std::string to_string(CheckpointError::Kind kind) {
  switch (kind) {
    case CheckpointError::Kind::bad_magic:
      return "bad magic";
    case CheckpointError::Kind::version_mismatch:
      return "version mismatch";
    case CheckpointError::Kind::truncated:
      return "truncated";
    case CheckpointError::Kind::bad_header:
      return "bad header";
    case CheckpointError::Kind::io:
      return "io";
  }
  return "?";
}

namespace {

constexpr std::array<char, 4> kMagic{'A', 'S', 'B', 'D'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

template <typename UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
}

template <typename UInt>
UInt get_le(const std::string& in, std::size_t offset) {
  UInt v = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) {
    v |= static_cast<UInt>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers},
              {"extra_res_fwd", c.extra_res_fwd},
              {"extra_res_rev", c.extra_res_rev},
              {"src_vocab", c.src_vocab},
              {"tgt_vocab", c.tgt_vocab},
              {"max_len", c.max_len},
              {"dropout", c.dropout},
              {"loss_weight_lambda", c.loss_weight_lambda},
              {"seed", c.seed},
              {"share_tgt_embedding", c.share_tgt_embedding}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<Index>();
  c.n_heads = j.at("n_heads").get<Index>();
  c.d_ff = j.at("d_ff").get<Index>();
  c.n_enc_layers = j.at("n_enc_layers").get<int>();
  c.n_dec_layers = j.at("n_dec_layers").get<int>();
  c.extra_res_fwd = j.at("extra_res_fwd").get<int>();
  c.extra_res_rev = j.at("extra_res_rev").get<int>();
  c.src_vocab = j.at("src_vocab").get<Index>();
  c.tgt_vocab = j.at("tgt_vocab").get<Index>();
  c.max_len = j.at("max_len").get<Index>();
  c.dropout = j.at("dropout").get<double>();
  c.loss_weight_lambda = j.at("loss_weight_lambda").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.share_tgt_embedding = j.at("share_tgt_embedding").get<bool>();
  return c;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const BidirModel<Scalar>& model, const Vocab& src_vocab,
                     const Vocab& tgt_vocab, int epoch, const std::vector<EpochRecord>& history) {
  if (static_cast<Index>(src_vocab.size()) != model.config.src_vocab ||
      static_cast<Index>(tgt_vocab.size()) != model.config.tgt_vocab) {
    throw ConfigError("checkpoint vocabularies do not match the model config");
  }
  const ParameterList<Scalar> params = model.parameters();
  json header;
  header["config"] = config_to_json(model.config);
  header["src_vocab"] = src_vocab.tokens();
  header["tgt_vocab"] = tgt_vocab.tokens();
  header["epoch"] = epoch;
  json hist = json::array();
  for (const auto& r : history) hist.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"valid_bleu", r.valid_bleu}});
  header["history"] = hist;
  json names = json::array();
  for (const auto& p : params) names.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["parameters"] = names;
  const std::string text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  for (const auto& p : params) {
    for (Index k = 0; k < p.tensor.size(); ++k) {
      const auto f = static_cast<float>(p.tensor.values()[k]);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_le<std::uint32_t>(bytes, bits);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw CheckpointError(Kind::bad_magic, path.string() + " is not an ASBD checkpoint");
  }
  if (bytes.size() < kPreambleBytes) throw CheckpointError(Kind::truncated, "preamble cut short in " + path.string());
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch, "file has version " + std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreambleBytes) {
    throw CheckpointError(Kind::truncated, "header length exceeds file size in " + path.string());
  }

  Checkpoint<Scalar> ckpt;
  json header;
  std::vector<std::pair<std::string, Shape>> layout;
  try {
    header = json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
    const ModelConfig config = config_from_json(header.at("config"));
    ckpt.src_vocab = Vocab::from_tokens(header.at("src_vocab").get<std::vector<std::string>>());
    ckpt.tgt_vocab = Vocab::from_tokens(header.at("tgt_vocab").get<std::vector<std::string>>());
    ckpt.epoch = header.at("epoch").get<int>();
    for (const auto& r : header.at("history")) {
      ckpt.history.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(), r.at("valid_bleu").get<double>()});
    }
    for (const auto& p : header.at("parameters")) {
      layout.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<Shape>());
    }
    ckpt.model = init_model<Scalar>(config);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::bad_header, std::string("unreadable header: ") + e.what());
  }
  if (static_cast<Index>(ckpt.src_vocab.size()) != ckpt.model.config.src_vocab ||
      static_cast<Index>(ckpt.tgt_vocab.size()) != ckpt.model.config.tgt_vocab) {
    throw CheckpointError(Kind::bad_header, "vocabulary sizes disagree with the stored config");
  }

  const ParameterList<Scalar> params = ckpt.model.parameters();
  if (layout.size() != params.size()) throw CheckpointError(Kind::bad_header, "parameter list differs from config");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (layout[k].first != params[k].name || layout[k].second != params[k].tensor.shape()) {
      throw CheckpointError(Kind::bad_header, "parameter " + layout[k].first + " does not match the model layout");
    }
  }
  const std::size_t expected = 4 * static_cast<std::size_t>(parameter_count(params));
  const std::size_t blob = bytes.size() - kPreambleBytes - header_len;
  if (blob != expected) {
    throw CheckpointError(Kind::truncated, "parameter blob has " + std::to_string(blob) + " bytes, expected " +
                                               std::to_string(expected));
  }
  std::size_t offset = kPreambleBytes + header_len;
  for (const auto& p : params) {
    Tensor<Scalar> t = p.tensor;
    auto& values = t.mutable_values();
    for (Index k = 0; k < values.size(); ++k, offset += 4) {
      const auto bits = get_le<std::uint32_t>(bytes, offset);
      float f = 0.0f;
      std::memcpy(&f, &bits, sizeof f);
      values[k] = static_cast<Scalar>(f);
    }
  }
  return ckpt;
}

template void save_checkpoint(const std::filesystem::path&, const BidirModel<float>&, const Vocab&, const Vocab&, int,
                              const std::vector<EpochRecord>&);
template void save_checkpoint(const std::filesystem::path&, const BidirModel<double>&, const Vocab&, const Vocab&, int,
                              const std::vector<EpochRecord>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace asbd
