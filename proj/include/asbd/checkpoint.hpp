#ifndef ASBD_CHECKPOINT_HPP
#define ASBD_CHECKPOINT_HPP

#include "asbd/bidir_model.hpp"
#include "asbd/training.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace asbd {

// Layout: "ASBD" | u32 LE version | u64 LE header length | UTF-8 JSON header |
// f32 LE parameter blob in BidirModel::parameters() order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, bad_header, io };

  CheckpointError(Kind kind, const std::string& message);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string to_string(CheckpointError::Kind kind);

template <typename Scalar>
struct Checkpoint {
  BidirModel<Scalar> model;
  Vocab src_vocab;
  Vocab tgt_vocab;
  int epoch = 0;
  std::vector<EpochRecord> history;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const BidirModel<Scalar>& model, const Vocab& src_vocab,
                     const Vocab& tgt_vocab, int epoch, const std::vector<EpochRecord>& history);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

}  // namespace asbd

#endif  // ASBD_CHECKPOINT_HPP
