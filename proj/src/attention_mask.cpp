#include "asbd/attention_mask.hpp"

#include "asbd/errors.hpp"

#include <string>

namespace asbd {

AttentionMask::AttentionMask(Eigen::Index batch, Eigen::Index queries, Eigen::Index keys, bool fill)
    : queries_(queries), keys_(keys) {
  if (batch <= 0 || queries <= 0 || keys <= 0) throw DimensionError("attention mask extents must be positive");
  planes_.assign(static_cast<std::size_t>(batch), Plane::Constant(queries, keys, fill));
}

AttentionMask AttentionMask::causal(Eigen::Index batch, Eigen::Index length) {
  AttentionMask mask(batch, length, length, false);
  for (auto& plane : mask.planes_) {
    for (Eigen::Index q = 0; q < length; ++q) plane.row(q).head(q + 1).setConstant(true);
  }
  return mask;
}

AttentionMask AttentionMask::padding(std::span<const Eigen::Index> key_lengths, Eigen::Index queries,
                                     Eigen::Index keys) {
  AttentionMask mask(static_cast<Eigen::Index>(key_lengths.size()), queries, keys, false);
  for (std::size_t b = 0; b < key_lengths.size(); ++b) {
    const Eigen::Index len = key_lengths[b];
    if (len < 1 || len > keys) {
      throw DimensionError("key length " + std::to_string(len) + " outside [1, " + std::to_string(keys) + "]");
    }
    mask.planes_[b].leftCols(len).setConstant(true);
  }
  return mask;
}

AttentionMask AttentionMask::operator&&(const AttentionMask& other) const {
  if (batch() != other.batch() || queries_ != other.queries_ || keys_ != other.keys_) {
    throw DimensionError("cannot combine attention masks of different shapes");
  }
  AttentionMask out = *this;
  for (std::size_t b = 0; b < planes_.size(); ++b) out.planes_[b] = planes_[b] && other.planes_[b];
  return out;
}

bool AttentionMask::every_row_attends() const {
  for (const auto& plane : planes_) {
    if (!plane.rowwise().any().all()) return false;
  }
  return true;
}

}  // namespace asbd
