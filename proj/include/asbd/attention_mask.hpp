#ifndef ASBD_ATTENTION_MASK_HPP
#define ASBD_ATTENTION_MASK_HPP

#include <Eigen/Core>

#include <span>
#include <vector>

namespace asbd {

// allowed(b)(q, k) == true means query q of batch row b may attend to key k.
class AttentionMask {
 public:
  using Plane = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  AttentionMask(Eigen::Index batch, Eigen::Index queries, Eigen::Index keys, bool fill = true);

  // Lower-triangular including the diagonal.
  static AttentionMask causal(Eigen::Index batch, Eigen::Index length);
  // Keys at positions >= key_lengths[b] are forbidden for every query.
  static AttentionMask padding(std::span<const Eigen::Index> key_lengths, Eigen::Index queries, Eigen::Index keys);

  Eigen::Index batch() const { return static_cast<Eigen::Index>(planes_.size()); }
  Eigen::Index queries() const { return queries_; }
  Eigen::Index keys() const { return keys_; }

  bool allowed(Eigen::Index b, Eigen::Index q, Eigen::Index k) const { return planes_[b](q, k); }
  void set(Eigen::Index b, Eigen::Index q, Eigen::Index k, bool value) { planes_[b](q, k) = value; }
  const Plane& plane(Eigen::Index b) const { return planes_[b]; }

  // Elementwise AND; shapes must agree.
  AttentionMask operator&&(const AttentionMask& other) const;

  // True when every query row has at least one allowed key.
  bool every_row_attends() const;

 private:
  Eigen::Index queries_;
  Eigen::Index keys_;
  std::vector<Plane> planes_;
};

}  // namespace asbd

#endif  // ASBD_ATTENTION_MASK_HPP
