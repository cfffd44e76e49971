#ifndef UPOOL_PARTITIONS_HPP
#define UPOOL_PARTITIONS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace upool {

constexpr int kMaxEnumerateL = 14;

// A set partition of {0,...,L-1} stored as a restricted-growth string:
// label[0] = 0 and label[i] <= 1 + max(label[0..i-1]).
class Partition {
 public:
  Partition() = default;

  // Canonicalises arbitrary block labels by first-occurrence order.
  static Partition from_labels(std::span<const int> labels);
  static Partition pool_all(int L);
  static Partition singletons(int L);

  int size() const { return static_cast<int>(labels_.size()); }
  int num_blocks() const { return num_blocks_; }
  int block_of(int i) const { return labels_[static_cast<std::size_t>(i)]; }
  const std::vector<std::uint8_t> &labels() const { return labels_; }

  std::vector<std::vector<int>> blocks() const;
  std::vector<int> block_sizes() const;
  // Bit i of mask k is set when study i is in block k.
  std::vector<std::uint32_t> block_masks() const;

  bool same_block(int i, int j) const { return block_of(i) == block_of(j); }

  // Block notation with the given study ids, e.g. {1,2,5}{3,4}.
  std::string to_string(std::span<const int> ids) const;
  std::string to_string() const;

  friend bool operator==(const Partition &, const Partition &) = default;

 private:
  friend class PartitionEnumerator;
  std::vector<std::uint8_t> labels_;
  int num_blocks_ = 0;
};

bool is_restricted_growth(std::span<const std::uint8_t> labels);

std::uint64_t bell_number(int L);
// Number of partitions of an L-set into exactly d blocks.
std::uint64_t stirling_count(int L, int d);

// Resumable stream over all partitions of an L-set in lexicographic
// restricted-growth order. Index 0 is the single-block partition.
class PartitionEnumerator {
 public:
  explicit PartitionEnumerator(int L, std::uint64_t start = 0);

  const Partition &current() const { return current_; }
  std::uint64_t index() const { return index_; }
  std::uint64_t total() const { return total_; }
  bool done() const { return index_ >= total_; }

  // Advances to the next partition; returns false once the stream is exhausted.
  bool next();
  // Unranks: positions the stream at the given lexicographic index.
  void seek(std::uint64_t index);

 private:
  void recount();

  int L_;
  std::uint64_t total_;
  std::uint64_t index_ = 0;
  Partition current_;
  std::vector<std::uint8_t> prefix_blocks_;  // 1 + max label over labels[0..i]
};

Partition unrank_partition(int L, std::uint64_t index);
std::uint64_t rank_partition(const Partition &g);

enum class PartitionPrior { Uniform, SizeBiased };

// log p(g). SizeBiased: p(g) proportional to 1/d(g) / #{g' : d(g') = d(g)}.
double prior_log_mass(PartitionPrior prior, const Partition &g);
double prior_log_mass(PartitionPrior prior, int num_blocks, int L);

// Exactly one block of size >= min_block and every other block a singleton.
bool dominant_block_predicate(const Partition &g, int min_block);

}  // namespace upool

#endif
