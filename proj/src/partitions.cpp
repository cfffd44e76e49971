#include "upool/partitions.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "upool/errors.hpp"

namespace upool {

namespace {

constexpr int kTable = kMaxEnumerateL + 2;

// completions[r][m]: number of ways to fill r further positions of a
// restricted-growth string whose prefix already uses m labels.
const std::array<std::array<std::uint64_t, kTable + 1>, kTable> &completions() {
  static const auto table = [] {
    std::array<std::array<std::uint64_t, kTable + 1>, kTable> t{};
    for (int m = 0; m <= kTable; ++m) t[0][static_cast<std::size_t>(m)] = 1;
    for (int r = 1; r < kTable; ++r)
      for (int m = 0; m < kTable; ++m)
        t[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)] =
            static_cast<std::uint64_t>(m) * t[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(m)] +
            t[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(m + 1)];
    return t;
  }();
  return table;
}

std::uint64_t completion_count(int r, int m) {
  return completions()[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)];
}

void check_L(int L) {
  if (L < 1 || L > kMaxEnumerateL)
    fail(ErrorKind::ResourceLimit, "partition enumeration supports 1 <= L <= " +
                                       std::to_string(kMaxEnumerateL) + ", got " +
                                       std::to_string(L));
}

}  // namespace

Partition Partition::from_labels(std::span<const int> labels) {
  if (labels.empty() || labels.size() > 32)
    fail(ErrorKind::Domain, "partition size must be in [1, 32]");
  Partition g;
  std::vector<int> remap;
  std::vector<int> seen;
  g.labels_.reserve(labels.size());
  for (int lab : labels) {
    auto it = std::find(seen.begin(), seen.end(), lab);
    if (it == seen.end()) {
      seen.push_back(lab);
      g.labels_.push_back(static_cast<std::uint8_t>(seen.size() - 1));
    } else {
      g.labels_.push_back(static_cast<std::uint8_t>(it - seen.begin()));
    }
  }
  g.num_blocks_ = static_cast<int>(seen.size());
  return g;
}

Partition Partition::pool_all(int L) {
  std::vector<int> labels(static_cast<std::size_t>(L), 0);
  return from_labels(labels);
}

Partition Partition::singletons(int L) {
  std::vector<int> labels(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) labels[static_cast<std::size_t>(i)] = i;
  return from_labels(labels);
}

std::vector<std::vector<int>> Partition::blocks() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_blocks_));
  for (int i = 0; i < size(); ++i) out[labels_[static_cast<std::size_t>(i)]].push_back(i);
  return out;
}

std::vector<int> Partition::block_sizes() const {
  std::vector<int> out(static_cast<std::size_t>(num_blocks_), 0);
  for (auto lab : labels_) ++out[lab];
  return out;
}

std::vector<std::uint32_t> Partition::block_masks() const {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(num_blocks_), 0u);
  for (int i = 0; i < size(); ++i) out[labels_[static_cast<std::size_t>(i)]] |= (1u << i);
  return out;
}

std::string Partition::to_string(std::span<const int> ids) const {
  std::string out;
  for (const auto &block : blocks()) {
    out += '{';
    for (std::size_t j = 0; j < block.size(); ++j) {
      if (j) out += ',';
      out += std::to_string(ids[static_cast<std::size_t>(block[j])]);
    }
    out += '}';
  }
  return out;
}

std::string Partition::to_string() const {
  std::vector<int> ids(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) ids[static_cast<std::size_t>(i)] = i + 1;
  return to_string(ids);
}

bool is_restricted_growth(std::span<const std::uint8_t> labels) {
  int used = 0;
  for (auto lab : labels) {
    if (lab > used) return false;
    if (lab == used) ++used;
  }
  return !labels.empty();
}

std::uint64_t bell_number(int L) {
  check_L(L);
  return completion_count(L - 1, 1);
}

std::uint64_t stirling_count(int L, int d) {
  if (L < 1 || L > 25 || d < 1 || d > L)
    fail(ErrorKind::Domain, "stirling_count needs 1 <= d <= L <= 25");
  // S(n,k) = k S(n-1,k) + S(n-1,k-1)
  std::vector<std::uint64_t> row(static_cast<std::size_t>(L) + 1, 0);
  row[0] = 1;
  for (int n = 1; n <= L; ++n) {
    for (int k = std::min(n, L); k >= 1; --k)
      row[static_cast<std::size_t>(k)] =
          static_cast<std::uint64_t>(k) * row[static_cast<std::size_t>(k)] +
          row[static_cast<std::size_t>(k - 1)];
    row[0] = 0;
  }
  return row[static_cast<std::size_t>(d)];
}

PartitionEnumerator::PartitionEnumerator(int L, std::uint64_t start)
    : L_(L), total_((check_L(L), bell_number(L))) {
  current_.labels_.assign(static_cast<std::size_t>(L), 0);
  prefix_blocks_.assign(static_cast<std::size_t>(L), 1);
  current_.num_blocks_ = 1;
  if (start != 0) seek(start);
}

void PartitionEnumerator::recount() {
  std::uint8_t used = 0;
  for (std::size_t i = 0; i < current_.labels_.size(); ++i) {
    used = std::max<std::uint8_t>(used, static_cast<std::uint8_t>(current_.labels_[i] + 1));
    prefix_blocks_[i] = used;
  }
  current_.num_blocks_ = used;
}

bool PartitionEnumerator::next() {
  if (done()) return false;
  ++index_;
  if (done()) return false;
  auto &lab = current_.labels_;
  for (int i = L_ - 1; i >= 1; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (lab[ui] < prefix_blocks_[ui - 1]) {
      ++lab[ui];
      std::fill(lab.begin() + i + 1, lab.end(), 0);
      // Only positions >= i change.
      std::uint8_t used = prefix_blocks_[ui - 1];
      for (std::size_t j = ui; j < lab.size(); ++j) {
        used = std::max<std::uint8_t>(used, static_cast<std::uint8_t>(lab[j] + 1));
        prefix_blocks_[j] = used;
      }
      current_.num_blocks_ = used;
      return true;
    }
  }
  return false;  // unreachable while index_ < total_
}

void PartitionEnumerator::seek(std::uint64_t index) {
  if (index >= total_) {
    index_ = total_;
    return;
  }
  index_ = index;
  auto &lab = current_.labels_;
  lab[0] = 0;
  int used = 1;
  for (int i = 1; i < L_; ++i) {
    const int remaining = L_ - 1 - i;
    const std::uint64_t per_existing = completion_count(remaining, used);
    const std::uint64_t existing_total = per_existing * static_cast<std::uint64_t>(used);
    if (index < existing_total) {
      lab[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(index / per_existing);
      index %= per_existing;
    } else {
      index -= existing_total;
      lab[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(used);
      ++used;
    }
  }
  recount();
}

Partition unrank_partition(int L, std::uint64_t index) {
  PartitionEnumerator e(L);
  if (index >= e.total()) fail(ErrorKind::Domain, "partition index out of range");
  e.seek(index);
  return e.current();
}

std::uint64_t rank_partition(const Partition &g) {
  const int L = g.size();
  check_L(L);
  std::uint64_t rank = 0;
  int used = 1;
  for (int i = 1; i < L; ++i) {
    const int remaining = L - 1 - i;
    const int lab = g.block_of(i);
    if (lab < used) {
      rank += static_cast<std::uint64_t>(lab) * completion_count(remaining, used);
    } else {
      rank += static_cast<std::uint64_t>(used) * completion_count(remaining, used);
      ++used;
    }
  }
  return rank;
}

double prior_log_mass(PartitionPrior prior, int num_blocks, int L) {
  if (prior == PartitionPrior::Uniform) {
    // lgamma-free: Bell numbers up to L = 25 fit in 64 bits, but enumeration is
    // capped lower anyway.
    std::uint64_t total = 0;
    for (int d = 1; d <= L; ++d) total += stirling_count(L, d);
    return -std::log(static_cast<double>(total));
  }
  double harmonic = 0.0;
  for (int d = 1; d <= L; ++d) harmonic += 1.0 / d;
  return -std::log(static_cast<double>(num_blocks)) -
         std::log(static_cast<double>(stirling_count(L, num_blocks))) - std::log(harmonic);
}

double prior_log_mass(PartitionPrior prior, const Partition &g) {
  return prior_log_mass(prior, g.num_blocks(), g.size());
}

bool dominant_block_predicate(const Partition &g, int min_block) {
  int large = 0;
  for (int s : g.block_sizes()) {
    if (s >= min_block)
      ++large;
    else if (s != 1)
      return false;
  }
  return large == 1;
}

}  // namespace upool
