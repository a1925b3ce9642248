#pragma once

#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

namespace dfr {

/// Union-find over 0..n-1 with path halving and union by size.
template <typename Index = std::size_t>
class DisjointSet {
 public:
  explicit DisjointSet(Index n = 0) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), Index{0}); }

  Index add() {
    const Index id = static_cast<Index>(parent_.size());
    parent_.push_back(id);
    size_.push_back(1);
    return id;
  }

  Index find(Index x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

  bool same(Index a, Index b) { return find(a) == find(b); }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<Index> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace dfr
