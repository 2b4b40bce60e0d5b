#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "grain/graph.hpp"
#include "grain/tensor.hpp"

namespace grain {

/// Powers P_k = Â^k X for k = 0 .. k_max + 1.
class PropagationCache {
 public:
  PropagationCache() = default;

  PropagationCache(const CsrGraph& normalized, const Tensor& features, std::size_t k_max)
      : k_max_(k_max) {
    if (k_max < 1) throw std::invalid_argument("PropagationCache: k_max must be >= 1");
    if (!normalized.has_weights()) {
      throw std::invalid_argument("PropagationCache: graph must be normalized");
    }
    powers_.reserve(k_max + 2);
    powers_.push_back(features);
    for (std::size_t k = 1; k <= k_max + 1; ++k) powers_.push_back(spmm(normalized, powers_.back()));
  }

  std::size_t k_max() const { return k_max_; }
  /// Highest power held (k_max + 1).
  std::size_t depth() const { return powers_.empty() ? 0 : powers_.size() - 1; }
  const Tensor& power(std::size_t k) const { return powers_.at(k); }
  std::size_t rows() const { return powers_.empty() ? 0 : powers_[0].rows(); }
  std::size_t cols() const { return powers_.empty() ? 0 : powers_[0].cols(); }

 private:
  std::size_t k_max_ = 0;
  std::vector<Tensor> powers_;
};

inline PropagationCache build_propagation_cache(const CsrGraph& normalized, const Tensor& features,
                                                std::size_t k_max) {
  return PropagationCache(normalized, features, k_max);
}

}  // namespace grain
