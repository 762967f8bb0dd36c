#pragma once

#include <vector>

#include <Eigen/Core>

#include "ipsampler/errors.hpp"

namespace ips {

// Draws organized per chain, each chain a draws-by-dimensions block. Storage
// grows geometrically so open-ended runs (sample until an ESS floor is met)
// stay linear in the number of draws.
class SampleTensor {
 public:
  SampleTensor() = default;
  SampleTensor(int chains, Eigen::Index dim)
      : storage_(chains, Eigen::MatrixXd(0, dim)), used_(chains, 0) {}

  int chain_count() const { return static_cast<int>(storage_.size()); }
  Eigen::Index dim() const { return storage_.empty() ? 0 : storage_.front().cols(); }
  Eigen::Index draws(int chain) const { return used_.at(chain); }

  long long total_draws() const {
    long long acc = 0;
    for (Eigen::Index u : used_) acc += u;
    return acc;
  }

  void append(int chain, const Eigen::VectorXd& x) {
    Eigen::MatrixXd& m = storage_.at(chain);
    Eigen::Index& used = used_.at(chain);
    if (m.cols() != x.size()) {
      if (m.rows() == 0 && used == 0) {
        m.resize(0, x.size());
      } else {
        throw InvalidArgumentError("sample dimension changed mid-chain");
      }
    }
    if (used == m.rows()) {
      Eigen::Index grown = std::max<Eigen::Index>(16, 2 * m.rows());
      m.conservativeResize(grown, Eigen::NoChange);
    }
    m.row(used++) = x.transpose();
  }

  // Contiguous view of one chain's draws.
  Eigen::Block<const Eigen::MatrixXd> chain(int c) const {
    return storage_.at(c).topRows(used_.at(c));
  }

  // All chains stacked chain-major into a draws-by-dim matrix.
  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd out(total_draws(), dim());
    Eigen::Index r = 0;
    for (int c = 0; c < chain_count(); ++c) {
      out.middleRows(r, used_[c]) = chain(c);
      r += used_[c];
    }
    return out;
  }

  // Per-chain matrices trimmed to their logical size, for callers that want
  // to own the data.
  std::vector<Eigen::MatrixXd> to_matrices() const {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(storage_.size());
    for (int c = 0; c < chain_count(); ++c) out.emplace_back(chain(c));
    return out;
  }

  void clear() {
    for (auto& u : used_) u = 0;
  }

 private:
  std::vector<Eigen::MatrixXd> storage_;
  std::vector<Eigen::Index> used_;
};

}  // namespace ips
