#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/tensor.hpp"

namespace fabr {

// Reverse-mode tape. Ops append one node per call in execution order; each
// node's backward closure reads the output grad buffer and accumulates (+=)
// into the input grad buffers it captured. backward() replays nodes in
// reverse recorded order, so every node runs exactly once and fan-out
// gradients sum additively. One tape per training step, single writer.
template <typename T>
class TapeT {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(backward)});
  }

  size_t size() const { return nodes_.size(); }
  const char* op_name(size_t i) const { return nodes_[i].op; }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must be scalar.
  void backward(TensorT<T>& loss) {
    if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
    if (!loss.requires_grad()) throw std::runtime_error("backward: loss does not require grad");
    loss.grad()[0] += T(1);
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].backward();
  }

 private:
  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

} // namespace fabr
