#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "deepconsensus/autodiff/tensor.h"

namespace dc {

/// Ordered record of differentiable operations executed on the current
/// thread. Entries are appended in execution order, so an entry's inputs are
/// always produced by earlier entries (or are leaves). backward() walks the
/// list once in reverse and then clears it.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::function<void()> backward;
  };

  /// The tape of the calling thread.
  static Tape& current();

  void record(Entry entry);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear();

  /// Propagates gradients from every seeded output to the reachable nodes.
  /// Intermediate gradients are released and the tape is cleared.
  void run_backward();

 private:
  std::vector<Entry> entries_;
};

/// Thread-local switch for op recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable leaf that requires grad.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// True when grad mode is on and any input requires grad.
template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Marks `out` as produced by an op and appends the backward rule. The rule
// runs only when `out` received a gradient.
template <typename T>
void record_op(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
               std::function<void()> rule) {
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  Tape::Entry entry;
  entry.output = out.impl();
  for (const auto* t : inputs) entry.inputs.push_back(t->impl());
  entry.backward = std::move(rule);
  Tape::current().record(std::move(entry));
}

}  // namespace detail

}  // namespace dc
