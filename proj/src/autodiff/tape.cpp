#include "deepconsensus/autodiff/tape.h"

#include <algorithm>

namespace dc {

namespace {
thread_local bool grad_enabled = true;
}  // namespace

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::clear() { entries_.clear(); }

void Tape::run_backward() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad_allocated) it->backward();
  }
  for (auto& e : entries_) e.output->release_grad();
  entries_.clear();
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) {
  GradMode::set_enabled(false);
}
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw GradError("backward() requires a scalar loss, got shape " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw GradError("backward() on a loss that does not require grad");
  }
  auto& tape = Tape::current();
  auto impl = loss.impl();
  if (impl->is_leaf) {
    impl->grad_buffer()[0] += T(1);
    return;
  }
  bool on_tape = std::any_of(tape.entries().begin(), tape.entries().end(),
                             [&](const Tape::Entry& e) { return e.output == impl; });
  if (!on_tape) throw GradError("backward() on a loss that is not on the tape");
  impl->grad_buffer()[0] = T(1);
  tape.run_backward();
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace dc
