#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "histo/error.hpp"
#include "histo/tensor.hpp"

namespace histo {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    if (g.shape() != value.shape())
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                           shape_str(value.shape()));
    auto& buf = grad_buffer();
    T* dst = buf.ptr();
    const T* src = g.ptr();
    for (std::int64_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
  }
};

template <class T>
class Tape;

// Handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  using value_type = T;
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor<T>& value() const { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }

  Tape<T>& tape() const { return *tape_; }
  Tape<T>* tape_ptr() const { return tape_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

// Ordered record of executed primitives. Backward replays the records in
// exact reverse order; each record's VJP adds into its inputs' gradients.
template <class T>
class Tape {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // With recording off, ops compute values only and intermediates are freed
  // as soon as their handles die.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  // Every argsort pushes a hash of its result here; used to confirm the
  // permutation stayed constant under finite-difference perturbations.
  void set_log_permutations(bool on) { log_perms_ = on; }
  const std::vector<std::uint64_t>& permutation_log() const { return perm_log_; }
  void log_permutation(const PermutationIndex& p) {
    if (log_perms_) perm_log_.push_back(p.hash());
    if (keep_perms_) kept_perms_.push_back(p);
  }

  // Keeps full copies of every argsort result in execution order.
  void set_keep_permutations(bool on) { keep_perms_ = on; }
  const std::vector<PermutationIndex>& kept_permutations() const { return kept_perms_; }

  // Makes argsort return these permutations in order instead of sorting, so
  // a computation can be re-evaluated on a fixed piece of its domain.
  void set_permutation_replay(const std::vector<PermutationIndex>* perms) {
    replay_ = perms;
    replay_pos_ = 0;
  }
  const PermutationIndex* next_replayed_permutation(const Shape& shape) {
    if (!replay_) return nullptr;
    if (replay_pos_ >= replay_->size()) throw StateError("permutation replay exhausted");
    const PermutationIndex& p = (*replay_)[replay_pos_++];
    if (p.shape != shape) throw StateError("permutation replay shape mismatch: " + shape_str(shape));
    return &p;
  }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && recording_;
    return Var<T>(std::move(n), this);
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Creates the output node of a primitive. `vjp(grad_out)` or
  // `vjp(grad_out, value_out)` must add the input gradients into the captured
  // input nodes (see accumulate_into).
  template <class Vjp>
  Var<T> emit(const char* op, Tensor<T> out, std::initializer_list<const Var<T>*> inputs, Vjp&& vjp) {
    bool needs = false;
    for (const Var<T>* v : inputs) {
      if (v->tape_ptr() != this) throw StateError(std::string(op) + ": operand recorded on another tape");
      needs = needs || v->requires_grad();
    }
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(out);
    n->requires_grad = needs && recording_;
    if (n->requires_grad) {
      records_.push_back(Record{op, [outp = n, fn = std::forward<Vjp>(vjp)]() {
                                  if (outp->grad.empty()) return;
                                  if constexpr (std::is_invocable_v<Vjp, const Tensor<T>&, const Tensor<T>&>)
                                    fn(outp->grad, outp->value);
                                  else
                                    fn(outp->grad);
                                }});
    }
    return Var<T>(std::move(n), this);
  }

  std::size_t size() const { return records_.size(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(records_.size());
    for (const auto& r : records_) names.emplace_back(r.op);
    return names;
  }

  // Seeds `out` with `seed` (scalar 1 when omitted) and runs every VJP in
  // reverse execution order.
  void backward(const Var<T>& out, const Tensor<T>* seed = nullptr) {
    if (records_.empty() || !out.valid() || !out.requires_grad())
      throw StateError("backward called without a recorded forward pass");
    if (done_) throw StateError("backward already ran on this tape; clear it first");
    if (seed) {
      out.node()->accumulate(*seed);
    } else {
      if (out.value().numel() != 1)
        throw StateError("backward without a seed requires a scalar output, got " + shape_str(out.shape()));
      out.node()->accumulate(Tensor<T>(out.shape(), T(1)));
    }
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->vjp();
    done_ = true;
  }

  void clear() {
    records_.clear();
    perm_log_.clear();
    done_ = false;
  }

 private:
  struct Record {
    const char* op;
    std::function<void()> vjp;
  };

  std::vector<Record> records_;
  std::vector<std::uint64_t> perm_log_;
  bool recording_ = true;
  bool keep_perms_ = false;
  std::vector<PermutationIndex> kept_perms_;
  const std::vector<PermutationIndex>* replay_ = nullptr;
  std::size_t replay_pos_ = 0;
  bool log_perms_ = false;
  bool done_ = false;
};

template <class T>
inline void accumulate_into(const std::shared_ptr<Node<T>>& n, const Tensor<T>& g) {
  if (n->requires_grad) n->accumulate(g);
}

}  // namespace histo
