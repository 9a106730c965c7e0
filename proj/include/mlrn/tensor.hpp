#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mlrn/errors.hpp"

namespace mlrn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense n-dimensional array of doubles, row-major. The grad slot stays empty
// until backward() touches the tensor; everything else is set at creation and
// treated as immutable while a tape that references it is alive.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty, or data.size() entries
  bool requires_grad = false;

  std::size_t numel() const { return data.size(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);

// Throws NumericError if the tensor holds a NaN or Inf. Ops call this on
// their outputs in assert-enabled builds.
void check_finite(const Tensor& t, const char* op_name);

#ifdef NDEBUG
#define MLRN_DEBUG_CHECK_FINITE(t, op) ((void)0)
#else
#define MLRN_DEBUG_CHECK_FINITE(t, op) ::mlrn::check_finite((t), (op))
#endif

// Records one backward rule per forward op, in forward order. Replaying the
// rules in reverse populates the grads of every recorded tensor exactly once.
// A tape and its tensors belong to one logical thread.
class Tape {
 public:
  void record(std::vector<TensorPtr> involved, std::function<void()> rule);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  // Clears entries and allows a new forward/backward cycle.
  void reset();

 private:
  friend void backward(const TensorPtr& loss, Tape& tape);

  struct Entry {
    std::vector<TensorPtr> involved;
    std::function<void()> rule;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Grads of all
// tensors the tape touches are zeroed first, so each backward pass stands on
// its own. Calling backward twice on the same tape without reset() throws.
void backward(const TensorPtr& loss, Tape& tape);

// Cap for parallelism inside ops. 1 (the default) means fully serial.
// Work is split over disjoint output regions and partial reductions are
// merged in a fixed order, so results are identical at any thread count.
int max_threads();
void set_max_threads(int n);

// Runs fn(begin, end) over chunks of [0, n). Serial when max_threads() == 1.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace mlrn
