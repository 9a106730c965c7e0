#include "mlrn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>
#include <unordered_set>
#include <utility>

namespace mlrn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

TensorPtr make_tensor(Shape shape, std::vector<double> data,
                      bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " +
                                 shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " implies " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

void check_finite(const Tensor& t, const char* op_name) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) +
                         " produced a non-finite value");
    }
  }
}

void Tape::record(std::vector<TensorPtr> involved, std::function<void()> rule) {
  entries_.push_back(Entry{std::move(involved), std::move(rule)});
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

void backward(const TensorPtr& loss, Tape& tape) {
  if (!loss) throw ConfigError("backward: null loss tensor");
  if (loss->numel() != 1) {
    throw ConfigError("backward: loss must be a scalar, got shape " +
                      shape_str(loss->shape));
  }
  if (tape.consumed_) {
    throw ConfigError(
        "backward: tape already consumed; call reset() before reusing it");
  }

  std::unordered_set<Tensor*> seen;
  for (auto& entry : tape.entries_) {
    for (auto& t : entry.involved) {
      if (seen.insert(t.get()).second) t->zero_grad();
    }
  }
  loss->ensure_grad();
  if (!seen.count(loss.get())) loss->zero_grad();
  loss->grad[0] = 1.0;

  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    it->rule();
  }
  tape.consumed_ = true;
}

namespace {
std::atomic<int> g_max_threads{1};
}

int max_threads() { return g_max_threads.load(); }

void set_max_threads(int n) {
  if (n < 1) throw ConfigError("thread cap must be >= 1");
  g_max_threads.store(n);
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace mlrn
