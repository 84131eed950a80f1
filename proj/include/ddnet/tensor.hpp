#ifndef DDNET_TENSOR_HPP
#define DDNET_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ddnet {

// Dense N-d double tensor. Values live in row-major order. Tensors are
// cheap handles (shared storage); a forward pass records backward closures
// on the thread-local tape, define-by-run style.
struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;   // same size as data once touched by backward
    bool requires_grad = false;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}
    explicit Tensor(std::vector<int> shape, double fill = 0.0,
                    bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);

    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t numel() const { return impl_->numel(); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad() { return impl_->grad; }
    const std::vector<double>& grad() const { return impl_->grad; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        return *this;
    }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

    double item() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Thread-local record of the forward pass. Operations push their backward
// closures in execution order; backward() replays them in reverse, summing
// gradients at fan-out points. The tape is cleared before each forward pass.
class GradTape {
public:
    void record(std::function<void()> backward_step) {
        steps_.push_back(std::move(backward_step));
    }
    void clear() { steps_.clear(); }
    std::size_t size() const { return steps_.size(); }

    // Seeds d(loss)/d(loss)=1 and runs all recorded steps in reverse order.
    // loss must be scalar. Grads accumulate across repeated calls.
    void backward(const Tensor& loss);

    static GradTape& active();

private:
    std::vector<std::function<void()>> steps_;
};

// Convenience wrappers around GradTape::active().
void tape_clear();
void backward(const Tensor& loss);

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
void check_finite(const Tensor& t, const char* op_name);

}  // namespace ddnet

#endif
