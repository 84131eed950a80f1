#include "ddnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ddnet {

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), fill);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("Tensor::from_data: shape " +
                                    shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

double Tensor::item() const {
    if (impl_->data.size() != 1)
        throw std::invalid_argument("Tensor::item: tensor is not scalar");
    return impl_->data[0];
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("non-positive dimension size");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void check_finite(const Tensor& t, const char* op_name) {
    for (double v : t.data())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(op_name) +
                                     ": non-finite value in output");
}

GradTape& GradTape::active() {
    thread_local GradTape tape;
    return tape;
}

void GradTape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void tape_clear() { GradTape::active().clear(); }
void backward(const Tensor& loss) { GradTape::active().backward(loss); }

}  // namespace ddnet
