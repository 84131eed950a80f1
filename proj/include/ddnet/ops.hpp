#ifndef DDNET_OPS_HPP
#define DDNET_OPS_HPP

#include <functional>
#include <vector>

#include "ddnet/tensor.hpp"

namespace ddnet {

// All ops operate on NCHW tensors unless noted. Each one records its
// backward rule on the active tape when any input requires grad.

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0, int dilation = 1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor max_pool2d(const Tensor& x, int kernel, int stride);
Tensor global_avg_pool(const Tensor& x);   // [N,C,H,W] -> [N,C,1,1]
Tensor global_max_pool(const Tensor& x);   // [N,C,H,W] -> [N,C,1,1]

// Per-pixel reductions over the channel axis, [N,C,H,W] -> [N,1,H,W].
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x);

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// Elementwise with broadcasting: every dim must match or be 1 on one side
// (covers [N,C,1,1] and [N,1,H,W] against [N,C,H,W]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor concat_channels(const std::vector<Tensor>& xs);

Tensor softmax_channels(const Tensor& x);  // softmax over axis 1

Tensor sum(const Tensor& x);               // -> scalar [1]

// Mean over all pixels of -log softmax(logits)[target]; targets flattened
// N*H*W with values in {0,1,2}.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets);

// Max over coordinates of |analytic - central difference| /
// max(1, |analytic|, |numeric|). f must be deterministic; eps in [1e-6,1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);

// SGD with momentum and decoupled-in-gradient weight decay:
//   v <- momentum*v + grad + wd*param;  param <- param - lr*v
// Grads are zeroed after each step. Velocity persists across steps.
class Sgd {
public:
    Sgd(std::vector<Tensor> params, double lr, double momentum,
        double weight_decay);
    void step();
    void set_lr(double lr) { lr_ = lr; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_, momentum_, weight_decay_;
};

}  // namespace ddnet

#endif
