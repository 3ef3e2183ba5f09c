#pragma once

#include <cstddef>
#include <vector>

#include "keymem/matrix.hpp"

namespace keymem {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

// Adam with decoupled weight decay. Moment state is laid out per tensor in
// the order of the first step() call; every later call must pass the same
// tensors in the same order.
class AdamW {
  public:
    explicit AdamW(const AdamWConfig& config);

    void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads);

    long steps_taken() const { return t_; }
    const AdamWConfig& config() const { return config_; }

  private:
    AdamWConfig config_;
    std::vector<Vec> m_;
    std::vector<Vec> v_;
    long t_ = 0;
};

}  // namespace keymem
