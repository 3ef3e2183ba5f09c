#include "keymem/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace keymem {

void AdamWConfig::validate() const {
    if (learning_rate <= 0.0 || epsilon <= 0.0) {
        throw std::invalid_argument("AdamWConfig: learning_rate and epsilon must be positive");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("AdamWConfig: betas must be in [0,1)");
    }
    if (weight_decay < 0.0) {
        throw std::invalid_argument("AdamWConfig: weight_decay must be nonnegative");
    }
}

AdamW::AdamW(const AdamWConfig& config) : config_(config) {
    config_.validate();
}

void AdamW::step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("AdamW::step: parameter/gradient tensor count mismatch");
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].size, 0.0);
            v_[i].assign(params[i].size, 0.0);
        }
    } else if (m_.size() != params.size()) {
        throw std::invalid_argument("AdamW::step: tensor count changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size != grads[i].size || params[i].size != m_[i].size()) {
            throw std::invalid_argument("AdamW::step: tensor size mismatch at " + params[i].name);
        }
        double* p = params[i].data;
        const double* g = grads[i].data;
        Vec& m = m_[i];
        Vec& v = v_[i];
        for (std::size_t j = 0; j < params[i].size; ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= config_.learning_rate *
                    (mhat / (std::sqrt(vhat) + config_.epsilon) + config_.weight_decay * p[j]);
        }
    }
}

}  // namespace keymem
