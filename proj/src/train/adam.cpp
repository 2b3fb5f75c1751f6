#include "mixsign/train/adam.h"

#include <cmath>
#include <stdexcept>

namespace mixsign {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k].value;
        auto x = p.mutable_data();
        const bool has = p.has_grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double g = (has ? p.grad()[i] : 0.0) + cfg_.weight_decay * x[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            x[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

ParamList Adam::state() const {
    ParamList out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        out.push_back({"m." + params_[k].name, Tensor(params_[k].value.shape(), m_[k])});
        out.push_back({"v." + params_[k].name, Tensor(params_[k].value.shape(), v_[k])});
    }
    return out;
}

void Adam::load_state(const ParamList& state, std::size_t steps) {
    if (state.size() != 2 * params_.size()) throw std::invalid_argument("optimizer state does not match parameters");
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& m = state[2 * k];
        const auto& v = state[2 * k + 1];
        if (m.name != "m." + params_[k].name || v.name != "v." + params_[k].name ||
            m.value.numel() != m_[k].size() || v.value.numel() != v_[k].size()) {
            throw std::invalid_argument("optimizer state entry for '" + params_[k].name + "' does not match");
        }
        m_[k].assign(m.value.data().begin(), m.value.data().end());
        v_[k].assign(v.value.data().begin(), v.value.data().end());
    }
    t_ = steps;
}

}  // namespace mixsign
