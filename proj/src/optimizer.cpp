#include "trajlens/optimizer.hpp"

#include <cmath>

#include "trajlens/errors.hpp"

namespace trajlens {

const char* to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "?";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer: " + name);
}

void OptimizerConfig::validate() const {
    if (!(eta > 0.0)) throw ConfigError("optimizer.eta must be > 0");
    if (kind == OptimizerKind::sgd_momentum && !(mu >= 0.0 && mu < 1.0)) {
        throw ConfigError("optimizer.mu must lie in [0, 1)");
    }
    if (kind == OptimizerKind::adam) {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("optimizer.beta1/beta2 must lie in [0, 1)");
        }
        if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
    }
}

OptimizerState OptimizerState::init(const OptimizerConfig& config, std::size_t dim) {
    OptimizerState state;
    switch (config.kind) {
        case OptimizerKind::sgd:
            break;
        case OptimizerKind::sgd_momentum:
            state.velocity.assign(dim, 0.0);
            break;
        case OptimizerKind::adam:
            state.first_moment.assign(dim, 0.0);
            state.second_moment.assign(dim, 0.0);
            break;
    }
    return state;
}

std::vector<double> compute_update(const OptimizerConfig& config, OptimizerState& state,
                                   const std::vector<double>& gradient) {
    for (double g : gradient) {
        if (!std::isfinite(g)) throw DivergenceError("gradient is not finite");
    }
    const std::size_t d = gradient.size();
    switch (config.kind) {
        case OptimizerKind::sgd:
            return gradient;
        case OptimizerKind::sgd_momentum: {
            if (state.velocity.size() != d) {
                throw DimensionError("momentum buffer length does not match gradient");
            }
            for (std::size_t i = 0; i < d; ++i) {
                state.velocity[i] = config.mu * state.velocity[i] + gradient[i];
            }
            return state.velocity;
        }
        case OptimizerKind::adam: {
            if (state.first_moment.size() != d) {
                throw DimensionError("adam buffers do not match gradient length");
            }
            state.step_count += 1;
            const auto t = static_cast<double>(state.step_count);
            const double bc1 = 1.0 - std::pow(config.beta1, t);
            const double bc2 = 1.0 - std::pow(config.beta2, t);
            std::vector<double> update(d);
            for (std::size_t i = 0; i < d; ++i) {
                const double g = gradient[i];
                state.first_moment[i] = config.beta1 * state.first_moment[i] +
                                        (1.0 - config.beta1) * g;
                state.second_moment[i] = config.beta2 * state.second_moment[i] +
                                         (1.0 - config.beta2) * g * g;
                const double m_hat = state.first_moment[i] / bc1;
                const double v_hat = state.second_moment[i] / bc2;
                update[i] = m_hat / (std::sqrt(v_hat) + config.eps);
            }
            return update;
        }
    }
    return gradient;
}

void step_inplace(std::vector<double>& theta, const std::vector<double>& update, double eta) {
    if (theta.size() != update.size()) {
        throw DimensionError("step: parameter and update lengths differ");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= eta * update[i];
}

ParamVector step(const ParamVector& theta, const std::vector<double>& update, double eta) {
    ParamVector next = theta;
    step_inplace(next.values, update, eta);
    return next;
}

}  // namespace trajlens
