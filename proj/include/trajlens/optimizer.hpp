#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajlens/network.hpp"

namespace trajlens {

enum class OptimizerKind { sgd, sgd_momentum, adam };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double eta = 0.05;    // learning rate, applied by step(), not by the update
    double mu = 0.5;      // momentum coefficient
    double beta1 = 0.9;   // adam
    double beta2 = 0.999; // adam
    double eps = 1e-2;    // adam, added outside the square root

    void validate() const;
};

/// Kind-specific buffers. All vectors have length d once initialized.
struct OptimizerState {
    std::vector<double> velocity;       // momentum
    std::vector<double> first_moment;   // adam m
    std::vector<double> second_moment;  // adam v
    std::uint64_t step_count = 0;       // adam t

    static OptimizerState init(const OptimizerConfig& config, std::size_t dim);
};

/// The update generator U of the stochastic algorithm. Produces the applied
/// update (learning rate excluded) and advances the state:
///   sgd:          U = g
///   sgd_momentum: v <- mu*v + g;  U = v
///   adam:         t <- t+1; m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2;
///                 U = (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Throws DivergenceError when the gradient is not finite.
std::vector<double> compute_update(const OptimizerConfig& config, OptimizerState& state,
                                   const std::vector<double>& gradient);

/// The update rule theta_{k+1} = theta_k - eta * U, elementwise.
void step_inplace(std::vector<double>& theta, const std::vector<double>& update, double eta);
ParamVector step(const ParamVector& theta, const std::vector<double>& update, double eta);

}  // namespace trajlens
