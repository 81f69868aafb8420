#pragma once

#include <cmath>

#include "vebm/core.hpp"

namespace vebm {

struct AdamParameters {
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam ascent on a dense matrix parameter. The moment estimates are kept in
/// extended precision: with a sharp prior (tau_prior / tau around 100) the
/// KL gradient reaches 1e160 and its square would overflow a double.
class Adam {
public:
    using Moments = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

    Adam(Eigen::Index rows, Eigen::Index cols, AdamParameters params = {})
        : params_(params), m_(Moments::Zero(rows, cols)), v_(Moments::Zero(rows, cols))
    {
    }

    /// x += lr * m_hat / (sqrt(v_hat) + eps). Pass the gradient of the
    /// objective being maximised.
    void ascend(Matrix& x, const Matrix& grad)
    {
        if (grad.rows() != m_.rows() || grad.cols() != m_.cols()) throw Error("adam: gradient shape changed");
        ++t_;
        const long double b1 = params_.beta1;
        const long double b2 = params_.beta2;
        const long double c1 = 1.0L - std::pow(b1, static_cast<long double>(t_));
        const long double c2 = 1.0L - std::pow(b2, static_cast<long double>(t_));
        const long double lr = params_.learning_rate;
        const long double eps = params_.epsilon;
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const long double g = grad(i, j);
                long double& m = m_(i, j);
                long double& v = v_(i, j);
                m = b1 * m + (1.0L - b1) * g;
                v = b2 * v + (1.0L - b2) * g * g;
                x(i, j) += static_cast<double>(lr * (m / c1) / (std::sqrt(v / c2) + eps));
            }
    }

    long steps() const noexcept { return t_; }

private:
    AdamParameters params_;
    Moments m_;
    Moments v_;
    long t_ = 0;
};

} // namespace vebm
