#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <vector>

#include "rfulm/error.hpp"

namespace rfulm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using ResidualFn = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;

struct LmOptions {
    int max_iter = 100;
    /// Stop when ||step|| < tol * (||params|| + tol).
    double tol = 1e-12;
    double lambda_init = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 10.0;
    double lambda_max = 1e10;
};

struct LmReport {
    Vec params;
    double initial_cost = 0.0;  // squared residual norm at init
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Objective after every accepted step (first entry is the initial cost).
    std::vector<double> accepted_costs;
};

/// Forward-difference Jacobian with per-parameter step sqrt(eps) * max(1, |p|).
inline Mat forward_difference_jacobian(const ResidualFn& residual, const Vec& p) {
    const Vec r0 = residual(p);
    Mat J(r0.size(), p.size());
    const double h0 = std::sqrt(std::numeric_limits<double>::epsilon());
    Vec q = p;
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        const double h = h0 * std::max(1.0, std::abs(p[j]));
        q[j] = p[j] + h;
        J.col(j) = (residual(q) - r0) / h;
        q[j] = p[j];
    }
    return J;
}

/// Levenberg-Marquardt minimization of ||residual(p)||^2.
///
/// Damped normal equations (J^T J + lambda diag(J^T J)) dp = -J^T r. Lambda
/// starts at 1e-3, grows x10 on a rejected step and shrinks /10 on an
/// accepted one; the accepted objective never increases. Once lambda
/// exceeds 1e10 without progress a ConvergenceError carrying the best
/// parameters is thrown. An empty jacobian callback selects forward differences.
inline LmReport lm_solve(const ResidualFn& residual, JacobianFn jacobian, const Vec& init,
                         const LmOptions& opt = {}) {
    if (!jacobian) {
        jacobian = [&residual](const Vec& p) { return forward_difference_jacobian(residual, p); };
    }
    LmReport rep;
    rep.params = init;
    Vec r = residual(init);
    if (r.size() < init.size()) throw ArgumentError("lm_solve: fewer residuals than parameters");
    if (!r.allFinite()) throw NumericError("lm_solve: non-finite residual at init");
    double cost = r.squaredNorm();
    rep.initial_cost = cost;
    rep.accepted_costs.push_back(cost);
    double lambda = opt.lambda_init;
    const auto to_std = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };

    for (int it = 0; it < opt.max_iter; ++it) {
        rep.iterations = it + 1;
        if (cost == 0.0) {
            rep.converged = true;
            break;
        }
        const Mat J = jacobian(rep.params);
        if (!J.allFinite()) {
            // no usable step direction; damping can only grow
            throw ConvergenceError("lm_solve: non-finite jacobian", to_std(rep.params));
        }
        const Mat JtJ = J.transpose() * J;
        const Vec g = J.transpose() * r;
        Vec diag = JtJ.diagonal();
        for (Eigen::Index i = 0; i < diag.size(); ++i) {
            if (diag[i] <= 0.0) diag[i] = 1.0;  // keep the damped matrix definite
        }
        bool accepted = false;
        while (!accepted) {
            if (lambda > opt.lambda_max) {
                throw ConvergenceError("lm_solve: damping exceeded 1e10", to_std(rep.params));
            }
            Mat Aug = JtJ;
            Aug.diagonal() += lambda * diag;
            Eigen::LDLT<Mat> ldlt(Aug);
            Vec step;
            if (ldlt.info() == Eigen::Success) step = ldlt.solve(-g);
            if (ldlt.info() != Eigen::Success || !step.allFinite()) {
                lambda *= opt.lambda_up;
                continue;
            }
            if (step.norm() < opt.tol * (rep.params.norm() + opt.tol)) {
                rep.converged = true;
                rep.final_cost = cost;
                return rep;
            }
            const Vec trial = rep.params + step;
            const Vec r_trial = residual(trial);
            const double c_trial = r_trial.allFinite() ? r_trial.squaredNorm() : std::numeric_limits<double>::infinity();
            if (c_trial <= cost) {
                rep.params = trial;
                r = r_trial;
                cost = c_trial;
                rep.accepted_costs.push_back(cost);
                lambda /= opt.lambda_down;
                accepted = true;
            } else {
                lambda *= opt.lambda_up;
            }
        }
    }
    rep.final_cost = cost;
    return rep;
}

}  // namespace rfulm
