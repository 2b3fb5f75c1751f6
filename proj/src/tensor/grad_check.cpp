#include "mixsign/tensor/grad_check.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mixsign {

namespace {
double eval_scalar(const std::function<Tensor()>& f) {
    Tensor v = f();
    if (!v.defined() || v.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    return v.item();
}
}  // namespace

GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps,
                                  double tol) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
    const double first = eval_scalar(f);
    const double second = eval_scalar(f);
    if (std::memcmp(&first, &second, sizeof(double)) != 0) {
        throw std::invalid_argument("grad_check: f is not deterministic (two evaluations differ)");
    }

    std::vector<bool> had_flag;
    for (Tensor& p : params) {
        had_flag.push_back(p.requires_grad());
        p.set_requires_grad(true);
        p.release_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
    }
    for (Tensor& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);  // loss independent of p
        }
        p.release_grad();
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + eps;
            const double fp = eval_scalar(f);
            data[i] = orig - eps;
            const double fm = eval_scalar(f);
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++report.coordinates;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_index = i;
            }
        }
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi].set_requires_grad(had_flag[pi]);
    report.passed = report.max_rel_error < tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps, double tol) {
    Tensor leaf = x.clone();
    return grad_check_params([&] { return f(leaf); }, {leaf}, eps, tol);
}

}  // namespace mixsign
