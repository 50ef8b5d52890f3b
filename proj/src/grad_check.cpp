#include "strack/grad_check.hpp"

#include <cmath>

namespace strack {

GradCheckReport grad_check(const std::string& op_name,
                           const std::function<Tensor(const std::vector<Tensor>&)>& closure,
                           std::vector<Tensor> inputs, double tol, double h) {
    GradCheckReport rep;
    rep.op_name = op_name;

    for (auto& t : inputs) {
        if (t.dtype() != Dtype::F64)
            throw ContractError("grad_check: inputs must be 64-bit (op '" + op_name + "')");
        t.set_tracked(true);
        t.zero_grad();
    }

    // Analytic pass.
    Tensor loss = closure(inputs);
    if (loss.numel() != 1) throw ContractError("grad_check: closure must return a scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        std::vector<double> g(t.numel());
        Tensor gt = t.grad();
        for (int64_t i = 0; i < t.numel(); ++i) g[i] = gt.value_at(i);
        analytic.push_back(std::move(g));
    }

    // Numeric pass, one element at a time.
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        for (int64_t i = 0; i < t.numel(); ++i) {
            double v0 = t.value_at(i);
            t.set_value_at(i, v0 + h);
            double fp = closure(inputs).item();
            t.set_value_at(i, v0 - h);
            double fm = closure(inputs).item();
            t.set_value_at(i, v0);
            double num = (fp - fm) / (2.0 * h);
            double ana = analytic[ti][i];
            double abs_err = std::abs(ana - num);
            double rel = abs_err / std::max({std::abs(ana), std::abs(num), 1e-8});
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
            rep.max_rel_error = std::max(rep.max_rel_error, rel);
        }
    }
    rep.passed = rep.max_rel_error <= tol;
    return rep;
}

}  // namespace strack
