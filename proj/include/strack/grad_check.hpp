#pragma once

#include <functional>
#include <string>
#include <vector>

#include "strack/tensor.hpp"

namespace strack {

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = false;
};

// Compares the analytic gradient of a scalar-valued closure against central
// finite differences. Inputs should be small 64-bit tensors; they are marked
// tracked here. rel error per element = |a-n| / max(|a|,|n|,1e-8).
GradCheckReport grad_check(const std::string& op_name,
                           const std::function<Tensor(const std::vector<Tensor>&)>& closure,
                           std::vector<Tensor> inputs, double tol = 1e-4, double h = 1e-4);

}  // namespace strack
