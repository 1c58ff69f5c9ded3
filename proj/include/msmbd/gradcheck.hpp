#pragma once

#include "msmbd/params.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace msmbd {

struct GradSample {
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct ParamGradReport {
    std::string name;
    std::size_t checked = 0;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    std::vector<GradSample> samples; // the first few checked entries
    GradSample worst;                // entry with the largest relative error
};

struct GradReport {
    double eps = 0.0;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::vector<ParamGradReport> params;
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// Central stencil: 2 uses (f(x+h) - f(x-h)) / 2h; 4 adds the +-2h
    /// points for O(h^4) truncation, which tolerates a larger h and so
    /// less roundoff on tiny gradients.
    int stencil = 2;
    /// Entries checked per tensor; 0 checks every scalar. Tensors larger
    /// than this are sampled without replacement from a seeded stream.
    std::size_t max_per_tensor = 0;
    std::uint64_t seed = 0;
    std::size_t samples_kept = 4;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double grad_relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `loss_fn` against central
/// differences (f(x + eps) - f(x - eps)) / (2 eps) for the parameters in
/// `params`. The loss function must rebuild its graph from the current
/// parameter values on each call and return a single-element Var.
GradReport grad_check(const std::function<Var()>& loss_fn, ParamRegistry& params, const GradCheckOptions& options = {});

} // namespace msmbd
