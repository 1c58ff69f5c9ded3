#include "msmbd/gradcheck.hpp"

#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msmbd {

namespace {

double evaluate(const std::function<Var()>& loss_fn)
{
    NoGradGuard guard;
    const Var loss = loss_fn();
    if (loss.value().size() != 1) {
        throw DimensionError("grad_check: loss must be a scalar");
    }
    const double v = loss.value()[0];
    if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite loss");
    }
    return v;
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, Pcg32& rng)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (limit == 0 || limit >= n) {
        return idx;
    }
    // partial Fisher-Yates
    for (std::size_t i = 0; i < limit; ++i) {
        const auto j = i + rng.below(static_cast<std::uint32_t>(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

double grad_relative_error(double analytic, double numeric)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(const std::function<Var()>& loss_fn, ParamRegistry& params, const GradCheckOptions& options)
{
    if (!(options.eps > 0.0 && options.eps <= 1e-3)) {
        throw ValidationError("grad_check: eps must lie in (0, 1e-3]");
    }
    if (options.stencil != 2 && options.stencil != 4) {
        throw ValidationError("grad_check: stencil must be 2 or 4");
    }
    params.zero_grad();
    {
        const Var loss = loss_fn();
        if (loss.value().size() != 1) {
            throw DimensionError("grad_check: loss must be a scalar");
        }
        if (!std::isfinite(loss.value()[0])) {
            throw NumericError("grad_check: non-finite loss");
        }
        backward(loss);
    }

    GradReport report;
    report.eps = options.eps;
    Pcg32 rng(options.seed);
    for (auto& [name, var] : params) {
        const Tensor analytic = var.grad();
        ParamGradReport pr;
        pr.name = name;
        for (std::size_t i : pick_indices(var.value().size(), options.max_per_tensor, rng)) {
            double& theta = var.mutable_value()[i];
            const double saved = theta;
            const double h = options.eps;
            auto at = [&](double offset) {
                theta = saved + offset;
                return evaluate(loss_fn);
            };
            double numeric = 0.0;
            if (options.stencil == 2) {
                numeric = (at(h) - at(-h)) / (2.0 * h);
            } else {
                numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            }
            theta = saved;
            const double abs_err = std::abs(analytic[i] - numeric);
            pr.max_abs_error = std::max(pr.max_abs_error, abs_err);
            const double rel = grad_relative_error(analytic[i], numeric);
            if (pr.checked == 0 || rel > pr.max_rel_error) {
                pr.worst = {i, analytic[i], numeric};
            }
            pr.max_rel_error = std::max(pr.max_rel_error, rel);
            if (pr.samples.size() < options.samples_kept) {
                pr.samples.push_back({i, analytic[i], numeric});
            }
            ++pr.checked;
        }
        report.checked += pr.checked;
        report.max_abs_error = std::max(report.max_abs_error, pr.max_abs_error);
        report.max_rel_error = std::max(report.max_rel_error, pr.max_rel_error);
        report.params.push_back(std::move(pr));
    }
    params.zero_grad();
    return report;
}

} // namespace msmbd
