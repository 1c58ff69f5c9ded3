#pragma once

#include "msmbd/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace msmbd {

/// Named registry of every learnable tensor in a model. Iteration is in
/// lexicographic name order, which fixes checkpoint layout and optimizer
/// traversal order.
class ParamRegistry {
public:
    /// Registers a new leaf; a duplicate name is a logic error and throws.
    Var add(const std::string& name, Tensor init);

    const Var& get(const std::string& name) const;
    Var& get(const std::string& name);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();

    /// Deep copy of all values (fresh leaves, no gradients).
    ParamRegistry clone() const;
    /// Copies values from `other`, which must have identical names/shapes.
    void assign_values(const ParamRegistry& other);

    bool values_equal(const ParamRegistry& other) const;

private:
    std::map<std::string, Var> params_;
};

/// Glorot/Xavier uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out)).
/// The stream is seeded from (seed, name) so every tensor's init is
/// independent of registration order.
Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::uint64_t seed, const std::string& name);

struct LinearLayer {
    Var weight; // [out x in]
    Var bias;   // [out]; invalid when the layer has no bias

    static LinearLayer create(ParamRegistry& params, const std::string& name, std::size_t in_dim, std::size_t out_dim,
                              std::uint64_t seed, bool with_bias = true);
    /// Re-binds to tensors already present in `params`.
    static LinearLayer bind(ParamRegistry& params, const std::string& name, bool with_bias = true);

    std::size_t in_dim() const { return weight.shape()[1]; }
    std::size_t out_dim() const { return weight.shape()[0]; }
    bool has_bias() const { return bias.valid(); }

    Var operator()(const Var& x) const { return linear(x, weight, has_bias() ? &bias : nullptr); }
};

/// Non-differentiating form: x * W^T + b for x of shape [in] or [n x in].
Tensor linear_forward(const LinearLayer& layer, const Tensor& x);

struct LayerNorm {
    Var gamma;
    Var beta;

    static LayerNorm create(ParamRegistry& params, const std::string& name, std::size_t dim);

    Var operator()(const Var& x) const { return layer_norm_rows(x, gamma, beta); }
};

} // namespace msmbd
