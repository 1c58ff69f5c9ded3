#include "msmbd/params.hpp"

#include "msmbd/error.hpp"
#include "msmbd/rng.hpp"

#include <cmath>

namespace msmbd {

Var ParamRegistry::add(const std::string& name, Tensor init)
{
    ensure_finite(init, "ParamRegistry::add");
    auto [it, inserted] = params_.emplace(name, Var::leaf(std::move(init)));
    if (!inserted) {
        throw std::logic_error("parameter registered twice: " + name);
    }
    return it->second;
}

const Var& ParamRegistry::get(const std::string& name) const
{
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

Var& ParamRegistry::get(const std::string& name)
{
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

std::size_t ParamRegistry::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& [_, v] : params_) {
        n += v.value().size();
    }
    return n;
}

void ParamRegistry::zero_grad()
{
    for (auto& [_, v] : params_) {
        v.zero_grad();
    }
}

ParamRegistry ParamRegistry::clone() const
{
    ParamRegistry out;
    for (const auto& [name, v] : params_) {
        out.add(name, v.value());
    }
    return out;
}

void ParamRegistry::assign_values(const ParamRegistry& other)
{
    if (other.size() != size()) {
        throw DimensionError("assign_values: registries differ in size");
    }
    for (auto& [name, v] : params_) {
        const Tensor& src = other.get(name).value();
        if (src.shape() != v.value().shape()) {
            throw DimensionError("assign_values: shape mismatch for " + name);
        }
        v.mutable_value() = src;
    }
}

bool ParamRegistry::values_equal(const ParamRegistry& other) const
{
    if (other.size() != size()) {
        return false;
    }
    for (const auto& [name, v] : params_) {
        if (!other.contains(name) || !(other.get(name).value() == v.value())) {
            return false;
        }
    }
    return true;
}

Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::uint64_t seed, const std::string& name)
{
    Pcg32 rng(mix_seed(seed, fnv1a64(name)));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_out, fan_in});
    for (double& v : w.data()) {
        v = rng.uniform(-a, a);
    }
    return w;
}

LinearLayer LinearLayer::create(ParamRegistry& params, const std::string& name, std::size_t in_dim,
                                std::size_t out_dim, std::uint64_t seed, bool with_bias)
{
    LinearLayer layer;
    layer.weight = params.add(name + ".weight", xavier_uniform(out_dim, in_dim, seed, name + ".weight"));
    if (with_bias) {
        layer.bias = params.add(name + ".bias", Tensor({out_dim}));
    }
    return layer;
}

LinearLayer LinearLayer::bind(ParamRegistry& params, const std::string& name, bool with_bias)
{
    LinearLayer layer;
    layer.weight = params.get(name + ".weight");
    if (with_bias) {
        layer.bias = params.get(name + ".bias");
    }
    return layer;
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x)
{
    NoGradGuard guard;
    return layer(Var(x)).value();
}

LayerNorm LayerNorm::create(ParamRegistry& params, const std::string& name, std::size_t dim)
{
    LayerNorm ln;
    ln.gamma = params.add(name + ".gamma", Tensor({dim}, 1.0));
    ln.beta = params.add(name + ".beta", Tensor({dim}));
    return ln;
}

} // namespace msmbd
