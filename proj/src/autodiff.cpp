#include "msmbd/autodiff.hpp"

#include "msmbd/error.hpp"

#include <cmath>
#include <unordered_set>

namespace msmbd {

namespace {

thread_local bool g_grad_enabled = true;

void accumulate(Node& target, const Tensor& g)
{
    if (!target.requires_grad) {
        return;
    }
    Tensor& buf = target.grad_buffer();
    auto dst = buf.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

Node& parent(Node& n, std::size_t i)
{
    return *n.parents[i];
}

Tensor as_matrix(const Tensor& t)
{
    return t.rank() == 2 ? t : t.reshaped({1, t.size()});
}

} // namespace

Tensor& Node::grad_buffer()
{
    if (grad.empty()) {
        grad = Tensor(value.shape());
    }
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const
{
    if (node_->grad.empty()) {
        return Tensor(node_->value.shape());
    }
    return node_->grad;
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn)
{
    Var out(std::move(value), false);
    if (!g_grad_enabled) {
        return out;
    }
    bool any = false;
    for (const auto& in : inputs) {
        any = any || in.requires_grad();
    }
    if (!any) {
        return out;
    }
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) {
        out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward_fn);
    return out;
}

void backward(const Var& root)
{
    if (root.value().size() != 1) {
        throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) {
        return;
    }
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

bool grad_enabled()
{
    return g_grad_enabled;
}

Var matmul(const Var& a, const Var& b)
{
    const bool row_input = a.value().rank() == 1;
    const Tensor am = as_matrix(a.value());
    Tensor out = matmul(am, b.value());
    if (row_input) {
        out = out.reshaped({out.size()});
    }
    return Var::make(std::move(out), {a, b}, [row_input](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        const Tensor g = as_matrix(self.grad);
        if (pa.requires_grad) {
            Tensor ga = matmul(g, transpose(pb.value));
            accumulate(pa, row_input ? ga.reshaped({ga.size()}) : ga);
        }
        if (pb.requires_grad) {
            accumulate(pb, matmul(transpose(as_matrix(pa.value)), g));
        }
    });
}

Var transpose(const Var& m)
{
    return Var::make(transpose(m.value()), {m}, [](Node& self) {
        Node& p = parent(self, 0);
        Tensor g = transpose(self.grad);
        accumulate(p, p.value.rank() == 1 ? g.reshaped(p.value.shape()) : g);
    });
}

Var add(const Var& a, const Var& b)
{
    return Var::make(add(a.value(), b.value()), {a, b}, [](Node& self) {
        accumulate(parent(self, 0), self.grad);
        accumulate(parent(self, 1), self.grad);
    });
}

Var hadamard(const Var& a, const Var& b)
{
    return Var::make(hadamard(a.value(), b.value()), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            accumulate(pa, hadamard(self.grad, pb.value));
        }
        if (pb.requires_grad) {
            accumulate(pb, hadamard(self.grad, pa.value));
        }
    });
}

Var scale(const Var& a, double s)
{
    return Var::make(scale(a.value(), s), {a}, [s](Node& self) { accumulate(parent(self, 0), scale(self.grad, s)); });
}

Var add_row_bias(const Var& m, const Var& bias)
{
    return Var::make(add_row_bias(m.value(), bias.value()), {m, bias}, [](Node& self) {
        accumulate(parent(self, 0), self.grad);
        Node& pb = parent(self, 1);
        if (pb.requires_grad) {
            const std::size_t r = self.grad.rows();
            const std::size_t c = self.grad.cols();
            Tensor gb(pb.value.shape());
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    gb[j] += self.grad.at(i, j);
                }
            }
            accumulate(pb, gb);
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var* bias)
{
    const Tensor& w = weight.value();
    if (w.rank() != 2) {
        throw DimensionError("linear: weight must be rank 2, got " + shape_str(w.shape()));
    }
    const std::size_t out_dim = w.shape()[0];
    const std::size_t in_dim = w.shape()[1];
    const Tensor& xv = x.value();
    if (xv.rank() > 2 || xv.cols() != in_dim) {
        throw DimensionError("linear: input " + shape_str(xv.shape()) + " does not end in " + std::to_string(in_dim));
    }
    if (bias && bias->value().shape() != Shape{out_dim}) {
        throw DimensionError("linear: bias shape " + shape_str(bias->value().shape()) + " vs output " +
                             std::to_string(out_dim));
    }
    const std::size_t n = xv.rows();
    Tensor out(xv.rank() == 1 ? Shape{out_dim} : Shape{n, out_dim});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bias ? bias->value()[o] : 0.0;
            for (std::size_t k = 0; k < in_dim; ++k) {
                acc += xv[i * in_dim + k] * w[o * in_dim + k];
            }
            out[i * out_dim + o] = acc;
        }
    }
    ensure_finite(out, "linear");
    std::vector<Var> inputs{x, weight};
    if (bias) {
        inputs.push_back(*bias);
    }
    return Var::make(std::move(out), std::move(inputs), [n, in_dim, out_dim](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        const Tensor& g = self.grad;
        if (px.requires_grad) {
            Tensor gx(px.value.shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double go = g[i * out_dim + o];
                    for (std::size_t k = 0; k < in_dim; ++k) {
                        gx[i * in_dim + k] += go * pw.value[o * in_dim + k];
                    }
                }
            }
            accumulate(px, gx);
        }
        if (pw.requires_grad) {
            Tensor gw(pw.value.shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double go = g[i * out_dim + o];
                    for (std::size_t k = 0; k < in_dim; ++k) {
                        gw[o * in_dim + k] += go * px.value[i * in_dim + k];
                    }
                }
            }
            accumulate(pw, gw);
        }
        if (self.parents.size() > 2 && parent(self, 2).requires_grad) {
            Tensor gb({out_dim});
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < out_dim; ++o) {
                    gb[o] += g[i * out_dim + o];
                }
            }
            accumulate(parent(self, 2), gb);
        }
    });
}

Var gelu(const Var& x)
{
    return Var::make(gelu(x.value()), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] *= gelu_derivative(p.value[i]);
        }
        accumulate(p, g);
    });
}

Var sigmoid(const Var& x)
{
    return Var::make(sigmoid(x.value()), {x}, [](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.value[i];
            g[i] *= s * (1.0 - s);
        }
        accumulate(parent(self, 0), g);
    });
}

Var softmax_rows(const Var& m, const Mask* mask)
{
    return Var::make(softmax_rows(m.value(), mask), {m}, [](Node& self) {
        const Tensor& y = self.value;
        const Tensor& gy = self.grad;
        const std::size_t r = y.rows();
        const std::size_t c = y.cols();
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dot += y.at(i, j) * gy.at(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
                gx.at(i, j) = y.at(i, j) * (gy.at(i, j) - dot);
            }
        }
        accumulate(parent(self, 0), gx);
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps)
{
    const Tensor& xv = x.value();
    const std::size_t r = xv.rows();
    const std::size_t c = xv.cols();
    if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c}) {
        throw DimensionError("layer_norm_rows: gamma/beta must have length " + std::to_string(c));
    }
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(r);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            mean += xv[i * c + j];
        }
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xv[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (xv[i * c + j] - mean) * inv_std[i];
            out[i * c + j] = xhat[i * c + j] * gamma.value()[j] + beta.value()[j];
        }
    }
    ensure_finite(out, "layer_norm_rows");
    return Var::make(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
                         Node& px = parent(self, 0);
                         Node& pg = parent(self, 1);
                         Node& pb = parent(self, 2);
                         const Tensor& g = self.grad;
                         if (px.requires_grad) {
                             Tensor gx(px.value.shape());
                             const double inv_c = 1.0 / static_cast<double>(c);
                             for (std::size_t i = 0; i < r; ++i) {
                                 double mean_g = 0.0;
                                 double mean_gx = 0.0;
                                 for (std::size_t j = 0; j < c; ++j) {
                                     const double gh = g[i * c + j] * pg.value[j];
                                     mean_g += gh;
                                     mean_gx += gh * xhat[i * c + j];
                                 }
                                 mean_g *= inv_c;
                                 mean_gx *= inv_c;
                                 for (std::size_t j = 0; j < c; ++j) {
                                     const double gh = g[i * c + j] * pg.value[j];
                                     gx[i * c + j] = inv_std[i] * (gh - mean_g - xhat[i * c + j] * mean_gx);
                                 }
                             }
                             accumulate(px, gx);
                         }
                         if (pg.requires_grad || pb.requires_grad) {
                             Tensor gg({c});
                             Tensor gb({c});
                             for (std::size_t i = 0; i < r; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                     gg[j] += g[i * c + j] * xhat[i * c + j];
                                     gb[j] += g[i * c + j];
                                 }
                             }
                             accumulate(pg, gg);
                             accumulate(pb, gb);
                         }
                     });
}

Var reshape(const Var& x, Shape shape)
{
    return Var::make(x.value().reshaped(std::move(shape)), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        accumulate(p, self.grad.reshaped(p.value.shape()));
    });
}

Var slice_cols(const Var& m, std::size_t start, std::size_t count)
{
    const Tensor& mv = m.value();
    const std::size_t r = mv.rows();
    const std::size_t c = mv.cols();
    if (count == 0 || start + count > c) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") outside " + std::to_string(c) + " columns");
    }
    Tensor out({r, count});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out.at(i, j) = mv[i * c + start + j];
        }
    }
    return Var::make(std::move(out), {m}, [start, count, r, c](Node& self) {
        Node& p = parent(self, 0);
        Tensor g(p.value.shape());
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                g[i * c + start + j] = self.grad.at(i, j);
            }
        }
        accumulate(p, g);
    });
}

Var concat_cols(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t r = parts.front().value().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != r) {
            throw DimensionError("concat_cols: row counts differ");
        }
        total += p.value().cols();
    }
    Tensor out({r, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.value().cols();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                out.at(i, off + j) = p.value()[i * c + j];
            }
        }
        off += c;
    }
    return Var::make(std::move(out), parts, [r, total](Node& self) {
        std::size_t off = 0;
        for (auto& pp : self.parents) {
            const std::size_t c = pp->value.cols();
            if (pp->requires_grad) {
                Tensor g(pp->value.shape());
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        g[i * c + j] = self.grad[i * total + off + j];
                    }
                }
                accumulate(*pp, g);
            }
            off += c;
        }
    });
}

Var stack_rows(const std::vector<Var>& rows)
{
    if (rows.empty()) {
        throw DimensionError("stack_rows: no inputs");
    }
    const std::size_t c = rows.front().value().size();
    std::vector<double> data;
    data.reserve(rows.size() * c);
    for (const auto& r : rows) {
        if (r.value().rank() != 1 || r.value().size() != c) {
            throw DimensionError("stack_rows: inputs must be rank-1 of equal length");
        }
        data.insert(data.end(), r.value().data().begin(), r.value().data().end());
    }
    return Var::make(Tensor({rows.size(), c}, std::move(data)), rows, [c](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (p.requires_grad) {
                accumulate(p, self.grad.row(i));
            }
        }
    });
}

Var concat(const std::vector<Var>& parts)
{
    std::vector<double> data;
    for (const auto& p : parts) {
        if (p.value().rank() != 1) {
            throw DimensionError("concat: inputs must be rank-1");
        }
        data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    return Var::make(Tensor::vector(std::move(data)), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& pp : self.parents) {
            const std::size_t n = pp->value.size();
            if (pp->requires_grad) {
                Tensor g(pp->value.shape());
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] = self.grad[off + i];
                }
                accumulate(*pp, g);
            }
            off += n;
        }
    });
}

Var mean_rows(const Var& m)
{
    const Tensor& mv = m.value();
    const std::size_t r = mv.rows();
    const std::size_t c = mv.cols();
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j] += mv[i * c + j];
        }
    }
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t j = 0; j < c; ++j) {
        out[j] *= inv;
    }
    return Var::make(std::move(out), {m}, [r, c, inv](Node& self) {
        Node& p = parent(self, 0);
        Tensor g(p.value.shape());
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                g[i * c + j] = self.grad[j] * inv;
            }
        }
        accumulate(p, g);
    });
}

Var mean_cols(const Var& m)
{
    const Tensor& mv = m.value();
    const std::size_t r = mv.rows();
    const std::size_t c = mv.cols();
    Tensor out({r});
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            s += mv[i * c + j];
        }
        out[i] = s * inv;
    }
    return Var::make(std::move(out), {m}, [r, c, inv](Node& self) {
        Node& p = parent(self, 0);
        Tensor g(p.value.shape());
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                g[i * c + j] = self.grad[i] * inv;
            }
        }
        accumulate(p, g);
    });
}

Var sum(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().data()) {
        s += v;
    }
    return Var::make(Tensor({1}, {s}), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        accumulate(p, Tensor(p.value.shape(), self.grad[0]));
    });
}

Var divide_by_sum(const Var& x)
{
    double total = 0.0;
    for (double v : x.value().data()) {
        total += v;
    }
    if (total == 0.0) {
        throw NumericError("divide_by_sum: zero sum");
    }
    Tensor out = scale(x.value(), 1.0 / total);
    return Var::make(std::move(out), {x}, [total](Node& self) {
        // d(x_i / S)/dx_j = delta_ij / S - x_i / S^2
        double dot = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            dot += self.grad[i] * self.value[i];
        }
        Tensor g(self.value.shape());
        for (std::size_t j = 0; j < g.size(); ++j) {
            g[j] = (self.grad[j] - dot) / total;
        }
        accumulate(parent(self, 0), g);
    });
}

Var mask_entries(const Var& x, const std::vector<bool>& keep)
{
    if (keep.size() != x.value().size()) {
        throw DimensionError("mask_entries: mask length differs from tensor size");
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) {
            out[i] = 0.0;
        }
    }
    return Var::make(std::move(out), {x}, [keep](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) {
                g[i] = 0.0;
            }
        }
        accumulate(parent(self, 0), g);
    });
}

Var bce_with_logits(const Var& logit, double label)
{
    if (logit.value().size() != 1) {
        throw DimensionError("bce_with_logits: expected a single logit");
    }
    const double z = logit.value()[0];
    const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
    Tensor out({1}, {loss});
    ensure_finite(out, "bce_with_logits");
    return Var::make(std::move(out), {logit}, [label](Node& self) {
        Node& p = parent(self, 0);
        Tensor g(p.value.shape());
        g[0] = self.grad[0] * (sigmoid(p.value[0]) - label);
        accumulate(p, g);
    });
}

} // namespace msmbd
