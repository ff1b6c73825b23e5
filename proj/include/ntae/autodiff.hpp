#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ntae/errors.hpp"
#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"

namespace ntae::ad {

/// A named trainable tensor. Gradients accumulate across backward calls
/// until zero_grad() is called.
struct Parameter {
    std::string name;
    Tensord value;
    Tensord grad;

    Parameter(std::string n, Tensord v)
        : name(std::move(n)), value(std::move(v)), grad(Tensord::zeros(value.shape())) {}

    void zero_grad() { grad.array() = 0.0; }
};

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode differentiation tape. Recording order is topological order,
/// so backward() is a single reverse sweep. One tape per forward pass;
/// clear() or a fresh tape per step.
class Tape {
  public:
    /// Leaf holding a constant value (no gradient is propagated into it).
    Var input(Tensord value) {
        Node n;
        n.value = std::move(value);
        return push(std::move(n));
    }

    /// Leaf referencing a trainable parameter; backward accumulates into p.grad.
    Var param(Parameter& p) {
        Node n;
        n.param = &p;
        n.requires_grad = true;
        return push(std::move(n));
    }

    const Tensord& value(Var v) const {
        const Node& n = node(v);
        return n.param ? n.param->value : n.value;
    }

    double scalar(Var v) const {
        const Tensord& t = value(v);
        if (t.size() != 1) throw UsageError("scalar() on a node of size " + std::to_string(t.size()));
        return t[0];
    }

    /// out = W Z + b 1^T, applied column-wise. W: HxI, b: H, Z: IxJ.
    Var fc(Var w, Var b, Var z) {
        const Tensord& W = value(w);
        const Tensord& B = value(b);
        const Tensord& Z = value(z);
        require_matrix(W, "fc weight");
        require_matrix(Z, "fc input");
        const Index H = W.shape()[0], I = W.shape()[1], J = Z.shape()[1];
        if (Z.shape()[0] != I)
            throw SizeError("fc: weight is " + shape_str(W.shape()) + " but input is " +
                            shape_str(Z.shape()));
        if (B.size() != H)
            throw SizeError("fc: bias has " + std::to_string(B.size()) + " entries, expected " +
                            std::to_string(H));
        Tensord out({H, J});
        out.matrix().noalias() = W.matrix() * Z.matrix();
        out.matrix().colwise() += Eigen::Map<const Eigen::VectorXd>(B.data(), H);

        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(w) || requires_grad(b) || requires_grad(z);
        n.back = [this, w, b, z](const Tensord& g) {
            const Tensord& Wv = value(w);
            const Tensord& Zv = value(z);
            if (requires_grad(w)) {
                Tensord gw(Wv.shape());
                gw.matrix().noalias() = g.matrix() * Zv.matrix().transpose();
                accumulate(w, std::move(gw));
            }
            if (requires_grad(b)) {
                Tensord gb(value(b).shape());
                Eigen::Map<Eigen::VectorXd>(gb.data(), gb.size()) = g.matrix().rowwise().sum();
                accumulate(b, std::move(gb));
            }
            if (requires_grad(z)) {
                Tensord gz(Zv.shape());
                gz.matrix().noalias() = Wv.matrix().transpose() * g.matrix();
                accumulate(z, std::move(gz));
            }
        };
        return push(std::move(n));
    }

    /// out = A B for matrices.
    Var matmul(Var a, Var b) {
        const Tensord& A = value(a);
        const Tensord& B = value(b);
        require_matrix(A, "matmul lhs");
        require_matrix(B, "matmul rhs");
        if (A.shape()[1] != B.shape()[0])
            throw SizeError("matmul: " + shape_str(A.shape()) + " times " + shape_str(B.shape()));
        Tensord out({A.shape()[0], B.shape()[1]});
        out.matrix().noalias() = A.matrix() * B.matrix();

        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(a) || requires_grad(b);
        n.back = [this, a, b](const Tensord& g) {
            if (requires_grad(a)) {
                Tensord ga(value(a).shape());
                ga.matrix().noalias() = g.matrix() * value(b).matrix().transpose();
                accumulate(a, std::move(ga));
            }
            if (requires_grad(b)) {
                Tensord gb(value(b).shape());
                gb.matrix().noalias() = value(a).matrix().transpose() * g.matrix();
                accumulate(b, std::move(gb));
            }
        };
        return push(std::move(n));
    }

    /// Elementwise max(0, x). Subgradient at 0 is 0.
    Var relu(Var x) {
        const Tensord& X = value(x);
        Tensord out(X.shape());
        out.array() = X.array().max(0.0);

        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(x);
        n.back = [this, x](const Tensord& g) {
            if (!requires_grad(x)) return;
            const Tensord& X = value(x);
            Tensord gx(X.shape());
            gx.array() = (X.array() > 0.0).select(g.array(), 0.0);
            accumulate(x, std::move(gx));
        };
        return push(std::move(n));
    }

    /// Elementwise sum of two same-shape nodes.
    Var add(Var a, Var b) {
        const Tensord& A = value(a);
        const Tensord& B = value(b);
        if (A.shape() != B.shape())
            throw SizeError("add: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
        Node n;
        n.value = A + B;
        n.requires_grad = requires_grad(a) || requires_grad(b);
        n.back = [this, a, b](const Tensord& g) {
            if (requires_grad(a)) accumulate(a, g);
            if (requires_grad(b)) accumulate(b, g);
        };
        return push(std::move(n));
    }

    /// Mode-n unfolding as a differentiable index bijection.
    Var unfold(Var x, int mode) {
        const Shape xshape = value(x).shape();
        Node n;
        n.value = ntae::unfold(value(x), mode);
        n.requires_grad = requires_grad(x);
        n.back = [this, x, mode, xshape](const Tensord& g) {
            if (requires_grad(x)) accumulate(x, ntae::fold(g, mode, xshape));
        };
        return push(std::move(n));
    }

    /// Inverse of unfold against a target shape.
    Var fold(Var m, int mode, Shape target) {
        Node n;
        n.value = ntae::fold(value(m), mode, target);
        n.requires_grad = requires_grad(m);
        n.back = [this, m, mode](const Tensord& g) {
            if (requires_grad(m)) accumulate(m, ntae::unfold(g, mode));
        };
        return push(std::move(n));
    }

    /// Mode reordering; out mode k is in mode perm[k].
    Var permute(Var x, std::vector<int> perm) {
        Node n;
        n.value = ntae::permute(value(x), perm);
        n.requires_grad = requires_grad(x);
        n.back = [this, x, inv = inverse_permutation(perm)](const Tensord& g) {
            if (requires_grad(x)) accumulate(x, ntae::permute(g, inv));
        };
        return push(std::move(n));
    }

    /// Reinterpret extents; row-major layout is unchanged.
    Var reshape(Var x, Shape shape) {
        const Shape xshape = value(x).shape();
        Node n;
        n.value = value(x).reshaped(std::move(shape));
        n.requires_grad = requires_grad(x);
        n.back = [this, x, xshape](const Tensord& g) {
            if (requires_grad(x)) accumulate(x, g.reshaped(xshape));
        };
        return push(std::move(n));
    }

    /// General index bijection: out[dest_of_src(i)] = x[i]. The gradient flows
    /// back through the same map. unfold/fold/permute/reshape are the fast
    /// special cases of this op.
    Var reshape_map(Var x, Shape out_shape, std::function<Index(Index)> dest_of_src) {
        const Tensord& X = value(x);
        if (shape_product(out_shape) != X.size())
            throw SizeError("reshape_map: target " + shape_str(out_shape) + " has " +
                            std::to_string(shape_product(out_shape)) + " entries, input has " +
                            std::to_string(X.size()));
        Tensord out(out_shape);
        for (Index i = 0; i < X.size(); ++i) out[dest_of_src(i)] = X[i];

        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(x);
        n.back = [this, x, map = std::move(dest_of_src)](const Tensord& g) {
            if (!requires_grad(x)) return;
            Tensord gx(value(x).shape());
            for (Index i = 0; i < gx.size(); ++i) gx[i] = g[map(i)];
            accumulate(x, std::move(gx));
        };
        return push(std::move(n));
    }

    /// L = (1/B) sum_b ||xhat_b - xref_b||_F^2 with B the extent of mode 1.
    Var mse_loss(Var xhat, Var xref) {
        const Tensord& A = value(xhat);
        const Tensord& B = value(xref);
        if (A.shape() != B.shape())
            throw SizeError("mse_loss: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
        const double batch = static_cast<double>(A.shape()[0]);
        Tensord out({1});
        out[0] = (A.array() - B.array()).square().sum() / batch;

        Node n;
        n.value = std::move(out);
        n.requires_grad = requires_grad(xhat) || requires_grad(xref);
        n.back = [this, xhat, xref, batch](const Tensord& g) {
            const double c = 2.0 * g[0] / batch;
            const Tensord& A = value(xhat);
            const Tensord& B = value(xref);
            if (requires_grad(xhat)) {
                Tensord ga(A.shape());
                ga.array() = c * (A.array() - B.array());
                accumulate(xhat, std::move(ga));
            }
            if (requires_grad(xref)) {
                Tensord gb(B.shape());
                gb.array() = c * (B.array() - A.array());
                accumulate(xref, std::move(gb));
            }
        };
        return push(std::move(n));
    }

    /// Reverse sweep from a scalar loss node. Parameter gradients accumulate;
    /// call zero_grad on the parameters between steps.
    void backward(Var loss) {
        if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
            throw UsageError("backward on a node that is not on this tape");
        if (value(loss).size() != 1) throw UsageError("backward requires a scalar loss node");
        grads_.assign(nodes_.size(), Tensord());
        Tensord seed(value(loss).shape());
        seed[0] = 1.0;
        grads_[loss.id] = std::move(seed);
        for (int id = loss.id; id >= 0; --id) {
            if (grads_[id].size() == 0) continue;
            Tensord g = std::move(grads_[id]);
            grads_[id] = Tensord();
            Node& n = nodes_[id];
            if (n.param)
                n.param->grad += g;
            else if (n.back)
                n.back(g);
        }
        grads_.clear();
    }

    /// Drop every node. Parameters live outside the tape and are unaffected.
    void clear() {
        nodes_.clear();
        grads_.clear();
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }

  private:
    struct Node {
        Tensord value;
        Parameter* param = nullptr;
        bool requires_grad = false;
        std::function<void(const Tensord&)> back;
    };

    std::vector<Node> nodes_;
    std::vector<Tensord> grads_;

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw UsageError("invalid tape handle");
        return nodes_[v.id];
    }

    bool requires_grad(Var v) const { return node(v).requires_grad; }

    void accumulate(Var v, const Tensord& g) {
        Tensord copy = g;
        accumulate(v, std::move(copy));
    }

    void accumulate(Var v, Tensord&& g) {
        if (grads_[v.id].size() == 0)
            grads_[v.id] = std::move(g);
        else
            grads_[v.id] += g;
    }

    static void require_matrix(const Tensord& t, const char* what) {
        if (t.order() != 2)
            throw SizeError(std::string(what) + " must be a matrix, got shape " +
                            shape_str(t.shape()));
    }
};

/// Compares analytic gradients against central finite differences.
/// `loss_fn` must zero the gradients, rebuild the forward pass, run backward,
/// and return the loss value. Coordinates where both gradients are below
/// `abs_floor` in magnitude count as exact matches.
/// `max_coords_per_param` = 0 checks every coordinate; otherwise a seeded
/// random subset of that size per parameter.
inline double grad_check(const std::function<double()>& loss_fn,
                         std::span<Parameter* const> params, double eps = 1e-5,
                         Index max_coords_per_param = 0, std::uint64_t seed = 0,
                         double abs_floor = 1e-8) {
    if (eps <= 0.0) throw UsageError("grad_check requires eps > 0");
    loss_fn();
    std::vector<Tensord> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    Rng rng(derive_seed(seed, "grad-check"));
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        std::vector<Index> coords;
        if (max_coords_per_param <= 0 || p.value.size() <= max_coords_per_param) {
            coords.resize(p.value.size());
            for (Index i = 0; i < p.value.size(); ++i) coords[i] = i;
        } else {
            for (Index i = 0; i < max_coords_per_param; ++i)
                coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(p.value.size()))));
        }
        for (Index c : coords) {
            const double saved = p.value[c];
            p.value[c] = saved + eps;
            const double up = loss_fn();
            p.value[c] = saved - eps;
            const double down = loss_fn();
            p.value[c] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double exact = analytic[pi][c];
            const double mag = std::max(std::abs(exact), std::abs(numeric));
            if (mag < abs_floor) continue;
            worst = std::max(worst, std::abs(exact - numeric) / mag);
        }
    }
    loss_fn();
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
    return worst;
}

}  // namespace ntae::ad
