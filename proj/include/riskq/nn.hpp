#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "riskq/errors.hpp"

namespace riskq {

using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named learnable arrays plus per-parameter optimizer state. A deep copy of
/// the store acts as the target-network snapshot.
class ParameterStore {
public:
    struct Entry {
        Mat value;
        Mat rms_cache;
    };

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Mat& ensure(const std::string& name, int rows, int cols,
                const std::function<double()>& init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (it->second.value.rows() != rows || it->second.value.cols() != cols)
                throw ContractError("parameter shape mismatch for " + name);
            return it->second.value;
        }
        Entry e;
        e.value = Mat::NullaryExpr(rows, cols, [&](Eigen::Index, Eigen::Index) { return init(); });
        e.rms_cache = Mat::Zero(rows, cols);
        return params_.emplace(name, std::move(e)).first->second.value;
    }

    Mat& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter " + name);
        return it->second.value;
    }
    const Mat& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter " + name);
        return it->second.value;
    }
    Entry& entry(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter " + name);
        return it->second;
    }

    const std::map<std::string, Entry>& all() const { return params_; }
    std::map<std::string, Entry>& all() { return params_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : params_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

    ParameterStore clone() const { return *this; }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ContractError("cannot open checkpoint for writing: " + path);
        out << "riskq-params 1\n";
        out.precision(17);
        for (const auto& [name, e] : params_) {
            out << name << " " << e.value.rows() << " " << e.value.cols() << "\n";
            for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
                for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
                    if (c) out << " ";
                    out << e.value(r, c);
                }
                out << "\n";
            }
        }
    }

    static ParameterStore load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ContractError("cannot open checkpoint: " + path);
        std::string magic;
        int version = 0;
        in >> magic >> version;
        if (magic != "riskq-params" || version != 1)
            throw ParseError("not a riskq checkpoint: " + path);
        ParameterStore store;
        std::string name;
        while (in >> name) {
            Eigen::Index rows = 0, cols = 0;
            if (!(in >> rows >> cols)) throw ParseError("truncated checkpoint header");
            Entry e;
            e.value = Mat(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c)
                    if (!(in >> e.value(r, c))) throw ParseError("truncated checkpoint values");
            e.rms_cache = Mat::Zero(rows, cols);
            store.params_.emplace(name, std::move(e));
        }
        return store;
    }

private:
    std::map<std::string, Entry> params_;
};

using GradientMap = std::map<std::string, Mat>;

inline std::function<double()> glorot_uniform(int fan_in, int fan_out, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto dist = std::uniform_real_distribution<double>(-limit, limit);
    return [&rng, dist]() mutable { return dist(rng); };
}

inline std::function<double()> zero_init() {
    return []() { return 0.0; };
}

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

/// A dynamic tape of matrix-valued operations. Forward values are computed
/// eagerly; backward() walks the tape in reverse. With grads disabled the
/// tape is a plain forward evaluator.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    int constant(Mat v) { return push(std::move(v), false, {}, nullptr); }

    int leaf(Mat v, bool needs_grad = true) {
        return push(std::move(v), needs_grad && grad_enabled_, {}, nullptr);
    }

    /// Leaf backed by a named parameter; repeated requests on the same tape
    /// return the same node so gradients accumulate across all uses.
    int param(ParameterStore& store, const std::string& name) {
        auto key = std::make_pair(static_cast<const void*>(&store), name);
        auto it = bound_.find(key);
        if (it != bound_.end()) return it->second;
        int id = leaf(store.get(name), true);
        bound_.emplace(key, id);
        bound_names_.emplace_back(name, id);
        return id;
    }

    const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    int rows(int id) const { return static_cast<int>(value(id).rows()); }
    int cols(int id) const { return static_cast<int>(value(id).cols()); }

    // ---- elementwise and linear ops ----

    int add(int a, int b) {
        check_same_shape(a, b, "add");
        return push(value(a) + value(b), needs(a) || needs(b), {a, b}, [](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad);
            t.accum(n.parents[1], n.grad);
        });
    }

    int sub(int a, int b) {
        check_same_shape(a, b, "sub");
        return push(value(a) - value(b), needs(a) || needs(b), {a, b}, [](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad);
            t.accum(n.parents[1], -n.grad);
        });
    }

    int hadamard(int a, int b) {
        check_same_shape(a, b, "hadamard");
        return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), {a, b},
                    [](Tape& t, Node& n) {
                        t.accum(n.parents[0], n.grad.cwiseProduct(t.value(n.parents[1])));
                        t.accum(n.parents[1], n.grad.cwiseProduct(t.value(n.parents[0])));
                    });
    }

    int scale(int a, double c) {
        return push(value(a) * c, needs(a), {a}, [c](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad * c);
        });
    }

    int add_scalar(int a, double c) {
        return push(value(a).array() + c, needs(a), {a}, [](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad);
        });
    }

    int matmul(int a, int b) {
        if (cols(a) != rows(b)) throw ContractError("matmul inner dimension mismatch");
        return push(value(a) * value(b), needs(a) || needs(b), {a, b}, [](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad * t.value(n.parents[1]).transpose());
            t.accum(n.parents[1], t.value(n.parents[0]).transpose() * n.grad);
        });
    }

    /// Broadcasts a [1 x n] row (bias) over every row of a [B x n] matrix.
    int add_rowvec(int a, int r) {
        if (rows(r) != 1 || cols(r) != cols(a)) throw ContractError("add_rowvec shape mismatch");
        Mat out = value(a);
        out.rowwise() += value(r).row(0);
        return push(std::move(out), needs(a) || needs(r), {a, r}, [](Tape& t, Node& n) {
            t.accum(n.parents[0], n.grad);
            t.accum(n.parents[1], n.grad.colwise().sum());
        });
    }

    /// out(i,j) = a(i,j) * s(i,0) for a [B x n] and s [B x 1].
    int col_scale(int a, int s) {
        if (cols(s) != 1 || rows(s) != rows(a)) throw ContractError("col_scale shape mismatch");
        Mat out = value(a).array().colwise() * value(s).col(0).array();
        return push(std::move(out), needs(a) || needs(s), {a, s}, [](Tape& t, Node& n) {
            const Mat& a_val = t.value(n.parents[0]);
            const Mat& s_val = t.value(n.parents[1]);
            t.accum(n.parents[0], n.grad.array().colwise() * s_val.col(0).array());
            t.accum(n.parents[1], (n.grad.cwiseProduct(a_val)).rowwise().sum());
        });
    }

    /// Tiles a [B x 1] column across n columns.
    int broadcast_col(int a, int n) {
        if (cols(a) != 1) throw ContractError("broadcast_col expects a column");
        return push(value(a).replicate(1, n), needs(a), {a}, [](Tape& t, Node& n_) {
            t.accum(n_.parents[0], n_.grad.rowwise().sum());
        });
    }

    int rowwise_dot(int a, int b) {
        check_same_shape(a, b, "rowwise_dot");
        Mat out = value(a).cwiseProduct(value(b)).rowwise().sum();
        return push(std::move(out), needs(a) || needs(b), {a, b}, [](Tape& t, Node& n) {
            const Mat& av = t.value(n.parents[0]);
            const Mat& bv = t.value(n.parents[1]);
            t.accum(n.parents[0], bv.array().colwise() * n.grad.col(0).array());
            t.accum(n.parents[1], av.array().colwise() * n.grad.col(0).array());
        });
    }

    int sum_all(int a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), needs(a), {a}, [](Tape& t, Node& n) {
            t.accum(n.parents[0],
                    Mat::Constant(t.value(n.parents[0]).rows(), t.value(n.parents[0]).cols(),
                                  n.grad(0, 0)));
        });
    }

    // ---- nonlinearities ----

    int relu(int a) {
        return push(value(a).cwiseMax(0.0), needs(a), {a}, [](Tape& t, Node& n) {
            const Mat& v = t.value(n.parents[0]);
            t.accum(n.parents[0],
                    n.grad.cwiseProduct((v.array() > 0.0).cast<double>().matrix()));
        });
    }

    int elu(int a) {
        Mat out = value(a).unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
        return push(std::move(out), needs(a), {a}, [](Tape& t, Node& n) {
            const Mat& v = t.value(n.parents[0]);
            Mat d = v.unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
            t.accum(n.parents[0], n.grad.cwiseProduct(d));
        });
    }

    int sigmoid(int a) {
        Mat out = value(a).unaryExpr([](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
        return push(std::move(out), needs(a), {a}, [](Tape& t, Node& n) {
            const Mat& s = n.val;
            t.accum(n.parents[0],
                    n.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
        });
    }

    int tanh_(int a) {
        Mat out = value(a).array().tanh();
        return push(std::move(out), needs(a), {a}, [](Tape& t, Node& n) {
            t.accum(n.parents[0],
                    n.grad.cwiseProduct((1.0 - n.val.array().square()).matrix()));
        });
    }

    int abs_(int a) {
        return push(value(a).cwiseAbs(), needs(a), {a}, [](Tape& t, Node& n) {
            const Mat& v = t.value(n.parents[0]);
            Mat sign = v.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
            t.accum(n.parents[0], n.grad.cwiseProduct(sign));
        });
    }

    int softmax_rows(int a) {
        Mat out = value(a);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            double mx = out.row(r).maxCoeff();
            out.row(r) = (out.row(r).array() - mx).exp();
            out.row(r) /= out.row(r).sum();
        }
        return push(std::move(out), needs(a), {a}, [](Tape& t, Node& n) {
            const Mat& s = n.val;
            Mat gi(s.rows(), s.cols());
            for (Eigen::Index r = 0; r < s.rows(); ++r) {
                double dot = n.grad.row(r).cwiseProduct(s.row(r)).sum();
                gi.row(r) = s.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
            }
            t.accum(n.parents[0], gi);
        });
    }

    // ---- structural ops ----

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw ContractError("concat_cols of nothing");
        int b = rows(parts[0]);
        int total = 0;
        bool any = false;
        for (int p : parts) {
            if (rows(p) != b) throw ContractError("concat_cols row mismatch");
            total += cols(p);
            any = any || needs(p);
        }
        Mat out(b, total);
        int off = 0;
        for (int p : parts) {
            out.middleCols(off, cols(p)) = value(p);
            off += cols(p);
        }
        return push(std::move(out), any, parts, [](Tape& t, Node& n) {
            int off2 = 0;
            for (int p : n.parents) {
                int w = t.cols(p);
                t.accum(p, n.grad.middleCols(off2, w));
                off2 += w;
            }
        });
    }

    int slice_cols(int a, int offset, int n) {
        if (offset < 0 || offset + n > cols(a)) throw ContractError("slice_cols out of range");
        return push(value(a).middleCols(offset, n), needs(a), {a},
                    [offset, n](Tape& t, Node& nd) {
                        Mat g = Mat::Zero(t.value(nd.parents[0]).rows(),
                                          t.value(nd.parents[0]).cols());
                        g.middleCols(offset, n) = nd.grad;
                        t.accum(nd.parents[0], g);
                    });
    }

    /// Sorts each consecutive block of `block` columns ascending, per row.
    int sort_blocks(int a, int block) {
        int n = cols(a);
        if (block <= 0 || n % block != 0) throw ContractError("sort_blocks bad block size");
        int b = rows(a);
        Mat out = value(a);
        auto perm = std::make_shared<std::vector<int>>(static_cast<std::size_t>(b) * n);
        std::vector<int> order(static_cast<std::size_t>(block));
        for (int r = 0; r < b; ++r) {
            for (int base = 0; base < n; base += block) {
                for (int k = 0; k < block; ++k) order[static_cast<std::size_t>(k)] = k;
                const Mat& v = value(a);
                std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
                    return v(r, base + x) < v(r, base + y);
                });
                for (int k = 0; k < block; ++k) {
                    out(r, base + k) = v(r, base + order[static_cast<std::size_t>(k)]);
                    (*perm)[static_cast<std::size_t>(r) * n + base + k] =
                        base + order[static_cast<std::size_t>(k)];
                }
            }
        }
        return push(std::move(out), needs(a), {a}, [perm, n](Tape& t, Node& nd) {
            Mat g = Mat::Zero(nd.grad.rows(), nd.grad.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r)
                for (int c = 0; c < n; ++c)
                    g(r, (*perm)[static_cast<std::size_t>(r) * n + c]) += nd.grad(r, c);
            t.accum(nd.parents[0], g);
        });
    }

    /// Picks block idx[r] of width `block` from each row of a [B x K*block].
    int gather_blocks(int a, std::vector<int> idx, int block) {
        int b = rows(a);
        if (static_cast<int>(idx.size()) != b) throw ContractError("gather_blocks index count");
        int blocks = cols(a) / block;
        if (cols(a) % block != 0) throw ContractError("gather_blocks bad block size");
        for (int i : idx)
            if (i < 0 || i >= blocks) throw ContractError("gather_blocks index out of range");
        Mat out(b, block);
        for (int r = 0; r < b; ++r) out.row(r) = value(a).row(r).segment(idx[r] * block, block);
        auto idx_ptr = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(out), needs(a), {a}, [idx_ptr, block](Tape& t, Node& nd) {
            Mat g = Mat::Zero(t.value(nd.parents[0]).rows(), t.value(nd.parents[0]).cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r)
                g.row(r).segment((*idx_ptr)[static_cast<std::size_t>(r)] * block, block) =
                    nd.grad.row(r);
            t.accum(nd.parents[0], g);
        });
    }

    /// Per-row matrix product: w row r is an n x m matrix (row-major),
    /// out.row(r) = x.row(r) * W_r.
    int bmm_rows(int w, int x, int n, int m) {
        if (cols(w) != n * m || cols(x) != n || rows(w) != rows(x))
            throw ContractError("bmm_rows shape mismatch");
        int b = rows(x);
        Mat out = Mat::Zero(b, m);
        const Mat& wv0 = value(w);
        const Mat& xv0 = value(x);
        for (int r = 0; r < b; ++r)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) out(r, j) += xv0(r, i) * wv0(r, i * m + j);
        return push(std::move(out), needs(w) || needs(x), {w, x},
                    [n, m](Tape& t, Node& nd) {
                        const Mat& wv = t.value(nd.parents[0]);
                        const Mat& xv = t.value(nd.parents[1]);
                        Mat gw = Mat::Zero(wv.rows(), wv.cols());
                        Mat gx = Mat::Zero(xv.rows(), xv.cols());
                        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
                            for (int i = 0; i < n; ++i) {
                                double acc = 0.0;
                                for (int j = 0; j < m; ++j) {
                                    acc += nd.grad(r, j) * wv(r, i * m + j);
                                    gw(r, i * m + j) = xv(r, i) * nd.grad(r, j);
                                }
                                gx(r, i) = acc;
                            }
                        }
                        t.accum(nd.parents[0], gw);
                        t.accum(nd.parents[1], gx);
                    });
    }

    /// Quantile-Huber regression loss per row, given predicted quantiles at
    /// fixed fractions and a row of target samples (targets are constants).
    /// L(r) = (1/M) sum_m sum_j |w_j - 1{y - p < 0}| * L_kappa(y - p) / kappa.
    int qr_huber(int pred, const Mat& targets, const std::vector<double>& fractions,
                 double kappa) {
        int b = rows(pred);
        int j_count = cols(pred);
        if (targets.rows() != b) throw ContractError("qr_huber target rows mismatch");
        if (static_cast<int>(fractions.size()) != j_count)
            throw ContractError("qr_huber fraction count mismatch");
        int m_count = static_cast<int>(targets.cols());
        const Mat& p = value(pred);
        Mat out = Mat::Zero(b, 1);
        for (int r = 0; r < b; ++r) {
            double acc = 0.0;
            for (int m = 0; m < m_count; ++m) {
                double y = targets(r, m);
                for (int j = 0; j < j_count; ++j) {
                    double delta = y - p(r, j);
                    double w = std::abs(fractions[static_cast<std::size_t>(j)] -
                                        (delta < 0.0 ? 1.0 : 0.0));
                    double huber = std::abs(delta) <= kappa
                                       ? 0.5 * delta * delta
                                       : kappa * (std::abs(delta) - 0.5 * kappa);
                    acc += w * huber / kappa;
                }
            }
            out(r, 0) = acc / m_count;
        }
        auto tgt = std::make_shared<Mat>(targets);
        auto fr = std::make_shared<std::vector<double>>(fractions);
        return push(std::move(out), needs(pred), {pred},
                    [tgt, fr, kappa](Tape& t, Node& nd) {
                        const Mat& pv = t.value(nd.parents[0]);
                        Mat g = Mat::Zero(pv.rows(), pv.cols());
                        int m_count2 = static_cast<int>(tgt->cols());
                        for (Eigen::Index r = 0; r < pv.rows(); ++r) {
                            for (int m = 0; m < m_count2; ++m) {
                                double y = (*tgt)(r, m);
                                for (Eigen::Index j = 0; j < pv.cols(); ++j) {
                                    double delta = y - pv(r, j);
                                    double w = std::abs((*fr)[static_cast<std::size_t>(j)] -
                                                        (delta < 0.0 ? 1.0 : 0.0));
                                    double dl = std::clamp(delta, -kappa, kappa) / kappa;
                                    g(r, j) += -w * dl / m_count2 * nd.grad(r, 0);
                                }
                            }
                        }
                        t.accum(nd.parents[0], g);
                    });
    }

    // ---- backward ----

    void backward(int loss) {
        if (!grad_enabled_) throw ContractError("backward on a no-grad tape");
        if (value(loss).size() != 1) throw ContractError("backward needs a scalar loss");
        for (auto& n : nodes_)
            if (n.needs_grad) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        auto& last = nodes_[static_cast<std::size_t>(loss)];
        if (!last.needs_grad) return; // loss does not depend on any parameter
        last.grad(0, 0) = 1.0;
        for (int id = loss; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (n.needs_grad && n.back) n.back(*this, n);
        }
    }

    /// Gradients of every parameter bound through param(); zero matrices for
    /// parameters that did not participate.
    GradientMap parameter_gradients(const ParameterStore& store) const {
        GradientMap grads;
        for (const auto& [name, id] : bound_names_) {
            const auto& n = nodes_[static_cast<std::size_t>(id)];
            grads[name] = n.needs_grad && n.grad.size() ? n.grad
                                                        : Mat::Zero(n.val.rows(), n.val.cols());
        }
        for (const auto& [name, e] : store.all())
            if (!grads.count(name)) grads[name] = Mat::Zero(e.value.rows(), e.value.cols());
        return grads;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        Mat grad;
        std::vector<int> parents;
        std::function<void(Tape&, Node&)> back;
        bool needs_grad = false;
    };

    bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    void check_same_shape(int a, int b, const char* op) const {
        if (rows(a) != rows(b) || cols(a) != cols(b))
            throw ContractError(std::string(op) + " shape mismatch");
    }

    void accum(int id, const Mat& g) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.needs_grad) n.grad += g;
    }

    int push(Mat val, bool needs_grad, std::vector<int> parents,
             std::function<void(Tape&, Node&)> back) {
        Node n;
        n.val = std::move(val);
        n.parents = std::move(parents);
        n.needs_grad = needs_grad && grad_enabled_;
        if (n.needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::map<std::pair<const void*, std::string>, int> bound_;
    std::vector<std::pair<std::string, int>> bound_names_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class Activation { linear, relu, tanh, sigmoid, elu };

inline int activate(Tape& t, int x, Activation act) {
    switch (act) {
        case Activation::linear: return x;
        case Activation::relu: return t.relu(x);
        case Activation::tanh: return t.tanh_(x);
        case Activation::sigmoid: return t.sigmoid(x);
        case Activation::elu: return t.elu(x);
    }
    return x;
}

/// Affine layer y = act(x W + b).
struct Dense {
    std::string prefix;
    int in = 0, out = 0;
    Activation act = Activation::linear;

    void init(ParameterStore& store, std::mt19937_64& rng) const {
        store.ensure(prefix + ".w", in, out, glorot_uniform(in, out, rng));
        store.ensure(prefix + ".b", 1, out, zero_init());
    }

    int operator()(Tape& t, ParameterStore& store, int x) const {
        int y = t.add_rowvec(t.matmul(x, t.param(store, prefix + ".w")),
                             t.param(store, prefix + ".b"));
        return activate(t, y, act);
    }
};

/// Gated recurrent cell, gate layout [r | z | n] along the 3H columns.
struct GruCell {
    std::string prefix;
    int in = 0, hidden = 0;

    void init(ParameterStore& store, std::mt19937_64& rng) const {
        store.ensure(prefix + ".wi", in, 3 * hidden, glorot_uniform(in, hidden, rng));
        store.ensure(prefix + ".wh", hidden, 3 * hidden, glorot_uniform(hidden, hidden, rng));
        store.ensure(prefix + ".bi", 1, 3 * hidden, zero_init());
        store.ensure(prefix + ".bh", 1, 3 * hidden, zero_init());
    }

    int step(Tape& t, ParameterStore& store, int x, int h) const {
        int gi = t.add_rowvec(t.matmul(x, t.param(store, prefix + ".wi")),
                              t.param(store, prefix + ".bi"));
        int gh = t.add_rowvec(t.matmul(h, t.param(store, prefix + ".wh")),
                              t.param(store, prefix + ".bh"));
        int r = t.sigmoid(t.add(t.slice_cols(gi, 0, hidden), t.slice_cols(gh, 0, hidden)));
        int z = t.sigmoid(
            t.add(t.slice_cols(gi, hidden, hidden), t.slice_cols(gh, hidden, hidden)));
        int n = t.tanh_(t.add(t.slice_cols(gi, 2 * hidden, hidden),
                              t.hadamard(r, t.slice_cols(gh, 2 * hidden, hidden))));
        // h' = (1 - z) .* n + z .* h
        int one_minus_z = t.add_scalar(t.scale(z, -1.0), 1.0);
        return t.add(t.hadamard(one_minus_z, n), t.hadamard(z, h));
    }
};

/// Multi-head attention producing one non-negative weight per entity:
/// per head, softmax-normalized query-key scores times an |.|-rectified head
/// scale, summed over heads.
struct AttentionWeights {
    std::string prefix;
    int query_dim = 0, key_dim = 0, heads = 4, head_dim = 16;

    void init(ParameterStore& store, std::mt19937_64& rng) const {
        for (int h = 0; h < heads; ++h) {
            std::string hp = prefix + ".h" + std::to_string(h);
            store.ensure(hp + ".wq", query_dim, head_dim, glorot_uniform(query_dim, head_dim, rng));
            store.ensure(hp + ".wk", key_dim, head_dim, glorot_uniform(key_dim, head_dim, rng));
            store.ensure(hp + ".wv", query_dim, 1, glorot_uniform(query_dim, 1, rng));
            store.ensure(hp + ".bv", 1, 1, zero_init());
        }
    }

    /// query: [B x query_dim]; keys: one [B x key_dim] node per entity.
    /// Returns one [B x 1] non-negative weight node per entity.
    std::vector<int> operator()(Tape& t, ParameterStore& store, int query,
                                const std::vector<int>& keys) const {
        std::vector<int> weights;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
        for (int h = 0; h < heads; ++h) {
            std::string hp = prefix + ".h" + std::to_string(h);
            int q = t.matmul(query, t.param(store, hp + ".wq"));
            std::vector<int> scores;
            scores.reserve(keys.size());
            for (int key : keys) {
                int k = t.matmul(key, t.param(store, hp + ".wk"));
                scores.push_back(t.scale(t.rowwise_dot(q, k), inv_sqrt));
            }
            int soft = t.softmax_rows(t.concat_cols(scores));
            int head_scale = t.abs_(t.add_rowvec(t.matmul(query, t.param(store, hp + ".wv")),
                                                 t.param(store, hp + ".bv")));
            for (std::size_t i = 0; i < keys.size(); ++i) {
                int wi = t.hadamard(t.slice_cols(soft, static_cast<int>(i), 1), head_scale);
                if (h == 0)
                    weights.push_back(wi);
                else
                    weights[i] = t.add(weights[i], wi);
            }
        }
        return weights;
    }
};

// ---------------------------------------------------------------------------
// Optimizer and gradient checking
// ---------------------------------------------------------------------------

/// Scales all gradients so their global L2 norm is at most max_norm.
inline double clip_global_norm(GradientMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, g] : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double factor = max_norm / norm;
        for (auto& [_, g] : grads) g *= factor;
        return factor;
    }
    return 1.0;
}

/// cache <- decay * cache + (1 - decay) * g^2; p <- p - lr * g / (sqrt(cache) + eps)
inline void rmsprop_update(ParameterStore& store, const GradientMap& grads, double lr,
                           double decay = 0.99, double eps = 1e-5) {
    for (const auto& [name, g] : grads) {
        auto& e = store.entry(name);
        if (e.value.rows() != g.rows() || e.value.cols() != g.cols())
            throw ContractError("gradient shape mismatch for " + name);
        e.rms_cache = decay * e.rms_cache + (1.0 - decay) * g.cwiseProduct(g);
        e.value.array() -= lr * g.array() / (e.rms_cache.array().sqrt() + eps);
    }
}

/// Central-difference check of a tape-built scalar loss against its analytic
/// gradients on a random subset of parameter entries (roughly `fraction` of
/// them, at least one per parameter). Returns the max relative error.
inline double finite_diff_check(ParameterStore& store,
                                const std::function<int(Tape&)>& build_loss, double epsilon,
                                std::mt19937_64& rng, double fraction = 0.01) {
    Tape t(true);
    int loss = build_loss(t);
    t.backward(loss);
    GradientMap grads = t.parameter_gradients(store);

    auto eval = [&]() {
        Tape f(false);
        return f.value(build_loss(f))(0, 0);
    };

    double worst = 0.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& [name, e] : store.all()) {
        const Mat& g = grads.at(name);
        Eigen::Index count = e.value.size();
        Eigen::Index samples = std::max<Eigen::Index>(
            1, static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(count))));
        for (Eigen::Index s = 0; s < samples; ++s) {
            Eigen::Index idx =
                std::min<Eigen::Index>(count - 1,
                                       static_cast<Eigen::Index>(unit(rng) * count));
            double saved = e.value.data()[idx];
            e.value.data()[idx] = saved + epsilon;
            double up = eval();
            e.value.data()[idx] = saved - epsilon;
            double down = eval();
            e.value.data()[idx] = saved;
            double numeric = (up - down) / (2.0 * epsilon);
            double analytic = g.data()[idx];
            double denom = std::max({1e-8, std::abs(numeric), std::abs(analytic)});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

} // namespace riskq
