#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors, templated on
// the scalar type: float for production training, double for the
// finite-difference verification path.  Everything runs single-threaded with a
// fixed accumulation order, so results are bit-reproducible for a given seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "readmit/errors.hpp"
#include "readmit/rng.hpp"

namespace readmit {

template <typename S> class TapeT;

template <typename S> class TensorT {
  public:
    TensorT() : TensorT(1, 1) {}
    TensorT(int rows, int cols) {
        if (rows < 1 || cols < 1)
            throw ShapeMismatch("tensor dimensions must be positive, got " +
                                std::to_string(rows) + "x" + std::to_string(cols));
        rows_ = rows;
        cols_ = cols;
        data_ = std::make_shared<std::vector<S>>(static_cast<size_t>(rows) * cols, S(0));
    }
    TensorT(int rows, int cols, std::vector<S> values) {
        if (rows < 1 || cols < 1 || values.size() != static_cast<size_t>(rows) * cols)
            throw ShapeMismatch("value count " + std::to_string(values.size()) +
                                " does not fill " + std::to_string(rows) + "x" +
                                std::to_string(cols));
        rows_ = rows;
        cols_ = cols;
        data_ = std::make_shared<std::vector<S>>(std::move(values));
    }
    static TensorT scalar(S v) { return TensorT(1, 1, {v}); }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int64_t size() const { return static_cast<int64_t>(rows_) * cols_; }
    S *data() { return data_->data(); }
    const S *data() const { return data_->data(); }
    const std::shared_ptr<std::vector<S>> &storage() const { return data_; }

    S &operator()(int r, int c) { return (*data_)[static_cast<size_t>(r) * cols_ + c]; }
    S operator()(int r, int c) const { return (*data_)[static_cast<size_t>(r) * cols_ + c]; }
    S item() const {
        if (size() != 1) throw ShapeMismatch("item() on a non-scalar tensor");
        return (*data_)[0];
    }

    int node() const { return node_; }

  private:
    friend class TapeT<S>;
    int rows_ = 1, cols_ = 1;
    std::shared_ptr<std::vector<S>> data_;
    int node_ = -1; // -1: not on any tape (constant)
};

// Records the computation graph.  Ops append one node per output tensor;
// backward() walks the nodes in reverse creation order, which is a valid
// topological order because inputs always precede their consumers.
template <typename S> class TapeT {
  public:
    TapeT() = default;
    TapeT(const TapeT &) = delete;
    TapeT &operator=(const TapeT &) = delete;

    // registers a tensor as a differentiable leaf; the returned handle shares
    // storage with the original, so parameter updates outside the tape persist
    TensorT<S> watch(const TensorT<S> &t) {
        if (consumed_) throw TapeAlreadyConsumed("cannot watch tensors after backward()");
        TensorT<S> out = t;
        grads_.emplace_back(static_cast<size_t>(t.size()), S(0));
        backs_.emplace_back();
        out.node_ = static_cast<int>(backs_.size()) - 1;
        return out;
    }

    // appends a node for `out` and installs its backward closure; make_back is
    // called with the new node id and must return the closure
    template <typename MakeBack> void attach(TensorT<S> &out, MakeBack &&make_back) {
        if (consumed_)
            throw TapeAlreadyConsumed("cannot record new operations after backward()");
        grads_.emplace_back(static_cast<size_t>(out.size()), S(0));
        backs_.emplace_back();
        int node = static_cast<int>(backs_.size()) - 1;
        out.node_ = node;
        backs_[node] = make_back(node);
    }

    void backward(const TensorT<S> &loss) {
        if (consumed_) throw TapeAlreadyConsumed("backward() has already run on this tape");
        if (loss.size() != 1) throw ShapeMismatch("backward() needs a scalar loss");
        if (loss.node_ < 0) throw GradMissing("loss does not depend on any watched tensor");
        consumed_ = true;
        grads_[loss.node_][0] = S(1);
        for (size_t i = backs_.size(); i-- > 0;)
            if (backs_[i]) backs_[i]();
    }

    const std::vector<S> &grad(const TensorT<S> &t) const {
        if (t.node_ < 0) throw GradMissing("tensor was never watched or produced on this tape");
        if (!consumed_) throw GradMissing("backward() has not run yet");
        return grads_[t.node_];
    }

    bool consumed() const { return consumed_; }
    std::vector<S> &buffer(int node) { return grads_[node]; }

  private:
    std::vector<std::vector<S>> grads_;
    std::vector<std::function<void()>> backs_;
    bool consumed_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace detail {
template <typename S> inline bool on(TapeT<S> *tape, const TensorT<S> &t) {
    return tape != nullptr && t.node() >= 0;
}
inline std::string dims(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }
} // namespace detail

// element-wise sum of two equal-shape tensors
template <typename S>
TensorT<S> add(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch("add: " + detail::dims(a.rows(), a.cols()) + " vs " +
                            detail::dims(b.rows(), b.cols()));
    TensorT<S> out(a.rows(), a.cols());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    bool ta = detail::on(tape, a), tb = detail::on(tape, b);
    if (ta || tb)
        tape->attach(out, [=, na = a.node(), nb = b.node(), n = a.size()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                if (ta) {
                    auto &ga = tape->buffer(na);
                    for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                }
                if (tb) {
                    auto &gb = tape->buffer(nb);
                    for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
                }
            };
        });
    return out;
}

// adds a 1xN row vector to every row of an MxN tensor
template <typename S>
TensorT<S> add_row(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeMismatch("add_row: " + detail::dims(a.rows(), a.cols()) + " + " +
                            detail::dims(row.rows(), row.cols()));
    TensorT<S> out(a.rows(), a.cols());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) out(r, c) = a(r, c) + row(0, c);
    bool ta = detail::on(tape, a), tr = detail::on(tape, row);
    if (ta || tr)
        tape->attach(out, [=, na = a.node(), nr = row.node(), m = a.rows(),
                           n = a.cols()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                if (ta) {
                    auto &ga = tape->buffer(na);
                    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) ga[i] += g[i];
                }
                if (tr) {
                    auto &gr = tape->buffer(nr);
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < n; ++c) gr[c] += g[static_cast<size_t>(r) * n + c];
                }
            };
        });
    return out;
}

// element-wise product
template <typename S>
TensorT<S> mul(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch("mul: " + detail::dims(a.rows(), a.cols()) + " vs " +
                            detail::dims(b.rows(), b.cols()));
    TensorT<S> out(a.rows(), a.cols());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    bool ta = detail::on(tape, a), tb = detail::on(tape, b);
    if (ta || tb)
        tape->attach(out, [=, na = a.node(), nb = b.node(), da = a.storage(), db = b.storage(),
                           n = a.size()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                if (ta) {
                    auto &ga = tape->buffer(na);
                    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (*db)[i];
                }
                if (tb) {
                    auto &gb = tape->buffer(nb);
                    for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * (*da)[i];
                }
            };
        });
    return out;
}

template <typename S> TensorT<S> scale(TapeT<S> *tape, const TensorT<S> &a, S factor) {
    TensorT<S> out(a.rows(), a.cols());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * factor;
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), n = a.size()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
            };
        });
    return out;
}

// out[m,n] = a[m,k] * b[k,n]
template <typename S>
TensorT<S> matmul(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &b) {
    if (a.cols() != b.rows())
        throw ShapeMismatch("matmul: " + detail::dims(a.rows(), a.cols()) + " * " +
                            detail::dims(b.rows(), b.cols()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<S> out(m, n);
    const S *pa = a.data(), *pb = b.data();
    S *po = out.data();
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
            S av = pa[static_cast<size_t>(i) * k + l];
            if (av == S(0)) continue;
            const S *brow = pb + static_cast<size_t>(l) * n;
            S *orow = po + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    bool ta = detail::on(tape, a), tb = detail::on(tape, b);
    if (ta || tb)
        tape->attach(out, [=, na = a.node(), nb = b.node(), da = a.storage(),
                           db = b.storage()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                if (ta) { // dA[m,k] += G[m,n] * B^T[n,k]
                    auto &ga = tape->buffer(na);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) {
                            S gv = g[static_cast<size_t>(i) * n + j];
                            if (gv == S(0)) continue;
                            for (int l = 0; l < k; ++l)
                                ga[static_cast<size_t>(i) * k + l] +=
                                    gv * (*db)[static_cast<size_t>(l) * n + j];
                        }
                }
                if (tb) { // dB[k,n] += A^T[k,m] * G[m,n]
                    auto &gb = tape->buffer(nb);
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l) {
                            S av = (*da)[static_cast<size_t>(i) * k + l];
                            if (av == S(0)) continue;
                            for (int j = 0; j < n; ++j)
                                gb[static_cast<size_t>(l) * n + j] +=
                                    av * g[static_cast<size_t>(i) * n + j];
                        }
                }
            };
        });
    return out;
}

// out[m,n] = a[m,k] * b[n,k]^T  (saves materializing transposes)
template <typename S>
TensorT<S> matmul_nt(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &b) {
    if (a.cols() != b.cols())
        throw ShapeMismatch("matmul_nt: " + detail::dims(a.rows(), a.cols()) + " * " +
                            detail::dims(b.rows(), b.cols()) + "^T");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    TensorT<S> out(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            S acc = 0;
            const S *pa = a.data() + static_cast<size_t>(i) * k;
            const S *pb = b.data() + static_cast<size_t>(j) * k;
            for (int l = 0; l < k; ++l) acc += pa[l] * pb[l];
            out(i, j) = acc;
        }
    bool ta = detail::on(tape, a), tb = detail::on(tape, b);
    if (ta || tb)
        tape->attach(out, [=, na = a.node(), nb = b.node(), da = a.storage(),
                           db = b.storage()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                if (ta) { // dA[m,k] += G[m,n] * B[n,k]
                    auto &ga = tape->buffer(na);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) {
                            S gv = g[static_cast<size_t>(i) * n + j];
                            if (gv == S(0)) continue;
                            for (int l = 0; l < k; ++l)
                                ga[static_cast<size_t>(i) * k + l] +=
                                    gv * (*db)[static_cast<size_t>(j) * k + l];
                        }
                }
                if (tb) { // dB[n,k] += G^T[n,m] * A[m,k]
                    auto &gb = tape->buffer(nb);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) {
                            S gv = g[static_cast<size_t>(i) * n + j];
                            if (gv == S(0)) continue;
                            for (int l = 0; l < k; ++l)
                                gb[static_cast<size_t>(j) * k + l] +=
                                    gv * (*da)[static_cast<size_t>(i) * k + l];
                        }
                }
            };
        });
    return out;
}

template <typename S> TensorT<S> transpose(TapeT<S> *tape, const TensorT<S> &a) {
    TensorT<S> out(a.cols(), a.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), m = a.rows(), n = a.cols()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c)
                        ga[static_cast<size_t>(r) * n + c] += g[static_cast<size_t>(c) * m + r];
            };
        });
    return out;
}

// columns [lo, hi) of a
template <typename S>
TensorT<S> slice_cols(TapeT<S> *tape, const TensorT<S> &a, int lo, int hi) {
    if (lo < 0 || hi > a.cols() || lo >= hi)
        throw ShapeMismatch("slice_cols [" + std::to_string(lo) + "," + std::to_string(hi) +
                            ") of " + detail::dims(a.rows(), a.cols()));
    TensorT<S> out(a.rows(), hi - lo);
    for (int r = 0; r < a.rows(); ++r)
        for (int c = lo; c < hi; ++c) out(r, c - lo) = a(r, c);
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), m = a.rows(), n = a.cols()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int r = 0; r < m; ++r)
                    for (int c = lo; c < hi; ++c)
                        ga[static_cast<size_t>(r) * n + c] +=
                            g[static_cast<size_t>(r) * (hi - lo) + (c - lo)];
            };
        });
    return out;
}

// horizontal concatenation of equal-height tensors
template <typename S>
TensorT<S> concat_cols(TapeT<S> *tape, const std::vector<TensorT<S>> &parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
    int m = parts[0].rows(), total = 0;
    for (const auto &p : parts) {
        if (p.rows() != m) throw ShapeMismatch("concat_cols: differing row counts");
        total += p.cols();
    }
    TensorT<S> out(m, total);
    int at = 0;
    for (const auto &p : parts) {
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < p.cols(); ++c) out(r, at + c) = p(r, c);
        at += p.cols();
    }
    bool any = false;
    for (const auto &p : parts) any = any || detail::on(tape, p);
    if (any) {
        std::vector<int> nodes, widths;
        for (const auto &p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.cols());
        }
        tape->attach(out, [=](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                int off = 0;
                for (size_t pi = 0; pi < nodes.size(); ++pi) {
                    if (nodes[pi] >= 0) {
                        auto &gp = tape->buffer(nodes[pi]);
                        for (int r = 0; r < m; ++r)
                            for (int c = 0; c < widths[pi]; ++c)
                                gp[static_cast<size_t>(r) * widths[pi] + c] +=
                                    g[static_cast<size_t>(r) * total + off + c];
                    }
                    off += widths[pi];
                }
            };
        });
    }
    return out;
}

// gathers whole rows; duplicate indices accumulate gradient
template <typename S>
TensorT<S> take_rows(TapeT<S> *tape, const TensorT<S> &a, const std::vector<int32_t> &indices) {
    if (indices.empty()) throw ShapeMismatch("take_rows with no indices");
    for (int32_t i : indices)
        if (i < 0 || i >= a.rows())
            throw PositionOutOfRange("row " + std::to_string(i) + " of " +
                                     std::to_string(a.rows()));
    TensorT<S> out(static_cast<int>(indices.size()), a.cols());
    for (size_t r = 0; r < indices.size(); ++r)
        for (int c = 0; c < a.cols(); ++c) out(static_cast<int>(r), c) = a(indices[r], c);
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), n = a.cols()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (size_t r = 0; r < indices.size(); ++r)
                    for (int c = 0; c < n; ++c)
                        ga[static_cast<size_t>(indices[r]) * n + c] +=
                            g[r * n + c];
            };
        });
    return out;
}

// rows of an embedding table selected by token id
template <typename S>
TensorT<S> embedding_lookup(TapeT<S> *tape, const TensorT<S> &table,
                            const std::vector<int32_t> &ids) {
    if (ids.empty()) throw ShapeMismatch("embedding_lookup with no ids");
    for (int32_t id : ids)
        if (id < 0 || id >= table.rows())
            throw IndexOutOfVocab("id " + std::to_string(id) + " outside table of " +
                                  std::to_string(table.rows()));
    TensorT<S> out(static_cast<int>(ids.size()), table.cols());
    for (size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < table.cols(); ++c) out(static_cast<int>(r), c) = table(ids[r], c);
    if (detail::on(tape, table))
        tape->attach(out, [=, nt = table.node(), n = table.cols()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &gt = tape->buffer(nt);
                for (size_t r = 0; r < ids.size(); ++r)
                    for (int c = 0; c < n; ++c)
                        gt[static_cast<size_t>(ids[r]) * n + c] += g[r * n + c];
            };
        });
    return out;
}

// row-wise softmax with an optional additive mask (use large negative values
// to zero positions out exactly: exp underflows to 0 after max subtraction)
template <typename S>
TensorT<S> softmax_rows(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> *additive_mask = nullptr) {
    if (additive_mask &&
        (additive_mask->rows() != a.rows() || additive_mask->cols() != a.cols()))
        throw ShapeMismatch("softmax mask " +
                            detail::dims(additive_mask->rows(), additive_mask->cols()) +
                            " vs logits " + detail::dims(a.rows(), a.cols()));
    const int m = a.rows(), n = a.cols();
    TensorT<S> out(m, n);
    for (int r = 0; r < m; ++r) {
        S mx = -std::numeric_limits<S>::infinity();
        for (int c = 0; c < n; ++c) {
            S v = a(r, c) + (additive_mask ? (*additive_mask)(r, c) : S(0));
            if (v > mx) mx = v;
        }
        S sum = 0;
        for (int c = 0; c < n; ++c) {
            S v = a(r, c) + (additive_mask ? (*additive_mask)(r, c) : S(0));
            S e = std::exp(v - mx);
            out(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < n; ++c) out(r, c) /= sum;
    }
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), dp = out.storage()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int r = 0; r < m; ++r) {
                    S dot = 0;
                    for (int c = 0; c < n; ++c)
                        dot += g[static_cast<size_t>(r) * n + c] *
                               (*dp)[static_cast<size_t>(r) * n + c];
                    for (int c = 0; c < n; ++c) {
                        size_t i = static_cast<size_t>(r) * n + c;
                        ga[i] += (*dp)[i] * (g[i] - dot);
                    }
                }
            };
        });
    return out;
}

// per-row normalization with learned gain and bias (both 1xN)
template <typename S>
TensorT<S> layer_norm(TapeT<S> *tape, const TensorT<S> &a, const TensorT<S> &gain,
                      const TensorT<S> &bias, S eps = S(1e-5)) {
    const int m = a.rows(), n = a.cols();
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
        throw ShapeMismatch("layer_norm params must be 1x" + std::to_string(n));
    TensorT<S> out(m, n);
    auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(m) * n);
    auto inv = std::make_shared<std::vector<S>>(m);
    for (int r = 0; r < m; ++r) {
        S mean = 0;
        for (int c = 0; c < n; ++c) mean += a(r, c);
        mean /= n;
        S var = 0;
        for (int c = 0; c < n; ++c) {
            S d = a(r, c) - mean;
            var += d * d;
        }
        var /= n;
        S is = S(1) / std::sqrt(var + eps);
        (*inv)[r] = is;
        for (int c = 0; c < n; ++c) {
            S xh = (a(r, c) - mean) * is;
            (*xhat)[static_cast<size_t>(r) * n + c] = xh;
            out(r, c) = gain(0, c) * xh + bias(0, c);
        }
    }
    bool ta = detail::on(tape, a), tg = detail::on(tape, gain), tb = detail::on(tape, bias);
    if (ta || tg || tb)
        tape->attach(out, [=, na = a.node(), ng = gain.node(), nb = bias.node(),
                           gv = gain.storage()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                for (int r = 0; r < m; ++r) {
                    // dyhat = dL/dy * gain; reduce twice for mean/variance paths
                    S sum_dyh = 0, sum_dyh_xh = 0;
                    for (int c = 0; c < n; ++c) {
                        size_t i = static_cast<size_t>(r) * n + c;
                        S dyh = g[i] * (*gv)[c];
                        sum_dyh += dyh;
                        sum_dyh_xh += dyh * (*xhat)[i];
                    }
                    if (ta) {
                        auto &ga = tape->buffer(na);
                        for (int c = 0; c < n; ++c) {
                            size_t i = static_cast<size_t>(r) * n + c;
                            S dyh = g[i] * (*gv)[c];
                            ga[i] += (*inv)[r] *
                                     (dyh - sum_dyh / n - (*xhat)[i] * sum_dyh_xh / n);
                        }
                    }
                }
                if (tg) {
                    auto &gg = tape->buffer(ng);
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < n; ++c) {
                            size_t i = static_cast<size_t>(r) * n + c;
                            gg[c] += g[i] * (*xhat)[i];
                        }
                }
                if (tb) {
                    auto &gb = tape->buffer(nb);
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < n; ++c)
                            gb[c] += g[static_cast<size_t>(r) * n + c];
                }
            };
        });
    return out;
}

namespace detail {
// tanh-approximation gaussian error linear unit and its derivative
template <typename S> inline S gelu_value(S x) {
    const S c = S(0.7978845608028654); // sqrt(2/pi)
    S inner = c * (x + S(0.044715) * x * x * x);
    return S(0.5) * x * (S(1) + std::tanh(inner));
}
template <typename S> inline S gelu_slope(S x) {
    const S c = S(0.7978845608028654);
    S x3 = x * x * x;
    S inner = c * (x + S(0.044715) * x3);
    S t = std::tanh(inner);
    S sech2 = S(1) - t * t;
    return S(0.5) * (S(1) + t) + S(0.5) * x * sech2 * c * (S(1) + S(0.134145) * x * x);
}
} // namespace detail

template <typename S> TensorT<S> gelu(TapeT<S> *tape, const TensorT<S> &a) {
    TensorT<S> out(a.rows(), a.cols());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = detail::gelu_value(a.data()[i]);
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), da = a.storage(), n = a.size()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * detail::gelu_slope((*da)[i]);
            };
        });
    return out;
}

// inverted dropout: scales kept activations by 1/(1-p); identity when not training
template <typename S>
TensorT<S> dropout(TapeT<S> *tape, const TensorT<S> &a, double p, Rng &rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw InvalidConfig("dropout probability must be in [0, 1)");
    if (!training || p == 0.0) return a;
    TensorT<S> out(a.rows(), a.cols());
    auto mask = std::make_shared<std::vector<S>>(a.size());
    S keep_scale = S(1.0 / (1.0 - p));
    for (int64_t i = 0; i < a.size(); ++i) {
        (*mask)[i] = rng.bernoulli(p) ? S(0) : keep_scale;
        out.data()[i] = a.data()[i] * (*mask)[i];
    }
    if (detail::on(tape, a))
        tape->attach(out, [=, na = a.node(), n = a.size()](int node) {
            return [=]() {
                const auto &g = tape->buffer(node);
                auto &ga = tape->buffer(na);
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (*mask)[i];
            };
        });
    return out;
}

// mean negative log-likelihood of target classes under row-wise softmax
template <typename S>
TensorT<S> cross_entropy(TapeT<S> *tape, const TensorT<S> &logits,
                         const std::vector<int32_t> &targets) {
    const int m = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != m)
        throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(m) + " rows");
    for (int32_t t : targets)
        if (t < 0 || t >= n)
            throw IndexOutOfVocab("target " + std::to_string(t) + " outside " +
                                  std::to_string(n) + " classes");
    // stable log-sum-exp per row; keep probabilities for the backward pass
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(m) * n);
    S total = 0;
    for (int r = 0; r < m; ++r) {
        S mx = logits(r, 0);
        for (int c = 1; c < n; ++c) mx = std::max(mx, logits(r, c));
        S sum = 0;
        for (int c = 0; c < n; ++c) {
            S e = std::exp(logits(r, c) - mx);
            (*probs)[static_cast<size_t>(r) * n + c] = e;
            sum += e;
        }
        for (int c = 0; c < n; ++c) (*probs)[static_cast<size_t>(r) * n + c] /= sum;
        total += std::log(sum) + mx - logits(r, targets[r]);
    }
    TensorT<S> out = TensorT<S>::scalar(total / S(m));
    if (detail::on(tape, logits))
        tape->attach(out, [=, nl = logits.node()](int node) {
            return [=]() {
                S go = tape->buffer(node)[0];
                auto &gl = tape->buffer(nl);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) {
                        size_t i = static_cast<size_t>(r) * n + c;
                        S delta = (c == targets[r]) ? S(1) : S(0);
                        gl[i] += go * ((*probs)[i] - delta) / S(m);
                    }
            };
        });
    return out;
}

// mean sigmoid cross-entropy over a column of logits with 0/1 labels;
// computed in the numerically stable max(z,0) - z*y + log(1+exp(-|z|)) form
template <typename S>
TensorT<S> binary_cross_entropy(TapeT<S> *tape, const TensorT<S> &logits,
                                const std::vector<int32_t> &labels) {
    const int m = logits.rows();
    if (logits.cols() != 1)
        throw ShapeMismatch("binary_cross_entropy expects one logit per row");
    if (static_cast<int>(labels.size()) != m)
        throw ShapeMismatch("binary_cross_entropy: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(m) + " rows");
    S total = 0;
    for (int r = 0; r < m; ++r) {
        S z = logits(r, 0);
        S y = S(labels[r]);
        total += std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    TensorT<S> out = TensorT<S>::scalar(total / S(m));
    if (detail::on(tape, logits))
        tape->attach(out, [=, nl = logits.node(), dz = logits.storage()](int node) {
            return [=]() {
                S go = tape->buffer(node)[0];
                auto &gl = tape->buffer(nl);
                for (int r = 0; r < m; ++r) {
                    S z = (*dz)[r];
                    S sig = S(1) / (S(1) + std::exp(-z));
                    gl[r] += go * (sig - S(labels[r])) / S(m);
                }
            };
        });
    return out;
}

template <typename S> inline S sigmoid_value(S z) { return S(1) / (S(1) + std::exp(-z)); }

// sum of scalar losses (for weighted multi-objective training)
template <typename S>
TensorT<S> add_scalars(TapeT<S> *tape, const TensorT<S> &a, S wa, const TensorT<S> &b, S wb) {
    if (a.size() != 1 || b.size() != 1) throw ShapeMismatch("add_scalars needs scalars");
    TensorT<S> out = TensorT<S>::scalar(wa * a.item() + wb * b.item());
    bool ta = detail::on(tape, a), tb = detail::on(tape, b);
    if (ta || tb)
        tape->attach(out, [=, na = a.node(), nb = b.node()](int node) {
            return [=]() {
                S go = tape->buffer(node)[0];
                if (ta) tape->buffer(na)[0] += go * wa;
                if (tb) tape->buffer(nb)[0] += go * wb;
            };
        });
    return out;
}

// ---------------------------------------------------------------------------
// finite-difference gradient verification
// ---------------------------------------------------------------------------

template <typename S> struct GradCheckCase {
    TensorT<S> loss;
    std::vector<TensorT<S>> params; // watched handles sharing external storage
};

struct GradCheckReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    int64_t checked = 0;
    int64_t violations = 0; // elements failing both tolerances
};

// f: (TapeT<S>*) -> GradCheckCase; must be a pure function of the parameter
// storage it binds.  Purity is enforced by evaluating twice and requiring
// bit-identical losses.
template <typename S, typename F>
GradCheckReport grad_check(F f, S eps, double rtol, double atol) {
    S l1 = f(static_cast<TapeT<S> *>(nullptr)).loss.item();
    S l2 = f(static_cast<TapeT<S> *>(nullptr)).loss.item();
    if (std::memcmp(&l1, &l2, sizeof(S)) != 0)
        throw NonDeterministicFunction("loss changed between identical evaluations");

    TapeT<S> tape;
    GradCheckCase<S> base = f(&tape);
    tape.backward(base.loss);
    std::vector<std::vector<S>> analytic;
    for (const auto &p : base.params) analytic.push_back(tape.grad(p));

    GradCheckReport report;
    for (size_t pi = 0; pi < base.params.size(); ++pi) {
        auto storage = base.params[pi].storage();
        for (size_t i = 0; i < storage->size(); ++i) {
            S original = (*storage)[i];
            (*storage)[i] = original + eps;
            S up = f(static_cast<TapeT<S> *>(nullptr)).loss.item();
            (*storage)[i] = original - eps;
            S down = f(static_cast<TapeT<S> *>(nullptr)).loss.item();
            (*storage)[i] = original;

            double fd = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * eps);
            double an = analytic[pi][i];
            double abs_err = std::abs(an - fd);
            double denom = std::max(std::abs(an), std::abs(fd));
            double rel_err = denom > 0 ? abs_err / denom : 0.0;
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            if (abs_err > atol) // rel error only meaningful above the abs floor
                report.max_rel_err = std::max(report.max_rel_err, rel_err);
            if (abs_err > atol && rel_err > rtol) ++report.violations;
            ++report.checked;
        }
    }
    return report;
}

} // namespace readmit
