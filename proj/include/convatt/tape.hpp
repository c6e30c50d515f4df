#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "convatt/tensor.hpp"

namespace convatt {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape. Operations append nodes in topological order; backward()
/// replays the recorded closures in reverse, visiting each node once.
class Tape {
public:
    Var leaf(Tensor t) {
        check_finite(t, "leaf");
        return push(std::move(t), nullptr);
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }

    Tensor grad_tensor(Var v) const { return Tensor(nodes_[v.id].value.shape, nodes_[v.id].grad); }

    // ---- core ops ----

    Var matmul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_2d(A, "matmul lhs");
        require_2d(B, "matmul rhs");
        if (A.shape[1] != B.shape[0])
            throw dimension_error("matmul: inner dimensions differ, " + shape_str(A.shape) +
                                  " vs " + shape_str(B.shape));
        int m = A.shape[0], p = A.shape[1], q = B.shape[1];
        Tensor C({m, q});
        for (int i = 0; i < m; ++i)
            for (int l = 0; l < p; ++l) {
                double av = A.at(i, l);
                for (int j = 0; j < q; ++j) C.at(i, j) += av * B.at(l, j);
            }
        int ai = a.id, bi = b.id;
        return push(std::move(C), [ai, bi, m, p, q](Tape& t, const Node& out) {
            const Tensor& A = t.nodes_[ai].value;
            const Tensor& B = t.nodes_[bi].value;
            auto& dA = t.nodes_[ai].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < q; ++j) {
                    double g = out.grad[static_cast<size_t>(i) * q + j];
                    if (g == 0.0) continue;
                    for (int l = 0; l < p; ++l) {
                        dA[static_cast<size_t>(i) * p + l] += g * B.at(l, j);
                        dB[static_cast<size_t>(l) * q + j] += g * A.at(i, l);
                    }
                }
        });
    }

    /// a * b^T, with a: m x p, b: q x p.
    Var matmul_nt(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_2d(A, "matmul_nt lhs");
        require_2d(B, "matmul_nt rhs");
        if (A.shape[1] != B.shape[1])
            throw dimension_error("matmul_nt: inner dimensions differ, " + shape_str(A.shape) +
                                  " vs " + shape_str(B.shape));
        int m = A.shape[0], p = A.shape[1], q = B.shape[0];
        Tensor C({m, q});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < q; ++j) {
                double s = 0.0;
                for (int l = 0; l < p; ++l) s += A.at(i, l) * B.at(j, l);
                C.at(i, j) = s;
            }
        int ai = a.id, bi = b.id;
        return push(std::move(C), [ai, bi, m, p, q](Tape& t, const Node& out) {
            const Tensor& A = t.nodes_[ai].value;
            const Tensor& B = t.nodes_[bi].value;
            auto& dA = t.nodes_[ai].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < q; ++j) {
                    double g = out.grad[static_cast<size_t>(i) * q + j];
                    if (g == 0.0) continue;
                    for (int l = 0; l < p; ++l) {
                        dA[static_cast<size_t>(i) * p + l] += g * B.at(j, l);
                        dB[static_cast<size_t>(j) * p + l] += g * A.at(i, l);
                    }
                }
        });
    }

    Var add(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error("add: shape mismatch " + shape_str(A.shape) + " vs " +
                                  shape_str(B.shape));
        Tensor C = A;
        for (int i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        int ai = a.id, bi = b.id;
        return push(std::move(C), [ai, bi](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            auto& dB = t.nodes_[bi].grad;
            for (size_t i = 0; i < out.grad.size(); ++i) {
                dA[i] += out.grad[i];
                dB[i] += out.grad[i];
            }
        });
    }

    /// Adds a length-c bias vector to every row of an n x c matrix.
    Var add_row_bias(Var a, Var bias) {
        const Tensor& A = value(a);
        const Tensor& B = value(bias);
        require_2d(A, "add_row_bias input");
        if (B.size() != A.shape[1])
            throw dimension_error("add_row_bias: bias " + shape_str(B.shape) +
                                  " does not match columns of " + shape_str(A.shape));
        Tensor C = A;
        int n = A.shape[0], c = A.shape[1];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) C.at(i, j) += B.data[j];
        int ai = a.id, bi = bias.id;
        return push(std::move(C), [ai, bi, n, c](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    double g = out.grad[static_cast<size_t>(i) * c + j];
                    dA[static_cast<size_t>(i) * c + j] += g;
                    dB[j] += g;
                }
        });
    }

    Var mul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw dimension_error("mul: shape mismatch " + shape_str(A.shape) + " vs " +
                                  shape_str(B.shape));
        Tensor C = A;
        for (int i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
        int ai = a.id, bi = b.id;
        return push(std::move(C), [ai, bi](Tape& t, const Node& out) {
            const Tensor& A = t.nodes_[ai].value;
            const Tensor& B = t.nodes_[bi].value;
            auto& dA = t.nodes_[ai].grad;
            auto& dB = t.nodes_[bi].grad;
            for (size_t i = 0; i < out.grad.size(); ++i) {
                dA[i] += out.grad[i] * B.data[i];
                dB[i] += out.grad[i] * A.data[i];
            }
        });
    }

    Var scale(Var a, double s) {
        Tensor C = value(a);
        for (double& v : C.data) v *= s;
        int ai = a.id;
        return push(std::move(C), [ai, s](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            for (size_t i = 0; i < out.grad.size(); ++i) dA[i] += s * out.grad[i];
        });
    }

    Var gelu(Var a) {
        static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
        Tensor C = value(a);
        for (double& v : C.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
        int ai = a.id;
        return push(std::move(C), [ai](Tape& t, const Node& out) {
            const Tensor& A = t.nodes_[ai].value;
            auto& dA = t.nodes_[ai].grad;
            for (size_t i = 0; i < out.grad.size(); ++i) {
                double x = A.data[i];
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                dA[i] += out.grad[i] * (cdf + x * pdf);
            }
        });
    }

    /// Normalizes the last axis to mean 0 / variance 1, then applies affine gain and bias.
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-12) {
        const Tensor& X = value(x);
        const Tensor& G = value(gain);
        const Tensor& B = value(bias);
        int c = X.shape.back();
        if (G.size() != c || B.size() != c)
            throw dimension_error("layer_norm: gain/bias do not match last axis of " +
                                  shape_str(X.shape));
        int n = X.size() / c;
        Tensor Y = X;
        std::vector<double> inv_sigma(n), xhat(X.data.size());
        for (int i = 0; i < n; ++i) {
            const double* row = X.data.data() + static_cast<size_t>(i) * c;
            double mean = std::accumulate(row, row + c, 0.0) / c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= c;
            inv_sigma[i] = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < c; ++j) {
                double h = (row[j] - mean) * inv_sigma[i];
                xhat[static_cast<size_t>(i) * c + j] = h;
                Y.data[static_cast<size_t>(i) * c + j] = h * G.data[j] + B.data[j];
            }
        }
        int xi = x.id, gi = gain.id, bi = bias.id;
        return push(std::move(Y), [xi, gi, bi, n, c, inv_sigma = std::move(inv_sigma),
                                   xhat = std::move(xhat)](Tape& t, const Node& out) {
            const Tensor& G = t.nodes_[gi].value;
            auto& dX = t.nodes_[xi].grad;
            auto& dG = t.nodes_[gi].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < n; ++i) {
                size_t base = static_cast<size_t>(i) * c;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (int j = 0; j < c; ++j) {
                    double g = out.grad[base + j];
                    dG[j] += g * xhat[base + j];
                    dB[j] += g;
                    double dh = g * G.data[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[base + j];
                }
                for (int j = 0; j < c; ++j) {
                    double dh = out.grad[base + j] * G.data[j];
                    dX[base + j] += inv_sigma[i] * (dh - sum_dh / c - xhat[base + j] * sum_dh_h / c);
                }
            }
        });
    }

    /// Softmax over the last axis, max-stabilized. Optional keep-mask (same shape,
    /// nonzero = keep); masked entries get exactly 0. A fully masked row is an error.
    Var softmax_lastdim(Var a, const std::vector<uint8_t>* mask = nullptr) {
        const Tensor& A = value(a);
        int c = A.shape.back();
        int n = A.size() / c;
        if (mask && static_cast<int>(mask->size()) != A.size())
            throw dimension_error("softmax_lastdim: mask length does not match tensor");
        Tensor Y = A;
        for (int i = 0; i < n; ++i) {
            size_t base = static_cast<size_t>(i) * c;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < c; ++j)
                if (!mask || (*mask)[base + j]) mx = std::max(mx, A.data[base + j]);
            if (!std::isfinite(mx))
                throw std::runtime_error("softmax_lastdim: fully masked row " + std::to_string(i));
            double z = 0.0;
            for (int j = 0; j < c; ++j) {
                double e = (!mask || (*mask)[base + j]) ? std::exp(A.data[base + j] - mx) : 0.0;
                Y.data[base + j] = e;
                z += e;
            }
            for (int j = 0; j < c; ++j) Y.data[base + j] /= z;
        }
        int ai = a.id;
        return push(std::move(Y), [ai, n, c](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            for (int i = 0; i < n; ++i) {
                size_t base = static_cast<size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += out.grad[base + j] * out.value.data[base + j];
                for (int j = 0; j < c; ++j)
                    dA[base + j] += out.value.data[base + j] * (out.grad[base + j] - dot);
            }
        });
    }

    /// Mean cross-entropy of n x V logits against integer targets, restricted to
    /// positions where loss_mask is nonzero. Requires at least one such position.
    Var cross_entropy(Var logits, const std::vector<int>& targets,
                      const std::vector<uint8_t>& loss_mask) {
        const Tensor& L = value(logits);
        require_2d(L, "cross_entropy logits");
        int n = L.shape[0], vsz = L.shape[1];
        if (static_cast<int>(targets.size()) != n || static_cast<int>(loss_mask.size()) != n)
            throw dimension_error("cross_entropy: targets/mask length does not match rows");
        int count = 0;
        for (uint8_t m : loss_mask) count += m ? 1 : 0;
        if (count == 0) throw input_error("cross_entropy: no positions selected by loss mask");
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            if (!loss_mask[i]) continue;
            if (targets[i] < 0 || targets[i] >= vsz)
                throw input_error("cross_entropy: target id out of range");
            double mx = *std::max_element(L.data.begin() + static_cast<size_t>(i) * vsz,
                                          L.data.begin() + static_cast<size_t>(i + 1) * vsz);
            double z = 0.0;
            for (int j = 0; j < vsz; ++j) z += std::exp(L.at(i, j) - mx);
            total += mx + std::log(z) - L.at(i, targets[i]);
        }
        int li = logits.id;
        return push(Tensor::scalar(total / count),
                    [li, n, vsz, targets, loss_mask, count](Tape& t, const Node& out) {
                        const Tensor& L = t.nodes_[li].value;
                        auto& dL = t.nodes_[li].grad;
                        double g = out.grad[0] / count;
                        for (int i = 0; i < n; ++i) {
                            if (!loss_mask[i]) continue;
                            double mx =
                                *std::max_element(L.data.begin() + static_cast<size_t>(i) * vsz,
                                                  L.data.begin() + static_cast<size_t>(i + 1) * vsz);
                            double z = 0.0;
                            for (int j = 0; j < vsz; ++j) z += std::exp(L.at(i, j) - mx);
                            for (int j = 0; j < vsz; ++j) {
                                double p = std::exp(L.at(i, j) - mx) / z;
                                dL[static_cast<size_t>(i) * vsz + j] +=
                                    g * (p - (j == targets[i] ? 1.0 : 0.0));
                            }
                        }
                    });
    }

    Var sum(Var a) {
        const Tensor& A = value(a);
        double s = std::accumulate(A.data.begin(), A.data.end(), 0.0);
        int ai = a.id;
        return push(Tensor::scalar(s), [ai](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            for (double& g : dA) g += out.grad[0];
        });
    }

    /// Gathers rows of a table by id (embedding lookup); repeated ids accumulate grads.
    Var rows(Var table, const std::vector<int>& ids) {
        const Tensor& T = value(table);
        require_2d(T, "rows table");
        int c = T.shape[1];
        for (int id : ids)
            if (id < 0 || id >= T.shape[0]) throw input_error("rows: id out of range");
        Tensor Y({static_cast<int>(ids.size()), c});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(T.data.begin() + static_cast<size_t>(ids[i]) * c, c,
                        Y.data.begin() + i * c);
        int ti = table.id;
        return push(std::move(Y), [ti, ids, c](Tape& t, const Node& out) {
            auto& dT = t.nodes_[ti].grad;
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < c; ++j)
                    dT[static_cast<size_t>(ids[i]) * c + j] += out.grad[i * c + j];
        });
    }

    Var slice_cols(Var a, int begin, int count) {
        const Tensor& A = value(a);
        require_2d(A, "slice_cols input");
        if (begin < 0 || count < 1 || begin + count > A.shape[1])
            throw dimension_error("slice_cols: range out of bounds");
        int n = A.shape[0], c = A.shape[1];
        Tensor Y({n, count});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < count; ++j) Y.at(i, j) = A.at(i, begin + j);
        int ai = a.id;
        return push(std::move(Y), [ai, begin, count, n, c](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < count; ++j)
                    dA[static_cast<size_t>(i) * c + begin + j] +=
                        out.grad[static_cast<size_t>(i) * count + j];
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw dimension_error("concat_cols: empty part list");
        int n = value(parts[0]).shape[0];
        int total = 0;
        for (Var p : parts) {
            const Tensor& P = value(p);
            require_2d(P, "concat_cols part");
            if (P.shape[0] != n) throw dimension_error("concat_cols: row counts differ");
            total += P.shape[1];
        }
        Tensor Y({n, total});
        int col = 0;
        std::vector<std::pair<int, int>> layout;  // (node id, width)
        for (Var p : parts) {
            const Tensor& P = value(p);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < P.shape[1]; ++j) Y.at(i, col + j) = P.at(i, j);
            layout.emplace_back(p.id, P.shape[1]);
            col += P.shape[1];
        }
        return push(std::move(Y), [layout, n, total](Tape& t, const Node& out) {
            int col = 0;
            for (auto [pid, w] : layout) {
                auto& dP = t.nodes_[pid].grad;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j)
                        dP[static_cast<size_t>(i) * w + j] +=
                            out.grad[static_cast<size_t>(i) * total + col + j];
                col += w;
            }
        });
    }

    /// y_i = sum over offsets o in [-k, k] of beta[o+k] * x_{i+o}, zero padded.
    /// beta may be shaped [2k+1] or [1 x 2k+1].
    Var lightweight_conv(Var x, Var beta) {
        const Tensor& X = value(x);
        const Tensor& B = value(beta);
        require_2d(X, "lightweight_conv input");
        if (B.size() % 2 == 0) throw dimension_error("lightweight_conv: kernel length must be odd");
        int k = (B.size() - 1) / 2;
        int n = X.shape[0], d = X.shape[1];
        Tensor Y({n, d});
        for (int i = 0; i < n; ++i)
            for (int o = -k; o <= k; ++o) {
                int j = i + o;
                if (j < 0 || j >= n) continue;
                double b = B.data[o + k];
                for (int c = 0; c < d; ++c) Y.at(i, c) += b * X.at(j, c);
            }
        int xi = x.id, bi = beta.id;
        return push(std::move(Y), [xi, bi, n, d, k](Tape& t, const Node& out) {
            const Tensor& X = t.nodes_[xi].value;
            const Tensor& B = t.nodes_[bi].value;
            auto& dX = t.nodes_[xi].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < n; ++i)
                for (int o = -k; o <= k; ++o) {
                    int j = i + o;
                    if (j < 0 || j >= n) continue;
                    for (int c = 0; c < d; ++c) {
                        double g = out.grad[static_cast<size_t>(i) * d + c];
                        dB[o + k] += g * X.at(j, c);
                        dX[static_cast<size_t>(j) * d + c] += g * B.data[o + k];
                    }
                }
        });
    }

    /// y[i][c] = sum over offsets o of beta[o+k][c] * x[i+o][c], zero padded.
    Var depthwise_conv(Var x, Var beta) {
        const Tensor& X = value(x);
        const Tensor& B = value(beta);
        require_2d(X, "depthwise_conv input");
        require_2d(B, "depthwise_conv kernel");
        if (B.shape[1] != X.shape[1])
            throw dimension_error("depthwise_conv: channel mismatch, kernel " +
                                  shape_str(B.shape) + " vs input " + shape_str(X.shape));
        if (B.shape[0] % 2 == 0)
            throw dimension_error("depthwise_conv: kernel length must be odd");
        int k = (B.shape[0] - 1) / 2;
        int n = X.shape[0], d = X.shape[1];
        Tensor Y({n, d});
        for (int i = 0; i < n; ++i)
            for (int o = -k; o <= k; ++o) {
                int j = i + o;
                if (j < 0 || j >= n) continue;
                for (int c = 0; c < d; ++c) Y.at(i, c) += B.at(o + k, c) * X.at(j, c);
            }
        int xi = x.id, bi = beta.id;
        return push(std::move(Y), [xi, bi, n, d, k](Tape& t, const Node& out) {
            const Tensor& X = t.nodes_[xi].value;
            const Tensor& B = t.nodes_[bi].value;
            auto& dX = t.nodes_[xi].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < n; ++i)
                for (int o = -k; o <= k; ++o) {
                    int j = i + o;
                    if (j < 0 || j >= n) continue;
                    for (int c = 0; c < d; ++c) {
                        double g = out.grad[static_cast<size_t>(i) * d + c];
                        dB[static_cast<size_t>(o + k) * d + c] += g * X.at(j, c);
                        dX[static_cast<size_t>(j) * d + c] += g * B.at(o + k, c);
                    }
                }
        });
    }

    /// scores + beta[clamp(j-i, -k, k) + k] on every (i,j) entry.
    Var relpos_bias(Var scores, Var beta) {
        const Tensor& S = value(scores);
        const Tensor& B = value(beta);
        require_2d(S, "relpos_bias scores");
        if (S.shape[0] != S.shape[1]) throw dimension_error("relpos_bias: scores must be square");
        if (B.size() % 2 == 0) throw dimension_error("relpos_bias: kernel length must be odd");
        int k = (B.size() - 1) / 2;
        int n = S.shape[0];
        Tensor Y = S;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) Y.at(i, j) += B.data[offset_index(i, j, k)];
        int si = scores.id, bi = beta.id;
        return push(std::move(Y), [si, bi, n, k](Tape& t, const Node& out) {
            auto& dS = t.nodes_[si].grad;
            auto& dB = t.nodes_[bi].grad;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double g = out.grad[static_cast<size_t>(i) * n + j];
                    dS[static_cast<size_t>(i) * n + j] += g;
                    dB[offset_index(i, j, k)] += g;
                }
        });
    }

    /// From per-row offset scores P (n x 2k+1) builds G (n x n),
    /// G[i][j] = P[i][clamp(j-i)+k]. Row i of P belongs to query i.
    Var gather_row_offsets(Var p) {
        const Tensor& P = value(p);
        require_2d(P, "gather_row_offsets input");
        if (P.shape[1] % 2 == 0)
            throw dimension_error("gather_row_offsets: offset axis must be odd");
        int n = P.shape[0], k = (P.shape[1] - 1) / 2;
        Tensor G({n, n});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) G.at(i, j) = P.at(i, offset_index(i, j, k));
        int pi = p.id;
        return push(std::move(G), [pi, n, k](Tape& t, const Node& out) {
            auto& dP = t.nodes_[pi].grad;
            int w = 2 * k + 1;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    dP[static_cast<size_t>(i) * w + offset_index(i, j, k)] +=
                        out.grad[static_cast<size_t>(i) * n + j];
        });
    }

    /// Key-based variant: G[i][j] = P[j][clamp(j-i)+k]. Row j of P belongs to key j.
    Var gather_col_offsets(Var p) {
        const Tensor& P = value(p);
        require_2d(P, "gather_col_offsets input");
        if (P.shape[1] % 2 == 0)
            throw dimension_error("gather_col_offsets: offset axis must be odd");
        int n = P.shape[0], k = (P.shape[1] - 1) / 2;
        Tensor G({n, n});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) G.at(i, j) = P.at(j, offset_index(i, j, k));
        int pi = p.id;
        return push(std::move(G), [pi, n, k](Tape& t, const Node& out) {
            auto& dP = t.nodes_[pi].grad;
            int w = 2 * k + 1;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    dP[static_cast<size_t>(j) * w + offset_index(i, j, k)] +=
                        out.grad[static_cast<size_t>(i) * n + j];
        });
    }

    /// Seeded Bernoulli dropout with inverted scaling. rate <= 0 is a no-op.
    Var dropout(Var a, double rate, std::mt19937_64& rng) {
        if (rate <= 0.0) return a;
        if (rate >= 1.0) throw config_error("dropout: rate must be < 1");
        const Tensor& A = value(a);
        std::bernoulli_distribution keep(1.0 - rate);
        std::vector<double> mask(A.data.size());
        double inv = 1.0 / (1.0 - rate);
        for (double& m : mask) m = keep(rng) ? inv : 0.0;
        Tensor Y = A;
        for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] *= mask[i];
        int ai = a.id;
        return push(std::move(Y), [ai, mask = std::move(mask)](Tape& t, const Node& out) {
            auto& dA = t.nodes_[ai].grad;
            for (size_t i = 0; i < out.grad.size(); ++i) dA[i] += out.grad[i] * mask[i];
        });
    }

    /// Runs the backward pass from a scalar loss. Grads of all nodes are reset first;
    /// leaves not reachable from the loss end with zero gradients.
    void backward(Var loss) {
        const Tensor& L = value(loss);
        if (L.size() != 1) throw dimension_error("backward: loss must be scalar, got " +
                                                 shape_str(L.shape));
        for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
        nodes_[loss.id].grad[0] = 1.0;
        for (int id = loss.id; id >= 0; --id)
            if (nodes_[id].back) nodes_[id].back(*this, nodes_[id]);
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::function<void(Tape&, const Node&)> back;
    };

    Var push(Tensor t, std::function<void(Tape&, const Node&)> back) {
        check_finite(t, "tape op");
        Node n;
        n.grad.assign(t.data.size(), 0.0);
        n.value = std::move(t);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    static void require_2d(const Tensor& t, const char* what) {
        if (t.shape.size() != 2)
            throw dimension_error(std::string(what) + ": expected 2-D tensor, got " +
                                  shape_str(t.shape));
    }

    std::vector<Node> nodes_;
};

/// Central-difference gradient of a scalar function, the verification oracle.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
    Tensor g(x.shape);
    Tensor probe = x;
    for (int i = 0; i < x.size(); ++i) {
        probe.data[i] = x.data[i] + h;
        double fp = f(probe);
        probe.data[i] = x.data[i] - h;
        double fm = f(probe);
        probe.data[i] = x.data[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite function value");
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace convatt
