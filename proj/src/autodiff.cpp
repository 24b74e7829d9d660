#include "oss/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace oss::ad {

void Tape::backward(const NodePtr& loss) {
    if (!record_grad_) throw Error("backward on a non-recording tape");
    if (loss->val.size() != 1) throw ShapeError("loss must be scalar");
    if (!std::isfinite(loss->val.data[0])) {
        throw NumericError(std::string("non-finite loss at op '") + loss->op + "'");
    }
    loss->grad.data[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        if ((*it)->backward) (*it)->backward();
    }
    for (const NodePtr& node : order_) {
        if (node->param != nullptr && node->param->trainable) {
            auto& g = node->param->grad.data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node->grad.data[i];
        }
    }
}

namespace {

void check_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
    if (ok) return;
    auto fmt = [](const Tensor& t) {
        std::string s = "(";
        for (std::size_t i = 0; i < t.shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(t.shape[i]);
        return s + ")";
    };
    throw ShapeError(std::string(op) + ": incompatible shapes " + fmt(a) + " vs " + fmt(b));
}

}  // namespace

NodePtr linear(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    check_shape(x->val.shape.size() == 2 && w->val.shape.size() == 2 &&
                    x->val.dim(1) == w->val.dim(1),
                "linear", x->val, w->val);
    check_shape(b->val.shape.size() == 1 && b->val.dim(0) == w->val.dim(0), "linear bias",
                b->val, w->val);
    const int n = x->val.dim(0), in = x->val.dim(1), outf = w->val.dim(0);
    Tensor y({n, outf});
    const double* xd = x->val.data.data();
    const double* wd = w->val.data.data();
    const double* bd = b->val.data.data();
    for (int r = 0; r < n; ++r) {
        for (int o = 0; o < outf; ++o) {
            double acc = bd[o];
            const double* xr = xd + static_cast<std::size_t>(r) * in;
            const double* wr = wd + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            y.data[static_cast<std::size_t>(r) * outf + o] = acc;
        }
    }
    NodePtr out = t.make("linear", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        Node* wn = w.get();
        Node* bn = b.get();
        out->backward = [on, xn, wn, bn, n, in, outf] {
            const double* gy = on->grad.data.data();
            const double* xd = xn->val.data.data();
            const double* wd = wn->val.data.data();
            double* gx = xn->grad.data.data();
            double* gw = wn->grad.data.data();
            double* gb = bn->grad.data.data();
            for (int r = 0; r < n; ++r) {
                const double* gyr = gy + static_cast<std::size_t>(r) * outf;
                const double* xr = xd + static_cast<std::size_t>(r) * in;
                double* gxr = gx + static_cast<std::size_t>(r) * in;
                for (int o = 0; o < outf; ++o) {
                    const double g = gyr[o];
                    if (g == 0.0) continue;
                    const double* wr = wd + static_cast<std::size_t>(o) * in;
                    double* gwr = gw + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) {
                        gxr[i] += g * wr[i];
                        gwr[i] += g * xr[i];
                    }
                    gb[o] += g;
                }
            }
        };
    }
    return out;
}

NodePtr conv3d(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride,
               int pad) {
    if (stride < 1) throw ArgumentError("conv3d stride must be >= 1");
    if (pad < 0) throw ArgumentError("conv3d padding must be >= 0");
    check_shape(x->val.shape.size() == 5 && w->val.shape.size() == 5 &&
                    x->val.dim(1) == w->val.dim(1) && w->val.dim(2) == w->val.dim(3) &&
                    w->val.dim(3) == w->val.dim(4),
                "conv3d", x->val, w->val);
    const int n = x->val.dim(0), c = x->val.dim(1);
    const int d = x->val.dim(2), h = x->val.dim(3), wd_ = x->val.dim(4);
    const int o = w->val.dim(0), k = w->val.dim(2);
    check_shape(b->val.shape.size() == 1 && b->val.dim(0) == o, "conv3d bias", b->val, w->val);
    const auto out_dim = [&](int s) { return (s + 2 * pad - k) / stride + 1; };
    const int od = out_dim(d), oh = out_dim(h), ow = out_dim(wd_);
    if (od < 1 || oh < 1 || ow < 1) throw ShapeError("conv3d output would be empty");

    Tensor y({n, o, od, oh, ow});
    const double* xd = x->val.data.data();
    const double* wdat = w->val.data.data();
    const auto xidx = [=](int nn, int cc, int zz, int yy, int xx) {
        return (((static_cast<std::size_t>(nn) * c + cc) * d + zz) * h + yy) * wd_ + xx;
    };
    const auto widx = [=](int oo, int cc, int kz, int ky, int kx) {
        return (((static_cast<std::size_t>(oo) * c + cc) * k + kz) * k + ky) * k + kx;
    };
    std::size_t yi = 0;
    for (int nn = 0; nn < n; ++nn) {
        for (int oo = 0; oo < o; ++oo) {
            for (int zz = 0; zz < od; ++zz) {
                for (int yy = 0; yy < oh; ++yy) {
                    for (int xx = 0; xx < ow; ++xx, ++yi) {
                        double acc = b->val.data[oo];
                        const int z0 = zz * stride - pad;
                        const int y0 = yy * stride - pad;
                        const int x0 = xx * stride - pad;
                        for (int cc = 0; cc < c; ++cc) {
                            for (int kz = 0; kz < k; ++kz) {
                                const int z = z0 + kz;
                                if (z < 0 || z >= d) continue;
                                for (int ky = 0; ky < k; ++ky) {
                                    const int yv = y0 + ky;
                                    if (yv < 0 || yv >= h) continue;
                                    const int kx_lo = std::max(0, -x0);
                                    const int kx_hi = std::min(k, wd_ - x0);
                                    const double* xrow = xd + xidx(nn, cc, z, yv, x0);
                                    const double* wrow = wdat + widx(oo, cc, kz, ky, 0);
                                    for (int kx = kx_lo; kx < kx_hi; ++kx)
                                        acc += xrow[kx] * wrow[kx];
                                }
                            }
                        }
                        y.data[yi] = acc;
                    }
                }
            }
        }
    }
    NodePtr out = t.make("conv3d", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        Node* wn = w.get();
        Node* bn = b.get();
        out->backward = [=] {
            const double* gy = on->grad.data.data();
            const double* xd2 = xn->val.data.data();
            const double* wd2 = wn->val.data.data();
            double* gx = xn->grad.data.data();
            double* gw = wn->grad.data.data();
            double* gb = bn->grad.data.data();
            std::size_t yi2 = 0;
            for (int nn = 0; nn < n; ++nn) {
                for (int oo = 0; oo < o; ++oo) {
                    for (int zz = 0; zz < od; ++zz) {
                        for (int yy = 0; yy < oh; ++yy) {
                            for (int xx = 0; xx < ow; ++xx, ++yi2) {
                                const double g = gy[yi2];
                                if (g == 0.0) continue;
                                gb[oo] += g;
                                const int z0 = zz * stride - pad;
                                const int y0 = yy * stride - pad;
                                const int x0 = xx * stride - pad;
                                for (int cc = 0; cc < c; ++cc) {
                                    for (int kz = 0; kz < k; ++kz) {
                                        const int z = z0 + kz;
                                        if (z < 0 || z >= d) continue;
                                        for (int ky = 0; ky < k; ++ky) {
                                            const int yv = y0 + ky;
                                            if (yv < 0 || yv >= h) continue;
                                            const int kx_lo = std::max(0, -x0);
                                            const int kx_hi = std::min(k, wd_ - x0);
                                            const std::size_t xbase = xidx(nn, cc, z, yv, x0);
                                            const std::size_t wbase = widx(oo, cc, kz, ky, 0);
                                            for (int kx = kx_lo; kx < kx_hi; ++kx) {
                                                gx[xbase + kx] += g * wd2[wbase + kx];
                                                gw[wbase + kx] += g * xd2[xbase + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b) {
    check_shape(a->val.shape == b->val.shape, "add", a->val, b->val);
    Tensor y = a->val;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b->val.data[i];
    NodePtr out = t.make("add", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* an = a.get();
        Node* bn = b.get();
        out->backward = [on, an, bn] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                an->grad.data[i] += on->grad.data[i];
                bn->grad.data[i] += on->grad.data[i];
            }
        };
    }
    return out;
}

NodePtr leaky_relu(Tape& t, const NodePtr& x, double slope) {
    Tensor y = x->val;
    for (double& v : y.data) v = v > 0.0 ? v : slope * v;
    NodePtr out = t.make("leaky_relu", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        out->backward = [on, xn, slope] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad.data[i] += on->grad.data[i] * (xn->val.data[i] > 0.0 ? 1.0 : slope);
        };
    }
    return out;
}

NodePtr sigmoid(Tape& t, const NodePtr& x) {
    Tensor y = x->val;
    for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
    NodePtr out = t.make("sigmoid", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        out->backward = [on, xn] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double s = on->val.data[i];
                xn->grad.data[i] += on->grad.data[i] * s * (1.0 - s);
            }
        };
    }
    return out;
}

NodePtr pau(Tape& t, const NodePtr& x, const NodePtr& num, const NodePtr& den) {
    check_shape(num->val.size() == 6 && den->val.size() == 4, "pau coeffs", num->val, den->val);
    const double* a = num->val.data.data();
    const double* b = den->val.data.data();
    Tensor y = x->val;
    for (double& v : y.data) {
        const double xv = v;
        double p = 0.0;
        for (int j = 5; j >= 0; --j) p = p * xv + a[j];
        double bsum = 0.0;
        for (int j = 3; j >= 0; --j) bsum = bsum * xv + b[j];
        bsum *= xv;
        v = p / (1.0 + std::fabs(bsum));
    }
    NodePtr out = t.make("pau", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        Node* an = num.get();
        Node* bn = den.get();
        out->backward = [on, xn, an, bn] {
            const double* a = an->val.data.data();
            const double* b = bn->val.data.data();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double g = on->grad.data[i];
                if (g == 0.0) continue;
                const double xv = xn->val.data[i];
                double p = 0.0, dp = 0.0;
                for (int j = 5; j >= 0; --j) {
                    dp = dp * xv + (j < 5 ? a[j + 1] * (j + 1) : 0.0);
                    p = p * xv + a[j];
                }
                // B(x) = sum_{j=1..4} b_{j-1} x^j, B'(x) = sum j b_{j-1} x^{j-1}
                double bsum = 0.0, dbsum = 0.0, xp = 1.0;
                for (int j = 1; j <= 4; ++j) {
                    dbsum += b[j - 1] * j * xp;
                    xp *= xv;
                    bsum += b[j - 1] * xp;
                }
                const double sgn = bsum > 0.0 ? 1.0 : (bsum < 0.0 ? -1.0 : 0.0);
                const double q = 1.0 + std::fabs(bsum);
                const double q2 = q * q;
                // dy/dx
                xn->grad.data[i] += g * (dp * q - p * sgn * dbsum) / q2;
                // dy/da_j, dy/db_j
                double xj = 1.0;
                for (int j = 0; j < 6; ++j) {
                    an->grad.data[static_cast<std::size_t>(j)] += g * xj / q;
                    xj *= xv;
                }
                xj = xv;
                for (int j = 1; j <= 4; ++j) {
                    bn->grad.data[static_cast<std::size_t>(j - 1)] += -g * p * sgn * xj / q2;
                    xj *= xv;
                }
            }
        };
    }
    return out;
}

NodePtr cond_batchnorm(Tape& t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                       BnStats stats, Mode mode, double eps, double momentum) {
    check_shape(x->val.shape.size() == 2, "cond_batchnorm", x->val, x->val);
    const int n = x->val.dim(0), f = x->val.dim(1);
    const bool per_row = gamma->val.shape.size() == 2 && gamma->val.dim(0) == n &&
                         gamma->val.dim(1) == f && n > 1;
    if (per_row) {
        check_shape(beta->val.shape.size() == 2 && beta->val.dim(0) == n &&
                        beta->val.dim(1) == f,
                    "cond_batchnorm affine", beta->val, gamma->val);
    } else {
        check_shape(gamma->val.size() == static_cast<std::size_t>(f) &&
                        beta->val.size() == static_cast<std::size_t>(f),
                    "cond_batchnorm affine", gamma->val, x->val);
    }
    if (stats.mean == nullptr || stats.var == nullptr ||
        stats.mean->value.size() != static_cast<std::size_t>(f)) {
        throw ShapeError("cond_batchnorm running stats missing or mis-sized");
    }

    std::vector<double> mu(static_cast<std::size_t>(f)), var(static_cast<std::size_t>(f));
    if (mode == Mode::Train) {
        for (int j = 0; j < f; ++j) {
            double s = 0.0;
            for (int r = 0; r < n; ++r) s += x->val.data[static_cast<std::size_t>(r) * f + j];
            mu[static_cast<std::size_t>(j)] = s / n;
        }
        for (int j = 0; j < f; ++j) {
            double s = 0.0;
            for (int r = 0; r < n; ++r) {
                const double d = x->val.data[static_cast<std::size_t>(r) * f + j] -
                                 mu[static_cast<std::size_t>(j)];
                s += d * d;
            }
            var[static_cast<std::size_t>(j)] = s / n;  // biased, for normalization
        }
        // Running update: unbiased variance when possible.
        const double unbias = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
        for (int j = 0; j < f; ++j) {
            auto& rm = stats.mean->value.data[static_cast<std::size_t>(j)];
            auto& rv = stats.var->value.data[static_cast<std::size_t>(j)];
            rm = (1.0 - momentum) * rm + momentum * mu[static_cast<std::size_t>(j)];
            rv = (1.0 - momentum) * rv + momentum * var[static_cast<std::size_t>(j)] * unbias;
        }
    } else {
        for (int j = 0; j < f; ++j) {
            mu[static_cast<std::size_t>(j)] = stats.mean->value.data[static_cast<std::size_t>(j)];
            var[static_cast<std::size_t>(j)] = stats.var->value.data[static_cast<std::size_t>(j)];
        }
    }

    std::vector<double> inv_std(static_cast<std::size_t>(f));
    for (int j = 0; j < f; ++j)
        inv_std[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + eps);

    Tensor y({n, f});
    std::vector<double> xhat(static_cast<std::size_t>(n) * f);
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < f; ++j) {
            const std::size_t i = static_cast<std::size_t>(r) * f + j;
            const std::size_t a = per_row ? i : static_cast<std::size_t>(j);
            xhat[i] = (x->val.data[i] - mu[static_cast<std::size_t>(j)]) *
                      inv_std[static_cast<std::size_t>(j)];
            y.data[i] = gamma->val.data[a] * xhat[i] + beta->val.data[a];
        }
    }
    NodePtr out = t.make("cond_batchnorm", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        Node* gn = gamma.get();
        Node* bn = beta.get();
        const bool train = mode == Mode::Train;
        out->backward = [on, xn, gn, bn, n, f, train, per_row, inv_std = std::move(inv_std),
                         xhat = std::move(xhat)] {
            for (int j = 0; j < f; ++j) {
                const double istd = inv_std[static_cast<std::size_t>(j)];
                if (per_row) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int r = 0; r < n; ++r) {
                        const std::size_t i = static_cast<std::size_t>(r) * f + j;
                        const double dy = on->grad.data[i];
                        gn->grad.data[i] += dy * xhat[i];
                        bn->grad.data[i] += dy;
                        const double dxhat = dy * gn->val.data[i];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[i];
                    }
                    for (int r = 0; r < n; ++r) {
                        const std::size_t i = static_cast<std::size_t>(r) * f + j;
                        const double dxhat = on->grad.data[i] * gn->val.data[i];
                        if (train) {
                            xn->grad.data[i] += istd * (dxhat - sum_dxhat / n -
                                                        xhat[i] * sum_dxhat_xhat / n);
                        } else {
                            xn->grad.data[i] += istd * dxhat;
                        }
                    }
                } else {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (int r = 0; r < n; ++r) {
                        const std::size_t i = static_cast<std::size_t>(r) * f + j;
                        sum_dy += on->grad.data[i];
                        sum_dy_xhat += on->grad.data[i] * xhat[i];
                    }
                    gn->grad.data[static_cast<std::size_t>(j)] += sum_dy_xhat;
                    bn->grad.data[static_cast<std::size_t>(j)] += sum_dy;
                    const double gval = gn->val.data[static_cast<std::size_t>(j)];
                    for (int r = 0; r < n; ++r) {
                        const std::size_t i = static_cast<std::size_t>(r) * f + j;
                        const double dxhat = on->grad.data[i] * gval;
                        if (train) {
                            xn->grad.data[i] += istd * (dxhat - (gval / n) * sum_dy -
                                                        (gval / n) * sum_dy_xhat * xhat[i]);
                        } else {
                            xn->grad.data[i] += istd * dxhat;
                        }
                    }
                }
            }
        };
    }
    return out;
}

NodePtr global_avg_pool(Tape& t, const NodePtr& x) {
    check_shape(x->val.shape.size() == 5, "global_avg_pool", x->val, x->val);
    const int n = x->val.dim(0), c = x->val.dim(1);
    const std::size_t vox = x->val.size() / (static_cast<std::size_t>(n) * c);
    Tensor y({n, c});
    for (int nn = 0; nn < n; ++nn) {
        for (int cc = 0; cc < c; ++cc) {
            const std::size_t base = (static_cast<std::size_t>(nn) * c + cc) * vox;
            double acc = 0.0;
            for (std::size_t i = 0; i < vox; ++i) acc += x->val.data[base + i];
            y.data[static_cast<std::size_t>(nn) * c + cc] = acc / static_cast<double>(vox);
        }
    }
    NodePtr out = t.make("global_avg_pool", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        out->backward = [on, xn, n, c, vox] {
            const double inv = 1.0 / static_cast<double>(vox);
            for (int nn = 0; nn < n; ++nn) {
                for (int cc = 0; cc < c; ++cc) {
                    const double g = on->grad.data[static_cast<std::size_t>(nn) * c + cc] * inv;
                    const std::size_t base = (static_cast<std::size_t>(nn) * c + cc) * vox;
                    for (std::size_t i = 0; i < vox; ++i) xn->grad.data[base + i] += g;
                }
            }
        };
    }
    return out;
}

NodePtr reshape(Tape& t, const NodePtr& x, std::vector<int> shape) {
    if (Tensor::size_of(shape) != x->val.size()) throw ShapeError("reshape element count mismatch");
    Tensor y(std::move(shape), x->val.data);
    NodePtr out = t.make("reshape", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        out->backward = [on, xn] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad.data[i] += on->grad.data[i];
        };
    }
    return out;
}

NodePtr concat_cols(Tape& t, const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw ArgumentError("concat_cols needs at least one input");
    const int n = xs[0]->val.dim(0);
    int ftot = 0;
    for (const auto& x : xs) {
        check_shape(x->val.shape.size() == 2 && x->val.dim(0) == n, "concat_cols", x->val,
                    xs[0]->val);
        ftot += x->val.dim(1);
    }
    Tensor y({n, ftot});
    int off = 0;
    for (const auto& x : xs) {
        const int f = x->val.dim(1);
        for (int r = 0; r < n; ++r)
            std::copy_n(x->val.data.begin() + static_cast<std::size_t>(r) * f, f,
                        y.data.begin() + static_cast<std::size_t>(r) * ftot + off);
        off += f;
    }
    NodePtr out = t.make("concat_cols", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        std::vector<Node*> parents;
        parents.reserve(xs.size());
        for (const auto& x : xs) parents.push_back(x.get());
        out->backward = [on, parents, n, ftot] {
            int off2 = 0;
            for (Node* p : parents) {
                const int f = p->val.dim(1);
                for (int r = 0; r < n; ++r) {
                    const std::size_t src = static_cast<std::size_t>(r) * ftot + off2;
                    const std::size_t dst = static_cast<std::size_t>(r) * f;
                    for (int j = 0; j < f; ++j) p->grad.data[dst + j] += on->grad.data[src + j];
                }
                off2 += f;
            }
        };
    }
    return out;
}

NodePtr concat_rows(Tape& t, const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw ArgumentError("concat_rows needs at least one input");
    const int f = xs[0]->val.dim(1);
    int ntot = 0;
    for (const auto& x : xs) {
        check_shape(x->val.shape.size() == 2 && x->val.dim(1) == f, "concat_rows", x->val,
                    xs[0]->val);
        ntot += x->val.dim(0);
    }
    Tensor y({ntot, f});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy_n(x->val.data.begin(), x->val.size(), y.data.begin() + off);
        off += x->val.size();
    }
    NodePtr out = t.make("concat_rows", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        std::vector<Node*> parents;
        parents.reserve(xs.size());
        for (const auto& x : xs) parents.push_back(x.get());
        out->backward = [on, parents] {
            std::size_t off2 = 0;
            for (Node* p : parents) {
                const std::size_t sz = p->val.size();
                for (std::size_t i = 0; i < sz; ++i) p->grad.data[i] += on->grad.data[off2 + i];
                off2 += sz;
            }
        };
    }
    return out;
}

NodePtr broadcast_rows(Tape& t, const NodePtr& x, int rows) {
    check_shape(x->val.shape.size() == 2 && x->val.dim(0) == 1, "broadcast_rows", x->val, x->val);
    const int f = x->val.dim(1);
    Tensor y({rows, f});
    for (int r = 0; r < rows; ++r)
        std::copy_n(x->val.data.begin(), f, y.data.begin() + static_cast<std::size_t>(r) * f);
    NodePtr out = t.make("broadcast_rows", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* xn = x.get();
        out->backward = [on, xn, rows, f] {
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < f; ++j)
                    xn->grad.data[static_cast<std::size_t>(j)] +=
                        on->grad.data[static_cast<std::size_t>(r) * f + j];
        };
    }
    return out;
}

NodePtr bce_mean(Tape& t, const NodePtr& probs, const std::vector<double>& labels, double eps) {
    if (probs->val.size() != labels.size()) {
        throw ShapeError("bce_mean: " + std::to_string(probs->val.size()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = labels.size();
    std::vector<double> clamped(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(probs->val.data[i], eps, 1.0 - eps);
        clamped[i] = p;
        acc -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    Tensor y({1});
    y.data[0] = acc / static_cast<double>(n);
    NodePtr out = t.make("bce_mean", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* pn = probs.get();
        out->backward = [on, pn, labels, clamped = std::move(clamped), eps, n] {
            const double g = on->grad.data[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double raw = pn->val.data[i];
                if (raw <= eps || raw >= 1.0 - eps) continue;  // clamped region
                const double p = clamped[i];
                pn->grad.data[i] += g * (p - labels[i]) / (p * (1.0 - p));
            }
        };
    }
    return out;
}

NodePtr add_scaled(Tape& t, const NodePtr& a, const NodePtr& b, double alpha) {
    check_shape(a->val.size() == 1 && b->val.size() == 1, "add_scaled", a->val, b->val);
    Tensor y({1});
    y.data[0] = a->val.data[0] + alpha * b->val.data[0];
    NodePtr out = t.make("add_scaled", std::move(y));
    if (t.recording()) {
        Node* on = out.get();
        Node* an = a.get();
        Node* bn = b.get();
        out->backward = [on, an, bn, alpha] {
            an->grad.data[0] += on->grad.data[0];
            bn->grad.data[0] += on->grad.data[0] * alpha;
        };
    }
    return out;
}

}  // namespace oss::ad
