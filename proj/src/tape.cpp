#include "daf/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "daf/error.hpp"
#include "daf/rasterops.hpp"

namespace daf::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

Value Tape::make(Tensor val, bool needs_grad, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = needs_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Value{int(nodes_.size()) - 1};
}

Value Tape::leaf(Tensor t, bool needs_grad) { return make(std::move(t), needs_grad, nullptr); }

Tensor& Tape::g(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.v.empty()) n.grad = Tensor(n.val.shape);
    return n.grad;
}

const Tensor& Tape::grad(Value v) { return g(v.id); }

void Tape::check_scalar(const Tensor& t) {
    if (t.size() != 1) throw ShapeError("backward root must be scalar");
}

void Tape::backward(Value root) {
    check_scalar(nodes_[size_t(root.id)].val);
    for (auto& n : nodes_) n.grad = Tensor();
    g(root.id)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[size_t(i)];
        if (n.back && !n.grad.v.empty()) n.back();
    }
}

// ---------------------------------------------------------------- elementwise

Value Tape::add(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("add shape mismatch");
    Tensor out = ta;
    for (long i = 0; i < out.size(); ++i) out[i] += tb[i];
    bool ng = needs_grad(a) || needs_grad(b);
    int ia = a.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, ib, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            if (nodes_[size_t(ia)].needs_grad) {
                Tensor& ga = g(ia);
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (long i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        };
    return o;
}

Value Tape::sub(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("sub shape mismatch");
    Tensor out = ta;
    for (long i = 0; i < out.size(); ++i) out[i] -= tb[i];
    bool ng = needs_grad(a) || needs_grad(b);
    int ia = a.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, ib, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            if (nodes_[size_t(ia)].needs_grad) {
                Tensor& ga = g(ia);
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (long i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        };
    return o;
}

Value Tape::mul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("mul shape mismatch");
    Tensor out = ta;
    for (long i = 0; i < out.size(); ++i) out[i] *= tb[i];
    bool ng = needs_grad(a) || needs_grad(b);
    int ia = a.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, ib, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& va = nodes_[size_t(ia)].val;
            const Tensor& vb = nodes_[size_t(ib)].val;
            if (nodes_[size_t(ia)].needs_grad) {
                Tensor& ga = g(ia);
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
            }
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (long i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
            }
        };
    return o;
}

Value Tape::div(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("div shape mismatch");
    Tensor out = ta;
    for (long i = 0; i < out.size(); ++i) out[i] /= tb[i];
    bool ng = needs_grad(a) || needs_grad(b);
    int ia = a.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, ib, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& va = nodes_[size_t(ia)].val;
            const Tensor& vb = nodes_[size_t(ib)].val;
            if (nodes_[size_t(ia)].needs_grad) {
                Tensor& ga = g(ia);
                for (long i = 0; i < go.size(); ++i) ga[i] += go[i] / vb[i];
            }
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (long i = 0; i < go.size(); ++i) gb[i] -= go[i] * va[i] / (vb[i] * vb[i]);
            }
        };
    return o;
}

Value Tape::affine(Value a, double mul, double add) {
    Tensor out = val(a);
    for (long i = 0; i < out.size(); ++i) out[i] = mul * out[i] + add;
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, mul] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i) ga[i] += mul * go[i];
        };
    return o;
}

Value Tape::clamp(Value a, double lo, double hi) {
    Tensor out = val(a);
    for (long i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, lo, hi] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& va = nodes_[size_t(ia)].val;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i)
                if (va[i] >= lo && va[i] <= hi) ga[i] += go[i];
        };
    return o;
}

Value Tape::relu(Value a) {
    Tensor out = val(a);
    for (long i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& va = nodes_[size_t(ia)].val;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i)
                if (va[i] > 0) ga[i] += go[i];
        };
    return o;
}

Value Tape::sigmoid(Value a) {
    Tensor out = val(a);
    for (long i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& vo = nodes_[size_t(io)].val;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
        };
    return o;
}

Value Tape::mul_raster(Value a, const Tensor& raster) {
    const Tensor& ta = val(a);
    const long hw = long(ta.h()) * ta.w();
    const bool bcast = raster.size() == hw && ta.size() != hw;
    if (!bcast && long(raster.v.size()) != ta.size())
        throw ShapeError("mul_raster shape mismatch");
    auto r = std::make_shared<Tensor>(raster);
    Tensor out = ta;
    for (long i = 0; i < out.size(); ++i) out[i] *= r->v[size_t(bcast ? i % hw : i)];
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, r, bcast, hw] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i) ga[i] += go[i] * r->v[size_t(bcast ? i % hw : i)];
        };
    return o;
}

// ------------------------------------------------------------------ structure

Value Tape::concat_ch(const std::vector<Value>& xs) {
    if (xs.empty()) throw ShapeError("concat of nothing");
    int h = val(xs[0]).h(), w = val(xs[0]).w(), c = 0;
    bool ng = false;
    for (Value x : xs) {
        const Tensor& t = val(x);
        if (t.shape.size() != 3) throw ShapeError("concat expects rank-3 tensors");
        if (t.h() != h || t.w() != w) throw ShapeError("concat spatial mismatch");
        c += t.c();
        ng = ng || needs_grad(x);
    }
    Tensor out({c, h, w});
    long off = 0;
    for (Value x : xs) {
        const Tensor& t = val(x);
        std::copy(t.v.begin(), t.v.end(), out.v.begin() + off);
        off += t.size();
    }
    std::vector<int> ids(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) ids[i] = xs[i].id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ids, io] {
            const Tensor& go = nodes_[size_t(io)].grad;
            long off2 = 0;
            for (int id : ids) {
                const long n = nodes_[size_t(id)].val.size();
                if (nodes_[size_t(id)].needs_grad) {
                    Tensor& gx = g(id);
                    for (long i = 0; i < n; ++i) gx[i] += go[off2 + i];
                }
                off2 += n;
            }
        };
    return o;
}

Value Tape::resize_bl(Value a, int th, int tw) {
    const Tensor& ta = val(a);
    if (ta.shape.size() != 3) throw ShapeError("resize expects rank-3 tensor");
    const int c = ta.c(), sh = ta.h(), sw = ta.w();
    Tensor out = daf::resize_bilinear(ta, th, tw);
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, c, sh, sw, th, tw] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            const double sy = double(sh) / th, sx = double(sw) / tw;
            for (int y = 0; y < th; ++y) {
                double fy = std::min(std::max((y + 0.5) * sy - 0.5, 0.0), double(sh - 1));
                int y0 = int(fy), y1 = std::min(y0 + 1, sh - 1);
                double wy = fy - y0;
                for (int x = 0; x < tw; ++x) {
                    double fx = std::min(std::max((x + 0.5) * sx - 0.5, 0.0), double(sw - 1));
                    int x0 = int(fx), x1 = std::min(x0 + 1, sw - 1);
                    double wx = fx - x0;
                    for (int ch = 0; ch < c; ++ch) {
                        double gv = go[(long(ch) * th + y) * tw + x];
                        ga[(long(ch) * sh + y0) * sw + x0] += gv * (1 - wy) * (1 - wx);
                        ga[(long(ch) * sh + y0) * sw + x1] += gv * (1 - wy) * wx;
                        ga[(long(ch) * sh + y1) * sw + x0] += gv * wy * (1 - wx);
                        ga[(long(ch) * sh + y1) * sw + x1] += gv * wy * wx;
                    }
                }
            }
        };
    return o;
}

Value Tape::box_sum(Value a, int window) {
    const Tensor& ta = val(a);
    if (ta.shape.size() != 3) throw ShapeError("box_sum expects rank-3 tensor");
    if (window <= 0 || window % 2 == 0) throw ParamError("box_sum window must be odd");
    const int c = ta.c(), h = ta.h(), w = ta.w(), r = window / 2;

    Tensor out(ta.shape);
    std::vector<double> tmp(size_t(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = ta.data() + long(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int d = -r; d <= r; ++d) acc += src[size_t(y) * w + reflect_index(x + d, w)];
                tmp[size_t(y) * w + x] = acc;
            }
        double* dst = out.data() + long(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int d = -r; d <= r; ++d) acc += tmp[size_t(reflect_index(y + d, h)) * w + x];
                dst[size_t(y) * w + x] = acc;
            }
    }

    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, c, h, w, r] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            std::vector<double> gtmp(size_t(h) * w);
            for (int ch = 0; ch < c; ++ch) {
                const double* gsrc = go.data() + long(ch) * h * w;
                std::fill(gtmp.begin(), gtmp.end(), 0.0);
                // Adjoint of the vertical pass, then of the horizontal pass.
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double gv = gsrc[size_t(y) * w + x];
                        if (gv == 0) continue;
                        for (int d = -r; d <= r; ++d)
                            gtmp[size_t(reflect_index(y + d, h)) * w + x] += gv;
                    }
                double* gdst = ga.data() + long(ch) * h * w;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double gv = gtmp[size_t(y) * w + x];
                        if (gv == 0) continue;
                        for (int d = -r; d <= r; ++d)
                            gdst[size_t(y) * w + reflect_index(x + d, w)] += gv;
                    }
            }
        };
    return o;
}

Value Tape::maxpool2x2(Value a) {
    const Tensor& ta = val(a);
    if (ta.shape.size() != 3) throw ShapeError("maxpool expects rank-3 tensor");
    const int c = ta.c(), h = ta.h(), w = ta.w();
    if (h % 2 || w % 2) throw ShapeError("maxpool2x2 needs even spatial dims");
    const int oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    auto arg = std::make_shared<std::vector<int>>(size_t(c) * oh * ow);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                long best = -1;
                double bv = -1e300;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        long idx = (long(ch) * h + 2 * y + dy) * w + 2 * x + dx;
                        // First max in scan order wins on ties (deterministic).
                        if (ta[idx] > bv) {
                            bv = ta[idx];
                            best = idx;
                        }
                    }
                out[(long(ch) * oh + y) * ow + x] = bv;
                (*arg)[size_t((long(ch) * oh + y) * ow + x)] = int(best);
            }
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, arg] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            for (long i = 0; i < go.size(); ++i) ga[(*arg)[size_t(i)]] += go[i];
        };
    return o;
}

Value Tape::conv2d(Value x, Value w, Value b, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    const Tensor& tb = val(b);
    if (tx.shape.size() != 3 || tw.shape.size() != 4) throw ShapeError("conv2d rank mismatch");
    const int cin = tx.c(), h = tx.h(), wdt = tx.w();
    const int cout = tw.shape[0], k = tw.shape[2];
    if (tw.shape[1] != cin || tw.shape[3] != k) throw ShapeError("conv2d weight shape mismatch");
    if (tb.size() != cout) throw ShapeError("conv2d bias shape mismatch");
    if (stride < 1) throw ParamError("conv2d stride must be >= 1");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wdt + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output would be empty");

    const long kk = long(cin) * k * k, ohw = long(oh) * ow;
    auto col = std::make_shared<std::vector<double>>(size_t(kk) * ohw, 0.0);
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const long row = (long(ci) * k + ky) * k + kx;
                double* dst = col->data() + row * ohw;
                const double* src = tx.data() + long(ci) * h * wdt;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= wdt) continue;
                        dst[size_t(oy) * ow + ox] = src[size_t(iy) * wdt + ix];
                    }
                }
            }

    Tensor out({cout, oh, ow});
    {
        CMatMap wm(tw.data(), cout, kk);
        CMatMap cm(col->data(), kk, ohw);
        MatMap om(out.data(), cout, ohw);
        om.noalias() = wm * cm;
        for (int co = 0; co < cout; ++co) om.row(co).array() += tb[co];
    }

    bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
    int ix_ = x.id, iw = w.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ix_, iw, ib, io, col, cin, h, wdt, cout, k, stride, pad,
                                   oh, ow, kk, ohw] {
            const Tensor& go = nodes_[size_t(io)].grad;
            CMatMap gm(go.data(), cout, ohw);
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (int co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
            }
            if (nodes_[size_t(iw)].needs_grad) {
                Tensor& gw = g(iw);
                CMatMap cm(col->data(), kk, ohw);
                MatMap gwm(gw.data(), cout, kk);
                gwm.noalias() += gm * cm.transpose();
            }
            if (nodes_[size_t(ix_)].needs_grad) {
                const Tensor& twv = nodes_[size_t(iw)].val;
                CMatMap wm(twv.data(), cout, kk);
                RowMat gcol = wm.transpose() * gm;  // kk x ohw
                Tensor& gx = g(ix_);
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const long row = (long(ci) * k + ky) * k + kx;
                            const double* src = gcol.data() + row * ohw;
                            double* dst = gx.data() + long(ci) * h * wdt;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ixp = ox * stride - pad + kx;
                                    if (ixp < 0 || ixp >= wdt) continue;
                                    dst[size_t(iy) * wdt + ixp] += src[size_t(oy) * ow + ox];
                                }
                            }
                        }
            }
        };
    return o;
}

Value Tape::group_norm(Value x, Value gamma, Value beta, int groups, double eps) {
    const Tensor& tx = val(x);
    if (tx.shape.size() != 3) throw ShapeError("group_norm expects rank-3 tensor");
    const int c = tx.c(), h = tx.h(), w = tx.w();
    if (groups <= 0 || c % groups != 0) throw ParamError("group_norm groups must divide channels");
    if (val(gamma).size() != c || val(beta).size() != c) throw ShapeError("group_norm affine shape");
    const int cpg = c / groups;
    const long hw = long(h) * w, n = long(cpg) * hw;

    auto mu = std::make_shared<std::vector<double>>(size_t(groups));
    auto rstd = std::make_shared<std::vector<double>>(size_t(groups));
    const Tensor& tg = val(gamma);
    const Tensor& tbta = val(beta);
    Tensor out(tx.shape);
    for (int grp = 0; grp < groups; ++grp) {
        const double* base = tx.data() + long(grp) * cpg * hw;
        double s = 0, s2 = 0;
        for (long i = 0; i < n; ++i) {
            s += base[i];
            s2 += base[i] * base[i];
        }
        const double m = s / n;
        const double var = std::max(0.0, s2 / n - m * m);
        const double r = 1.0 / std::sqrt(var + eps);
        (*mu)[size_t(grp)] = m;
        (*rstd)[size_t(grp)] = r;
        for (int cc = 0; cc < cpg; ++cc) {
            const int ch = grp * cpg + cc;
            const double* src = tx.data() + long(ch) * hw;
            double* dst = out.data() + long(ch) * hw;
            for (long i = 0; i < hw; ++i) dst[i] = tg[ch] * ((src[i] - m) * r) + tbta[ch];
        }
    }

    bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    int ix_ = x.id, ig = gamma.id, ibt = beta.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ix_, ig, ibt, io, groups, cpg, hw, n, mu, rstd] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& tx2 = nodes_[size_t(ix_)].val;
            const Tensor& tg2 = nodes_[size_t(ig)].val;
            const bool wantx = nodes_[size_t(ix_)].needs_grad;
            const bool wantg = nodes_[size_t(ig)].needs_grad;
            const bool wantb = nodes_[size_t(ibt)].needs_grad;
            for (int grp = 0; grp < groups; ++grp) {
                const double m = (*mu)[size_t(grp)], r = (*rstd)[size_t(grp)];
                double s1 = 0, s2 = 0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int ch = grp * cpg + cc;
                    const double* xs = tx2.data() + long(ch) * hw;
                    const double* gs = go.data() + long(ch) * hw;
                    if (wantg) {
                        double acc = 0;
                        for (long i = 0; i < hw; ++i) acc += gs[i] * (xs[i] - m) * r;
                        g(ig)[ch] += acc;
                    }
                    if (wantb) {
                        double acc = 0;
                        for (long i = 0; i < hw; ++i) acc += gs[i];
                        g(ibt)[ch] += acc;
                    }
                    for (long i = 0; i < hw; ++i) {
                        const double dxh = gs[i] * tg2[ch];
                        s1 += dxh;
                        s2 += dxh * (xs[i] - m) * r;
                    }
                }
                if (wantx) {
                    Tensor& gx = g(ix_);
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int ch = grp * cpg + cc;
                        const double* xs = tx2.data() + long(ch) * hw;
                        const double* gs = go.data() + long(ch) * hw;
                        double* gd = gx.data() + long(ch) * hw;
                        for (long i = 0; i < hw; ++i) {
                            const double xh = (xs[i] - m) * r;
                            const double dxh = gs[i] * tg2[ch];
                            gd[i] += r * (dxh - s1 / n - xh * s2 / n);
                        }
                    }
                }
            }
        };
    return o;
}

Value Tape::cosine_map(Value a, Value b, double eps) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb) || ta.shape.size() != 3) throw ShapeError("cosine_map shape mismatch");
    const int c = ta.c(), h = ta.h(), w = ta.w();
    const long hw = long(h) * w;

    auto stats = std::make_shared<std::vector<double>>(size_t(3 * hw));  // ca, cb, dot
    Tensor out({1, h, w});
    for (long p = 0; p < hw; ++p) {
        double ca = 0, cb = 0, dot = 0;
        for (int ch = 0; ch < c; ++ch) {
            const double av = ta[long(ch) * hw + p], bv = tb[long(ch) * hw + p];
            ca += av * av;
            cb += bv * bv;
            dot += av * bv;
        }
        (*stats)[size_t(p)] = ca;
        (*stats)[size_t(hw + p)] = cb;
        (*stats)[size_t(2 * hw + p)] = dot;
        out[p] = dot / std::max(std::sqrt(ca * cb), eps);
    }

    bool ng = needs_grad(a) || needs_grad(b);
    int ia = a.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, ib, io, c, hw, eps, stats] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& ta2 = nodes_[size_t(ia)].val;
            const Tensor& tb2 = nodes_[size_t(ib)].val;
            const bool wanta = nodes_[size_t(ia)].needs_grad;
            const bool wantb = nodes_[size_t(ib)].needs_grad;
            for (long p = 0; p < hw; ++p) {
                const double gv = go[p];
                if (gv == 0) continue;
                const double ca = (*stats)[size_t(p)];
                const double cb = (*stats)[size_t(hw + p)];
                const double dot = (*stats)[size_t(2 * hw + p)];
                const double den = std::sqrt(ca * cb);
                if (den > eps) {
                    const double inv = 1.0 / den, inv3 = inv * inv * inv;
                    for (int ch = 0; ch < c; ++ch) {
                        const double av = ta2[long(ch) * hw + p], bv = tb2[long(ch) * hw + p];
                        if (wanta) g(ia)[long(ch) * hw + p] += gv * (bv * inv - dot * cb * av * inv3);
                        if (wantb) g(ib)[long(ch) * hw + p] += gv * (av * inv - dot * ca * bv * inv3);
                    }
                } else {
                    for (int ch = 0; ch < c; ++ch) {
                        const double av = ta2[long(ch) * hw + p], bv = tb2[long(ch) * hw + p];
                        if (wanta) g(ia)[long(ch) * hw + p] += gv * bv / eps;
                        if (wantb) g(ib)[long(ch) * hw + p] += gv * av / eps;
                    }
                }
            }
        };
    return o;
}

// ----------------------------------------------------------------- reductions

Value Tape::sum_all(Value a) {
    const Tensor& ta = val(a);
    double s = 0;
    for (long i = 0; i < ta.size(); ++i) s += ta[i];
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(Tensor({1}, {s}), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io] {
            const double gv = nodes_[size_t(io)].grad[0];
            Tensor& ga = g(ia);
            for (long i = 0; i < ga.size(); ++i) ga[i] += gv;
        };
    return o;
}

Value Tape::mean_all(Value a) { return affine(sum_all(a), 1.0 / double(val(a).size()), 0.0); }

Value Tape::mean_subset(Value a, std::vector<int> idx) {
    if (idx.empty()) throw ParamError("mean over empty subset");
    const Tensor& ta = val(a);
    double s = 0;
    for (int i : idx) s += ta[i];
    const double n = double(idx.size());
    bool ng = needs_grad(a);
    int ia = a.id;
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    Value o = make(Tensor({1}, {s / n}), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, ids, n] {
            const double gv = nodes_[size_t(io)].grad[0] / n;
            Tensor& ga = g(ia);
            for (int i : *ids) ga[i] += gv;
        };
    return o;
}

Value Tape::bce_subset(Value p, const Tensor& target, std::vector<int> idx, double eps) {
    if (idx.empty()) throw ParamError("bce over empty subset");
    const Tensor& tp = val(p);
    if (long(target.v.size()) != tp.size()) throw ShapeError("bce target shape mismatch");
    double s = 0;
    for (int i : idx) {
        // std::clamp passes NaN through, so a poisoned prediction surfaces
        // in the loss instead of silently reading as a confident negative.
        const double pc = std::clamp(tp[i], eps, 1.0 - eps);
        const double t = target[i];
        s -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    }
    const double n = double(idx.size());
    bool ng = needs_grad(p);
    int ip = p.id;
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    auto tgt = std::make_shared<Tensor>(target);
    Value o = make(Tensor({1}, {s / n}), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ip, io, ids, tgt, n, eps] {
            const double gv = nodes_[size_t(io)].grad[0] / n;
            const Tensor& tp2 = nodes_[size_t(ip)].val;
            Tensor& gp = g(ip);
            for (int i : *ids) {
                if (tp2[i] < eps || tp2[i] > 1.0 - eps) continue;  // clamped flat region
                const double pc = tp2[i], t = (*tgt)[i];
                gp[i] += gv * (pc - t) / (pc * (1.0 - pc));
            }
        };
    return o;
}

Value Tape::global_avg_pool(Value a) {
    const Tensor& ta = val(a);
    if (ta.shape.size() != 3) throw ShapeError("global_avg_pool expects rank-3 tensor");
    const int c = ta.c();
    const long hw = long(ta.h()) * ta.w();
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (long i = 0; i < hw; ++i) s += ta[long(ch) * hw + i];
        out[ch] = s / double(hw);
    }
    bool ng = needs_grad(a);
    int ia = a.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, ia, io, c, hw] {
            const Tensor& go = nodes_[size_t(io)].grad;
            Tensor& ga = g(ia);
            for (int ch = 0; ch < c; ++ch) {
                const double gv = go[ch] / double(hw);
                for (long i = 0; i < hw; ++i) ga[long(ch) * hw + i] += gv;
            }
        };
    return o;
}

Value Tape::linear(Value w, Value x, Value b) {
    const Tensor& tw = val(w);
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    if (tw.shape.size() != 2) throw ShapeError("linear weight must be rank 2");
    const int out_n = tw.shape[0], in_n = tw.shape[1];
    if (tx.size() != in_n || tb.size() != out_n) throw ShapeError("linear shape mismatch");
    Tensor out({out_n});
    for (int o2 = 0; o2 < out_n; ++o2) {
        double s = tb[o2];
        for (int i = 0; i < in_n; ++i) s += tw[long(o2) * in_n + i] * tx[i];
        out[o2] = s;
    }
    bool ng = needs_grad(w) || needs_grad(x) || needs_grad(b);
    int iw = w.id, ix_ = x.id, ib = b.id;
    Value o = make(std::move(out), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, iw, ix_, ib, io, out_n, in_n] {
            const Tensor& go = nodes_[size_t(io)].grad;
            const Tensor& tw2 = nodes_[size_t(iw)].val;
            const Tensor& tx2 = nodes_[size_t(ix_)].val;
            if (nodes_[size_t(ib)].needs_grad) {
                Tensor& gb = g(ib);
                for (int o2 = 0; o2 < out_n; ++o2) gb[o2] += go[o2];
            }
            if (nodes_[size_t(iw)].needs_grad) {
                Tensor& gw = g(iw);
                for (int o2 = 0; o2 < out_n; ++o2)
                    for (int i = 0; i < in_n; ++i) gw[long(o2) * in_n + i] += go[o2] * tx2[i];
            }
            if (nodes_[size_t(ix_)].needs_grad) {
                Tensor& gx = g(ix_);
                for (int o2 = 0; o2 < out_n; ++o2)
                    for (int i = 0; i < in_n; ++i) gx[i] += go[o2] * tw2[long(o2) * in_n + i];
            }
        };
    return o;
}

Value Tape::softmax_cross_entropy(Value logits, int label) {
    const Tensor& tz = val(logits);
    const int k = int(tz.size());
    if (label < 0 || label >= k) throw ParamError("cross entropy label out of range");
    double m = tz[0];
    for (int i = 1; i < k; ++i) m = std::max(m, tz[i]);
    double lse = 0;
    for (int i = 0; i < k; ++i) lse += std::exp(tz[i] - m);
    lse = m + std::log(lse);
    bool ng = needs_grad(logits);
    int iz = logits.id;
    Value o = make(Tensor({1}, {lse - tz[label]}), ng, nullptr);
    int io = o.id;
    if (ng)
        nodes_[size_t(io)].back = [this, iz, io, k, label, lse] {
            const double gv = nodes_[size_t(io)].grad[0];
            const Tensor& tz2 = nodes_[size_t(iz)].val;
            Tensor& gz = g(iz);
            for (int i = 0; i < k; ++i) {
                const double soft = std::exp(tz2[i] - lse);
                gz[i] += gv * (soft - (i == label ? 1.0 : 0.0));
            }
        };
    return o;
}

}  // namespace daf::nn
