#include "rgbd/ops.hpp"

#include <Eigen/Core>

#include <cmath>

namespace rgbd {
namespace nn {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_checks = true;

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

// ---------------------------------------------------------------- elementwise

template <typename T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    require(a->value.same_shape(b->value),
            "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] + b->value[i];
    return make_node<T>(std::move(out), "add", {a, b}, [a, b](NodeT<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) b->grad[i] += n.grad[i];
        }
    });
}

template <typename T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
    require(a->value.same_shape(b->value),
            "sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] - b->value[i];
    return make_node<T>(std::move(out), "sub", {a, b}, [a, b](NodeT<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) b->grad[i] -= n.grad[i];
        }
    });
}

template <typename T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    require(a->value.same_shape(b->value),
            "mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = a->value[i] * b->value[i];
    return make_node<T>(std::move(out), "mul", {a, b}, [a, b](NodeT<T>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

template <typename T>
VarT<T> scale(VarT<T> a, double c) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = (T)(a->value[i] * c);
    return make_node<T>(std::move(out), "scale", {a}, [a, c](NodeT<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) a->grad[i] += (T)(n.grad[i] * c);
    });
}

template <typename T>
VarT<T> add_scalar(VarT<T> a, double c) {
    TensorT<T> out(a->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = (T)(a->value[i] + c);
    return make_node<T>(std::move(out), "add_scalar", {a}, [a](NodeT<T>& n) {
        a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) a->grad[i] += n.grad[i];
    });
}

template <typename T>
VarT<T> silu(VarT<T> x) {
    TensorT<T> out(x->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) {
        T s = (T)(1.0 / (1.0 + std::exp(-(double)x->value[i])));
        out[i] = x->value[i] * s;
    }
    return make_node<T>(std::move(out), "silu", {x}, [x](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) {
            double v = (double)x->value[i];
            double s = 1.0 / (1.0 + std::exp(-v));
            x->grad[i] += (T)((double)n.grad[i] * (s + v * s * (1.0 - s)));
        }
    });
}

template <typename T>
VarT<T> sigmoid(VarT<T> x) {
    TensorT<T> out(x->value.shape);
    for (int64_t i = 0; i < out.numel(); i++)
        out[i] = (T)(1.0 / (1.0 + std::exp(-(double)x->value[i])));
    return make_node<T>(std::move(out), "sigmoid", {x}, [x](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) {
            double s = 1.0 / (1.0 + std::exp(-(double)x->value[i]));
            x->grad[i] += (T)((double)n.grad[i] * s * (1.0 - s));
        }
    });
}

template <typename T>
VarT<T> tanh_act(VarT<T> x) {
    TensorT<T> out(x->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = (T)std::tanh((double)x->value[i]);
    return make_node<T>(std::move(out), "tanh", {x}, [x](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) {
            double t = std::tanh((double)x->value[i]);
            x->grad[i] += (T)((double)n.grad[i] * (1.0 - t * t));
        }
    });
}

template <typename T>
VarT<T> exp_act(VarT<T> x) {
    TensorT<T> out(x->value.shape);
    for (int64_t i = 0; i < out.numel(); i++) out[i] = (T)std::exp((double)x->value[i]);
    return make_node<T>(std::move(out), "exp", {x}, [x](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++)
            x->grad[i] += (T)((double)n.grad[i] * std::exp((double)x->value[i]));
    });
}

// ------------------------------------------------------------------ structure

template <typename T>
VarT<T> reshape(VarT<T> x, std::vector<int64_t> shape) {
    TensorT<T> out = x->value.reshaped(std::move(shape));
    return make_node<T>(std::move(out), "reshape", {x}, [x](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); i++) x->grad[i] += n.grad[i];
    });
}

template <typename T>
VarT<T> concat_ch(std::vector<VarT<T>> parts) {
    require(!parts.empty(), "concat_ch: empty input list");
    const auto& s0 = parts[0]->value.shape;
    require(s0.size() == 4, "concat_ch expects rank-4 tensors");
    int64_t b = s0[0], h = s0[2], w = s0[3], ctotal = 0;
    for (auto& p : parts) {
        const auto& s = p->value.shape;
        require(s.size() == 4 && s[0] == b && s[2] == h && s[3] == w,
                "concat_ch: mismatched batch/spatial axes, got " + p->value.shape_str());
        ctotal += s[1];
    }
    TensorT<T> out({b, ctotal, h, w});
    int64_t coff = 0;
    for (auto& p : parts) {
        int64_t c = p->value.shape[1];
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t ci = 0; ci < c; ci++) {
                const T* src = p->value.ptr() + ((bi * c + ci) * h * w);
                T* dst = out.ptr() + ((bi * ctotal + coff + ci) * h * w);
                std::copy(src, src + h * w, dst);
            }
        coff += c;
    }
    return make_node<T>(std::move(out), "concat_ch", parts, [parts, b, h, w, ctotal](NodeT<T>& n) {
        int64_t coff = 0;
        for (auto& p : parts) {
            int64_t c = p->value.shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t bi = 0; bi < b; bi++)
                    for (int64_t ci = 0; ci < c; ci++) {
                        const T* src = n.grad.ptr() + ((bi * ctotal + coff + ci) * h * w);
                        T* dst = p->grad.ptr() + ((bi * c + ci) * h * w);
                        for (int64_t i = 0; i < h * w; i++) dst[i] += src[i];
                    }
            }
            coff += c;
        }
    });
}

template <typename T>
VarT<T> slice_ch(VarT<T> x, int64_t c0, int64_t c1) {
    const auto& s = x->value.shape;
    require(s.size() == 4, "slice_ch expects rank-4 tensor");
    require(0 <= c0 && c0 < c1 && c1 <= s[1],
            strf("slice_ch: channel range [%lld,%lld) out of C=%lld", (long long)c0,
                 (long long)c1, (long long)s[1]));
    int64_t b = s[0], c = s[1], h = s[2], w = s[3], cs = c1 - c0;
    TensorT<T> out({b, cs, h, w});
    for (int64_t bi = 0; bi < b; bi++)
        for (int64_t ci = 0; ci < cs; ci++) {
            const T* src = x->value.ptr() + ((bi * c + c0 + ci) * h * w);
            std::copy(src, src + h * w, out.ptr() + ((bi * cs + ci) * h * w));
        }
    return make_node<T>(std::move(out), "slice_ch", {x}, [x, c0, cs, b, c, h, w](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t ci = 0; ci < cs; ci++) {
                const T* src = n.grad.ptr() + ((bi * cs + ci) * h * w);
                T* dst = x->grad.ptr() + ((bi * c + c0 + ci) * h * w);
                for (int64_t i = 0; i < h * w; i++) dst[i] += src[i];
            }
    });
}

template <typename T>
VarT<T> bchw_to_tokens(VarT<T> x) {
    const auto& s = x->value.shape;
    require(s.size() == 4, "bchw_to_tokens expects rank-4 tensor");
    int64_t b = s[0], c = s[1], h = s[2], w = s[3], nt = h * w;
    TensorT<T> out({b, nt, c});
    for (int64_t bi = 0; bi < b; bi++)
        for (int64_t ci = 0; ci < c; ci++)
            for (int64_t t = 0; t < nt; t++)
                out[(bi * nt + t) * c + ci] = x->value[(bi * c + ci) * nt + t];
    return make_node<T>(std::move(out), "bchw_to_tokens", {x}, [x, b, c, nt](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t ci = 0; ci < c; ci++)
                for (int64_t t = 0; t < nt; t++)
                    x->grad[(bi * c + ci) * nt + t] += n.grad[(bi * nt + t) * c + ci];
    });
}

template <typename T>
VarT<T> tokens_to_bchw(VarT<T> x, int64_t h, int64_t w) {
    const auto& s = x->value.shape;
    require(s.size() == 3, "tokens_to_bchw expects rank-3 tensor");
    require(s[1] == h * w, strf("tokens_to_bchw: token count %lld != %lldx%lld",
                                (long long)s[1], (long long)h, (long long)w));
    int64_t b = s[0], nt = s[1], c = s[2];
    TensorT<T> out({b, c, h, w});
    for (int64_t bi = 0; bi < b; bi++)
        for (int64_t ci = 0; ci < c; ci++)
            for (int64_t t = 0; t < nt; t++)
                out[(bi * c + ci) * nt + t] = x->value[(bi * nt + t) * c + ci];
    return make_node<T>(std::move(out), "tokens_to_bchw", {x}, [x, b, c, nt](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t ci = 0; ci < c; ci++)
                for (int64_t t = 0; t < nt; t++)
                    x->grad[(bi * nt + t) * c + ci] += n.grad[(bi * c + ci) * nt + t];
    });
}

template <typename T>
VarT<T> concat_tokens(VarT<T> a, VarT<T> b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2],
            "concat_tokens: incompatible shapes " + a->value.shape_str() + " vs " +
                b->value.shape_str());
    int64_t bs = sa[0], na = sa[1], nb = sb[1], c = sa[2];
    TensorT<T> out({bs, na + nb, c});
    for (int64_t bi = 0; bi < bs; bi++) {
        std::copy(a->value.ptr() + bi * na * c, a->value.ptr() + (bi + 1) * na * c,
                  out.ptr() + bi * (na + nb) * c);
        std::copy(b->value.ptr() + bi * nb * c, b->value.ptr() + (bi + 1) * nb * c,
                  out.ptr() + bi * (na + nb) * c + na * c);
    }
    return make_node<T>(std::move(out), "concat_tokens", {a, b}, [a, b, bs, na, nb, c](NodeT<T>& n) {
        for (int64_t bi = 0; bi < bs; bi++) {
            if (a->requires_grad) {
                a->ensure_grad();
                const T* src = n.grad.ptr() + bi * (na + nb) * c;
                T* dst = a->grad.ptr() + bi * na * c;
                for (int64_t i = 0; i < na * c; i++) dst[i] += src[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                const T* src = n.grad.ptr() + bi * (na + nb) * c + na * c;
                T* dst = b->grad.ptr() + bi * nb * c;
                for (int64_t i = 0; i < nb * c; i++) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
VarT<T> slice_tokens(VarT<T> x, int64_t n0, int64_t n1) {
    const auto& s = x->value.shape;
    require(s.size() == 3, "slice_tokens expects rank-3 tensor");
    require(0 <= n0 && n0 < n1 && n1 <= s[1],
            strf("slice_tokens: range [%lld,%lld) out of N=%lld", (long long)n0, (long long)n1,
                 (long long)s[1]));
    int64_t bs = s[0], nt = s[1], c = s[2], ns = n1 - n0;
    TensorT<T> out({bs, ns, c});
    for (int64_t bi = 0; bi < bs; bi++)
        std::copy(x->value.ptr() + (bi * nt + n0) * c, x->value.ptr() + (bi * nt + n1) * c,
                  out.ptr() + bi * ns * c);
    return make_node<T>(std::move(out), "slice_tokens", {x}, [x, n0, ns, bs, nt, c](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < bs; bi++) {
            const T* src = n.grad.ptr() + bi * ns * c;
            T* dst = x->grad.ptr() + (bi * nt + n0) * c;
            for (int64_t i = 0; i < ns * c; i++) dst[i] += src[i];
        }
    });
}

template <typename T>
VarT<T> split_heads(VarT<T> x, int64_t heads) {
    const auto& s = x->value.shape;
    require(s.size() == 3, "split_heads expects rank-3 tensor");
    require_cfg(s[2] % heads == 0, strf("attention heads %lld do not divide channels %lld",
                                        (long long)heads, (long long)s[2]));
    int64_t b = s[0], nt = s[1], c = s[2], d = c / heads;
    TensorT<T> out({b * heads, nt, d});
    for (int64_t bi = 0; bi < b; bi++)
        for (int64_t hh = 0; hh < heads; hh++)
            for (int64_t t = 0; t < nt; t++)
                std::copy(x->value.ptr() + (bi * nt + t) * c + hh * d,
                          x->value.ptr() + (bi * nt + t) * c + (hh + 1) * d,
                          out.ptr() + ((bi * heads + hh) * nt + t) * d);
    return make_node<T>(std::move(out), "split_heads", {x}, [x, heads, b, nt, c, d](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t hh = 0; hh < heads; hh++)
                for (int64_t t = 0; t < nt; t++) {
                    const T* src = n.grad.ptr() + ((bi * heads + hh) * nt + t) * d;
                    T* dst = x->grad.ptr() + (bi * nt + t) * c + hh * d;
                    for (int64_t i = 0; i < d; i++) dst[i] += src[i];
                }
    });
}

template <typename T>
VarT<T> merge_heads(VarT<T> x, int64_t heads) {
    const auto& s = x->value.shape;
    require(s.size() == 3, "merge_heads expects rank-3 tensor");
    require(s[0] % heads == 0, "merge_heads: batch not divisible by head count");
    int64_t b = s[0] / heads, nt = s[1], d = s[2], c = d * heads;
    TensorT<T> out({b, nt, c});
    for (int64_t bi = 0; bi < b; bi++)
        for (int64_t hh = 0; hh < heads; hh++)
            for (int64_t t = 0; t < nt; t++)
                std::copy(x->value.ptr() + ((bi * heads + hh) * nt + t) * d,
                          x->value.ptr() + ((bi * heads + hh) * nt + t + 1) * d,
                          out.ptr() + (bi * nt + t) * c + hh * d);
    return make_node<T>(std::move(out), "merge_heads", {x}, [x, heads, b, nt, c, d](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bi = 0; bi < b; bi++)
            for (int64_t hh = 0; hh < heads; hh++)
                for (int64_t t = 0; t < nt; t++) {
                    const T* src = n.grad.ptr() + (bi * nt + t) * c + hh * d;
                    T* dst = x->grad.ptr() + ((bi * heads + hh) * nt + t) * d;
                    for (int64_t i = 0; i < d; i++) dst[i] += src[i];
                }
    });
}

template <typename T>
VarT<T> transpose_01(VarT<T> x) {
    const auto& s = x->value.shape;
    require(s.size() == 3, "transpose_01 expects rank-3 tensor");
    int64_t a = s[0], b = s[1], c = s[2];
    TensorT<T> out({b, a, c});
    for (int64_t i = 0; i < a; i++)
        for (int64_t j = 0; j < b; j++)
            std::copy(x->value.ptr() + (i * b + j) * c, x->value.ptr() + (i * b + j + 1) * c,
                      out.ptr() + (j * a + i) * c);
    return make_node<T>(std::move(out), "transpose_01", {x}, [x, a, b, c](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t i = 0; i < a; i++)
            for (int64_t j = 0; j < b; j++) {
                const T* src = n.grad.ptr() + (j * a + i) * c;
                T* dst = x->grad.ptr() + (i * b + j) * c;
                for (int64_t k = 0; k < c; k++) dst[k] += src[k];
            }
    });
}

template <typename T>
VarT<T> repeat_batch(VarT<T> x, int64_t times) {
    require(times >= 1, "repeat_batch: times must be >= 1");
    const auto& s = x->value.shape;
    require(!s.empty(), "repeat_batch on scalarless tensor");
    int64_t b = s[0], stride = x->value.numel() / b;
    std::vector<int64_t> os = s;
    os[0] = b * times;
    TensorT<T> out(os);
    for (int64_t r = 0; r < b * times; r++)
        std::copy(x->value.ptr() + (r % b) * stride, x->value.ptr() + (r % b + 1) * stride,
                  out.ptr() + r * stride);
    return make_node<T>(std::move(out), "repeat_batch", {x}, [x, b, times, stride](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t r = 0; r < b * times; r++) {
            const T* src = n.grad.ptr() + r * stride;
            T* dst = x->grad.ptr() + (r % b) * stride;
            for (int64_t i = 0; i < stride; i++) dst[i] += src[i];
        }
    });
}

template <typename T>
VarT<T> upsample_nearest2(VarT<T> x) {
    const auto& s = x->value.shape;
    require(s.size() == 4, "upsample_nearest2 expects rank-4 tensor");
    int64_t b = s[0], c = s[1], h = s[2], w = s[3];
    TensorT<T> out({b, c, h * 2, w * 2});
    for (int64_t bc = 0; bc < b * c; bc++) {
        const T* src = x->value.ptr() + bc * h * w;
        T* dst = out.ptr() + bc * 4 * h * w;
        for (int64_t i = 0; i < h; i++)
            for (int64_t j = 0; j < w; j++) {
                T v = src[i * w + j];
                dst[(2 * i) * 2 * w + 2 * j] = v;
                dst[(2 * i) * 2 * w + 2 * j + 1] = v;
                dst[(2 * i + 1) * 2 * w + 2 * j] = v;
                dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    return make_node<T>(std::move(out), "upsample_nearest2", {x}, [x, b, c, h, w](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t bc = 0; bc < b * c; bc++) {
            const T* src = n.grad.ptr() + bc * 4 * h * w;
            T* dst = x->grad.ptr() + bc * h * w;
            for (int64_t i = 0; i < h; i++)
                for (int64_t j = 0; j < w; j++)
                    dst[i * w + j] += src[(2 * i) * 2 * w + 2 * j] +
                                      src[(2 * i) * 2 * w + 2 * j + 1] +
                                      src[(2 * i + 1) * 2 * w + 2 * j] +
                                      src[(2 * i + 1) * 2 * w + 2 * j + 1];
        }
    });
}

// -------------------------------------------------------------- linear algebra

template <typename T>
VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> b) {
    const auto& sx = x->value.shape;
    const auto& sw = w->value.shape;
    require(sx.size() >= 1 && sw.size() == 2, "linear: weight must be rank-2");
    int64_t cin = sx.back();
    require(sw[1] == cin, strf("linear: input feature axis %lld != weight in axis %lld",
                               (long long)cin, (long long)sw[1]));
    int64_t cout = sw[0];
    int64_t m = x->value.numel() / cin;
    if (b) require(b->value.numel() == cout, "linear: bias length mismatch");

    TensorT<T> out_flat({m, cout});
    {
        MapC<T> X(x->value.ptr(), m, cin);
        MapC<T> W(w->value.ptr(), cout, cin);
        MapM<T> Y(out_flat.ptr(), m, cout);
        Y.noalias() = X * W.transpose();
        if (b)
            for (int64_t i = 0; i < m; i++)
                for (int64_t j = 0; j < cout; j++) out_flat[i * cout + j] += b->value[j];
    }
    std::vector<int64_t> os(sx.begin(), sx.end() - 1);
    os.push_back(cout);
    TensorT<T> out = out_flat.reshaped(os);

    std::vector<VarT<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node<T>(std::move(out), "linear", parents, [x, w, b, m, cin, cout](NodeT<T>& n) {
        MapC<T> G(n.grad.ptr(), m, cout);
        MapC<T> X(x->value.ptr(), m, cin);
        MapC<T> W(w->value.ptr(), cout, cin);
        if (x->requires_grad) {
            x->ensure_grad();
            MapM<T> DX(x->grad.ptr(), m, cin);
            DX.noalias() += G * W;
        }
        if (w->requires_grad) {
            w->ensure_grad();
            MapM<T> DW(w->grad.ptr(), cout, cin);
            DW.noalias() += G.transpose() * X;
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < m; i++)
                for (int64_t j = 0; j < cout; j++) b->grad[j] += n.grad[i * cout + j];
        }
    });
}

template <typename T>
VarT<T> bmm(VarT<T> a, VarT<T> b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "bmm: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    int64_t g = sa[0], mm = sa[1], kk = sa[2], nn = sb[2];
    TensorT<T> out({g, mm, nn});
    for (int64_t gi = 0; gi < g; gi++) {
        MapC<T> A(a->value.ptr() + gi * mm * kk, mm, kk);
        MapC<T> B(b->value.ptr() + gi * kk * nn, kk, nn);
        MapM<T> Y(out.ptr() + gi * mm * nn, mm, nn);
        Y.noalias() = A * B;
    }
    return make_node<T>(std::move(out), "matmul", {a, b}, [a, b, g, mm, kk, nn](NodeT<T>& n) {
        for (int64_t gi = 0; gi < g; gi++) {
            MapC<T> G(n.grad.ptr() + gi * mm * nn, mm, nn);
            MapC<T> A(a->value.ptr() + gi * mm * kk, mm, kk);
            MapC<T> B(b->value.ptr() + gi * kk * nn, kk, nn);
            if (a->requires_grad) {
                a->ensure_grad();
                MapM<T> DA(a->grad.ptr() + gi * mm * kk, mm, kk);
                DA.noalias() += G * B.transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                MapM<T> DB(b->grad.ptr() + gi * kk * nn, kk, nn);
                DB.noalias() += A.transpose() * G;
            }
        }
    });
}

template <typename T>
VarT<T> bmm_nt(VarT<T> a, VarT<T> b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2],
            "bmm_nt: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    int64_t g = sa[0], mm = sa[1], kk = sa[2], nn = sb[1];
    TensorT<T> out({g, mm, nn});
    for (int64_t gi = 0; gi < g; gi++) {
        MapC<T> A(a->value.ptr() + gi * mm * kk, mm, kk);
        MapC<T> B(b->value.ptr() + gi * nn * kk, nn, kk);
        MapM<T> Y(out.ptr() + gi * mm * nn, mm, nn);
        Y.noalias() = A * B.transpose();
    }
    return make_node<T>(std::move(out), "matmul_nt", {a, b}, [a, b, g, mm, kk, nn](NodeT<T>& n) {
        for (int64_t gi = 0; gi < g; gi++) {
            MapC<T> G(n.grad.ptr() + gi * mm * nn, mm, nn);
            MapC<T> A(a->value.ptr() + gi * mm * kk, mm, kk);
            MapC<T> B(b->value.ptr() + gi * nn * kk, nn, kk);
            if (a->requires_grad) {
                a->ensure_grad();
                MapM<T> DA(a->grad.ptr() + gi * mm * kk, mm, kk);
                DA.noalias() += G * B;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                MapM<T> DB(b->grad.ptr() + gi * nn * kk, nn, kk);
                DB.noalias() += G.transpose() * A;
            }
        }
    });
}

// im2col: col[(ci*k+ki)*k+kj, ho*Wo+wo]
template <typename T>
static void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int64_t k, int64_t stride,
                   int64_t pad, int64_t ho, int64_t wo, T* col) {
    for (int64_t ci = 0; ci < cin; ci++)
        for (int64_t ki = 0; ki < k; ki++)
            for (int64_t kj = 0; kj < k; kj++) {
                T* dst = col + ((ci * k + ki) * k + kj) * ho * wo;
                for (int64_t i = 0; i < ho; i++) {
                    int64_t yi = i * stride + ki - pad;
                    if (yi < 0 || yi >= h) {
                        for (int64_t j = 0; j < wo; j++) dst[i * wo + j] = T(0);
                        continue;
                    }
                    const T* src = x + (ci * h + yi) * w;
                    for (int64_t j = 0; j < wo; j++) {
                        int64_t xj = j * stride + kj - pad;
                        dst[i * wo + j] = (xj >= 0 && xj < w) ? src[xj] : T(0);
                    }
                }
            }
}

template <typename T>
static void col2im_acc(const T* col, int64_t cin, int64_t h, int64_t w, int64_t k, int64_t stride,
                       int64_t pad, int64_t ho, int64_t wo, T* x) {
    for (int64_t ci = 0; ci < cin; ci++)
        for (int64_t ki = 0; ki < k; ki++)
            for (int64_t kj = 0; kj < k; kj++) {
                const T* src = col + ((ci * k + ki) * k + kj) * ho * wo;
                for (int64_t i = 0; i < ho; i++) {
                    int64_t yi = i * stride + ki - pad;
                    if (yi < 0 || yi >= h) continue;
                    T* dst = x + (ci * h + yi) * w;
                    for (int64_t j = 0; j < wo; j++) {
                        int64_t xj = j * stride + kj - pad;
                        if (xj >= 0 && xj < w) dst[xj] += src[i * wo + j];
                    }
                }
            }
}

template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, VarT<T> b, int stride, int padding) {
    const auto& sx = x->value.shape;
    const auto& sw = w->value.shape;
    require(sx.size() == 4, "conv2d: input must be rank-4 [B,C,H,W], got " + x->value.shape_str());
    require(sw.size() == 4 && sw[2] == sw[3], "conv2d: weight must be [Cout,Cin,k,k]");
    require(sw[3] % 2 == 1, "conv2d: kernel size must be odd");
    require(sx[1] == sw[1], strf("conv2d: input channel axis %lld != weight channel axis %lld",
                                 (long long)sx[1], (long long)sw[1]));
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    int64_t bs = sx[0], cin = sx[1], h = sx[2], w_ = sx[3];
    int64_t cout = sw[0], k = sw[2];
    int64_t ho = (h + 2 * padding - k) / stride + 1;
    int64_t wo = (w_ + 2 * padding - k) / stride + 1;
    require(ho >= 1 && wo >= 1, "conv2d: output spatial axis collapsed to zero");
    if (b) require(b->value.numel() == cout, "conv2d: bias length != output channel axis");

    TensorT<T> out({bs, cout, ho, wo});
    std::vector<T> col((size_t)(cin * k * k * ho * wo));
    for (int64_t bi = 0; bi < bs; bi++) {
        im2col(x->value.ptr() + bi * cin * h * w_, cin, h, w_, k, stride, padding, ho, wo,
               col.data());
        MapC<T> W(w->value.ptr(), cout, cin * k * k);
        MapC<T> C(col.data(), cin * k * k, ho * wo);
        MapM<T> Y(out.ptr() + bi * cout * ho * wo, cout, ho * wo);
        Y.noalias() = W * C;
        if (b)
            for (int64_t co = 0; co < cout; co++) {
                T bv = b->value[co];
                T* dst = out.ptr() + (bi * cout + co) * ho * wo;
                for (int64_t i = 0; i < ho * wo; i++) dst[i] += bv;
            }
    }

    std::vector<VarT<T>> parents = {x, w};
    if (b) parents.push_back(b);
    int64_t s = stride, p = padding;
    return make_node<T>(
        std::move(out), "conv2d", parents,
        [x, w, b, bs, cin, h, w_, cout, k, s, p, ho, wo](NodeT<T>& n) {
            std::vector<T> col((size_t)(cin * k * k * ho * wo));
            std::vector<T> dcol((size_t)(cin * k * k * ho * wo));
            for (int64_t bi = 0; bi < bs; bi++) {
                MapC<T> G(n.grad.ptr() + bi * cout * ho * wo, cout, ho * wo);
                if (w->requires_grad || x->requires_grad)
                    im2col(x->value.ptr() + bi * cin * h * w_, cin, h, w_, k, s, p, ho, wo,
                           col.data());
                if (w->requires_grad) {
                    w->ensure_grad();
                    MapC<T> C(col.data(), cin * k * k, ho * wo);
                    MapM<T> DW(w->grad.ptr(), cout, cin * k * k);
                    DW.noalias() += G * C.transpose();
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    MapC<T> W(w->value.ptr(), cout, cin * k * k);
                    MapM<T> DC(dcol.data(), cin * k * k, ho * wo);
                    DC.noalias() = W.transpose() * G;
                    col2im_acc(dcol.data(), cin, h, w_, k, s, p, ho, wo,
                               x->grad.ptr() + bi * cin * h * w_);
                }
                if (b && b->requires_grad) {
                    b->ensure_grad();
                    for (int64_t co = 0; co < cout; co++) {
                        const T* src = n.grad.ptr() + (bi * cout + co) * ho * wo;
                        T acc = T(0);
                        for (int64_t i = 0; i < ho * wo; i++) acc += src[i];
                        b->grad[co] += acc;
                    }
                }
            }
        });
}

// ------------------------------------------------------- normalization / attn

template <typename T>
VarT<T> group_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, int groups, double eps) {
    const auto& s = x->value.shape;
    require(s.size() == 4, "group_norm expects rank-4 tensor");
    int64_t bs = s[0], c = s[1], h = s[2], w = s[3];
    require_cfg(c % groups == 0,
                strf("group_norm: %d groups do not divide %lld channels", groups, (long long)c));
    require(gamma->value.numel() == c && beta->value.numel() == c,
            "group_norm: gamma/beta length != channel axis");
    int64_t cg = c / groups, m = cg * h * w;

    TensorT<T> out(s);
    TensorT<T> mean({bs, (int64_t)groups});
    TensorT<T> rstd({bs, (int64_t)groups});
    for (int64_t bi = 0; bi < bs; bi++)
        for (int64_t g = 0; g < groups; g++) {
            const T* src = x->value.ptr() + (bi * c + g * cg) * h * w;
            double mu = 0;
            for (int64_t i = 0; i < m; i++) mu += (double)src[i];
            mu /= (double)m;
            double var = 0;
            for (int64_t i = 0; i < m; i++) {
                double d = (double)src[i] - mu;
                var += d * d;
            }
            var /= (double)m;
            double rs = 1.0 / std::sqrt(var + eps);
            mean.at2(bi, g) = (T)mu;
            rstd.at2(bi, g) = (T)rs;
            for (int64_t ci = 0; ci < cg; ci++) {
                int64_t ch = g * cg + ci;
                const T* xs = x->value.ptr() + (bi * c + ch) * h * w;
                T* ys = out.ptr() + (bi * c + ch) * h * w;
                T ga = gamma->value[ch], be = beta->value[ch];
                for (int64_t i = 0; i < h * w; i++)
                    ys[i] = (T)(((double)xs[i] - mu) * rs) * ga + be;
            }
        }

    return make_node<T>(
        std::move(out), "group_norm", {x, gamma, beta},
        [x, gamma, beta, bs, c, h, w, groups, cg, m, mean, rstd](NodeT<T>& n) {
            for (int64_t bi = 0; bi < bs; bi++)
                for (int64_t g = 0; g < groups; g++) {
                    double mu = (double)mean.at2(bi, g), rs = (double)rstd.at2(bi, g);
                    // reductions over the group
                    double sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (int64_t ci = 0; ci < cg; ci++) {
                        int64_t ch = g * cg + ci;
                        const T* xs = x->value.ptr() + (bi * c + ch) * h * w;
                        const T* gs = n.grad.ptr() + (bi * c + ch) * h * w;
                        double ga = (double)gamma->value[ch];
                        for (int64_t i = 0; i < h * w; i++) {
                            double xhat = ((double)xs[i] - mu) * rs;
                            double dxhat = (double)gs[i] * ga;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    double mean_dxhat = sum_dxhat / (double)m;
                    double mean_dxhat_xhat = sum_dxhat_xhat / (double)m;
                    for (int64_t ci = 0; ci < cg; ci++) {
                        int64_t ch = g * cg + ci;
                        const T* xs = x->value.ptr() + (bi * c + ch) * h * w;
                        const T* gs = n.grad.ptr() + (bi * c + ch) * h * w;
                        double ga = (double)gamma->value[ch];
                        if (x->requires_grad) {
                            x->ensure_grad();
                            T* dxs = x->grad.ptr() + (bi * c + ch) * h * w;
                            for (int64_t i = 0; i < h * w; i++) {
                                double xhat = ((double)xs[i] - mu) * rs;
                                double dxhat = (double)gs[i] * ga;
                                dxs[i] += (T)(rs * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
                            }
                        }
                        if (gamma->requires_grad) {
                            gamma->ensure_grad();
                            double acc = 0;
                            for (int64_t i = 0; i < h * w; i++)
                                acc += (double)gs[i] * (((double)xs[i] - mu) * rs);
                            gamma->grad[ch] += (T)acc;
                        }
                        if (beta->requires_grad) {
                            beta->ensure_grad();
                            double acc = 0;
                            for (int64_t i = 0; i < h * w; i++) acc += (double)gs[i];
                            beta->grad[ch] += (T)acc;
                        }
                    }
                }
        });
}

template <typename T>
VarT<T> softmax_last(VarT<T> x) {
    const auto& s = x->value.shape;
    require(!s.empty(), "softmax on empty tensor");
    int64_t d = s.back(), rows = x->value.numel() / d;
    TensorT<T> out(s);
    for (int64_t r = 0; r < rows; r++) {
        const T* src = x->value.ptr() + r * d;
        T* dst = out.ptr() + r * d;
        double mx = (double)src[0];
        for (int64_t i = 1; i < d; i++) mx = std::max(mx, (double)src[i]);
        double z = 0;
        for (int64_t i = 0; i < d; i++) {
            double e = std::exp((double)src[i] - mx);
            dst[i] = (T)e;
            z += e;
        }
        double rz = 1.0 / z;
        for (int64_t i = 0; i < d; i++) dst[i] = (T)((double)dst[i] * rz);
    }
    return make_node<T>(std::move(out), "softmax", {x}, [x, d, rows](NodeT<T>& n) {
        x->ensure_grad();
        for (int64_t r = 0; r < rows; r++) {
            const T* y = n.value.ptr() + r * d;
            const T* g = n.grad.ptr() + r * d;
            double dot = 0;
            for (int64_t i = 0; i < d; i++) dot += (double)y[i] * (double)g[i];
            T* dx = x->grad.ptr() + r * d;
            for (int64_t i = 0; i < d; i++)
                dx[i] += (T)((double)y[i] * ((double)g[i] - dot));
        }
    });
}

template <typename T>
VarT<T> multihead_attention(VarT<T> q_tokens, VarT<T> kv_tokens, VarT<T> wq, VarT<T> bq,
                            VarT<T> wk, VarT<T> bk, VarT<T> wv, VarT<T> bv, VarT<T> wo,
                            VarT<T> bo, int64_t heads) {
    const auto& sq = q_tokens->value.shape;
    const auto& skv = kv_tokens->value.shape;
    require(sq.size() == 3 && skv.size() == 3 && sq[0] == skv[0],
            "attention: query/key-value batch axes differ");
    int64_t c = wq->value.shape[0];
    require_cfg(c % heads == 0, strf("attention heads %lld do not divide channels %lld",
                                     (long long)heads, (long long)c));
    int64_t d = c / heads;
    auto q = linear(q_tokens, wq, bq);
    auto k = linear(kv_tokens, wk, bk);
    auto v = linear(kv_tokens, wv, bv);
    auto qh = split_heads(q, heads);
    auto kh = split_heads(k, heads);
    auto vh = split_heads(v, heads);
    auto att = softmax_last(scale(bmm_nt(qh, kh), 1.0 / std::sqrt((double)d)));
    auto oh = bmm(att, vh);
    auto o = merge_heads(oh, heads);
    return linear(o, wo, bo);
}

// --------------------------------------------------------- reductions / losses

template <typename T>
VarT<T> mean_all(VarT<T> x) {
    int64_t n = x->value.numel();
    TensorT<T> out({1});
    double acc = 0;
    for (int64_t i = 0; i < n; i++) acc += (double)x->value[i];
    out[0] = (T)(acc / (double)n);
    return make_node<T>(std::move(out), "mean", {x}, [x, n](NodeT<T>& nd) {
        x->ensure_grad();
        T g = (T)((double)nd.grad[0] / (double)n);
        for (int64_t i = 0; i < n; i++) x->grad[i] += g;
    });
}

template <typename T>
VarT<T> sum_all(VarT<T> x) {
    int64_t n = x->value.numel();
    TensorT<T> out({1});
    double acc = 0;
    for (int64_t i = 0; i < n; i++) acc += (double)x->value[i];
    out[0] = (T)acc;
    return make_node<T>(std::move(out), "sum", {x}, [x, n](NodeT<T>& nd) {
        x->ensure_grad();
        T g = nd.grad[0];
        for (int64_t i = 0; i < n; i++) x->grad[i] += g;
    });
}

template <typename T>
VarT<T> mse(VarT<T> a, VarT<T> b) {
    require(a->value.same_shape(b->value),
            "mse: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    int64_t n = a->value.numel();
    TensorT<T> out({1});
    double acc = 0;
    for (int64_t i = 0; i < n; i++) {
        double d = (double)a->value[i] - (double)b->value[i];
        acc += d * d;
    }
    out[0] = (T)(acc / (double)n);
    return make_node<T>(std::move(out), "mse", {a, b}, [a, b, n](NodeT<T>& nd) {
        double g = 2.0 * (double)nd.grad[0] / (double)n;
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n; i++)
                a->grad[i] += (T)(g * ((double)a->value[i] - (double)b->value[i]));
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n; i++)
                b->grad[i] -= (T)(g * ((double)a->value[i] - (double)b->value[i]));
        }
    });
}

template <typename T>
VarT<T> add_channel_bias(VarT<T> x, VarT<T> t) {
    const auto& sx = x->value.shape;
    const auto& st = t->value.shape;
    require(sx.size() == 4 && st.size() == 2 && sx[0] == st[0] && sx[1] == st[1],
            "add_channel_bias: expected x[B,C,H,W], t[B,C], got " + x->value.shape_str() +
                " and " + t->value.shape_str());
    int64_t bs = sx[0], c = sx[1], hw = sx[2] * sx[3];
    TensorT<T> out(sx);
    for (int64_t bi = 0; bi < bs; bi++)
        for (int64_t ci = 0; ci < c; ci++) {
            const T* src = x->value.ptr() + (bi * c + ci) * hw;
            T* dst = out.ptr() + (bi * c + ci) * hw;
            T bv = t->value[bi * c + ci];
            for (int64_t i = 0; i < hw; i++) dst[i] = src[i] + bv;
        }
    return make_node<T>(std::move(out), "add_channel_bias", {x, t}, [x, t, bs, c, hw](NodeT<T>& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); i++) x->grad[i] += n.grad[i];
        }
        if (t->requires_grad) {
            t->ensure_grad();
            for (int64_t bi = 0; bi < bs; bi++)
                for (int64_t ci = 0; ci < c; ci++) {
                    const T* src = n.grad.ptr() + (bi * c + ci) * hw;
                    T acc = T(0);
                    for (int64_t i = 0; i < hw; i++) acc += src[i];
                    t->grad[bi * c + ci] += acc;
                }
        }
    });
}

// ----------------------------------------------------- explicit instantiations

#define RGBD_INSTANTIATE(T)                                                                       \
    template VarT<T> add<T>(VarT<T>, VarT<T>);                                                    \
    template VarT<T> sub<T>(VarT<T>, VarT<T>);                                                    \
    template VarT<T> mul<T>(VarT<T>, VarT<T>);                                                    \
    template VarT<T> scale<T>(VarT<T>, double);                                                   \
    template VarT<T> add_scalar<T>(VarT<T>, double);                                              \
    template VarT<T> silu<T>(VarT<T>);                                                            \
    template VarT<T> sigmoid<T>(VarT<T>);                                                         \
    template VarT<T> tanh_act<T>(VarT<T>);                                                        \
    template VarT<T> exp_act<T>(VarT<T>);                                                         \
    template VarT<T> reshape<T>(VarT<T>, std::vector<int64_t>);                                   \
    template VarT<T> concat_ch<T>(std::vector<VarT<T>>);                                          \
    template VarT<T> slice_ch<T>(VarT<T>, int64_t, int64_t);                                      \
    template VarT<T> bchw_to_tokens<T>(VarT<T>);                                                  \
    template VarT<T> tokens_to_bchw<T>(VarT<T>, int64_t, int64_t);                                \
    template VarT<T> concat_tokens<T>(VarT<T>, VarT<T>);                                          \
    template VarT<T> slice_tokens<T>(VarT<T>, int64_t, int64_t);                                  \
    template VarT<T> split_heads<T>(VarT<T>, int64_t);                                            \
    template VarT<T> merge_heads<T>(VarT<T>, int64_t);                                            \
    template VarT<T> transpose_01<T>(VarT<T>);                                                    \
    template VarT<T> repeat_batch<T>(VarT<T>, int64_t);                                           \
    template VarT<T> upsample_nearest2<T>(VarT<T>);                                               \
    template VarT<T> linear<T>(VarT<T>, VarT<T>, VarT<T>);                                        \
    template VarT<T> bmm<T>(VarT<T>, VarT<T>);                                                    \
    template VarT<T> bmm_nt<T>(VarT<T>, VarT<T>);                                                 \
    template VarT<T> conv2d<T>(VarT<T>, VarT<T>, VarT<T>, int, int);                              \
    template VarT<T> group_norm<T>(VarT<T>, VarT<T>, VarT<T>, int, double);                       \
    template VarT<T> softmax_last<T>(VarT<T>);                                                    \
    template VarT<T> multihead_attention<T>(VarT<T>, VarT<T>, VarT<T>, VarT<T>, VarT<T>,          \
                                            VarT<T>, VarT<T>, VarT<T>, VarT<T>, VarT<T>,          \
                                            int64_t);                                             \
    template VarT<T> mean_all<T>(VarT<T>);                                                        \
    template VarT<T> sum_all<T>(VarT<T>);                                                         \
    template VarT<T> mse<T>(VarT<T>, VarT<T>);                                                    \
    template VarT<T> add_channel_bias<T>(VarT<T>, VarT<T>);

RGBD_INSTANTIATE(float)
RGBD_INSTANTIATE(double)

}  // namespace nn
}  // namespace rgbd
