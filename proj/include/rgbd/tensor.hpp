#ifndef RGBD_TENSOR_HPP
#define RGBD_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "rgbd/common.hpp"
#include "rgbd/rng.hpp"

namespace rgbd {

// Dense row-major tensor. T is float for training, double for the
// gradient checker.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign((size_t)numel_of(shape), T(0));
    }
    TensorT(std::vector<int64_t> s, T fill) : shape(std::move(s)) {
        data.assign((size_t)numel_of(shape), fill);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            require(d > 0, "tensor extents must be positive, got " + std::to_string(d));
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return (int64_t)data.size(); }
    int rank() const { return (int)shape.size(); }
    int64_t dim(int i) const { return shape[(size_t)i]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[(size_t)i]; }
    const T& operator[](int64_t i) const { return data[(size_t)i]; }

    // 4-d accessor, the workhorse layout [B, C, H, W]
    T& at4(int64_t b, int64_t c, int64_t h, int64_t w) {
        return data[(size_t)(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T at4(int64_t b, int64_t c, int64_t h, int64_t w) const {
        return data[(size_t)(((b * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[(size_t)((i * shape[1] + j) * shape[2] + k)];
    }
    T at3(int64_t i, int64_t j, int64_t k) const {
        return data[(size_t)((i * shape[1] + j) * shape[2] + k)];
    }
    T& at2(int64_t i, int64_t j) { return data[(size_t)(i * shape[1] + j)]; }
    T at2(int64_t i, int64_t j) const { return data[(size_t)(i * shape[1] + j)]; }

    TensorT reshaped(std::vector<int64_t> s) const {
        require(numel_of(s) == numel(), "reshape changes element count");
        TensorT out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); i++) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); i++) out.data[i] = (U)data[i];
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
TensorT<T> randn_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = (T)(rng.normal() * scale);
    return t;
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* ctx) {
    for (size_t i = 0; i < t.data.size(); i++) {
        if (!std::isfinite((double)t.data[i]))
            throw NumericError(strf("non-finite value at flat index %zu in %s", i, ctx));
    }
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), "max_abs_diff shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double m = 0;
    for (int64_t i = 0; i < a.numel(); i++) m = std::max(m, std::abs((double)a[i] - (double)b[i]));
    return m;
}

// rank-3 [C,H,W] channel helpers used by the samplers
inline Tensor cat_channels(const std::vector<const Tensor*>& parts) {
    require(!parts.empty(), "cat_channels: empty list");
    int64_t h = parts[0]->shape[1], w = parts[0]->shape[2], c = 0;
    for (auto* p : parts) {
        require(p->rank() == 3 && p->shape[1] == h && p->shape[2] == w,
                "cat_channels: mismatched spatial axes");
        c += p->shape[0];
    }
    Tensor out({c, h, w});
    int64_t off = 0;
    for (auto* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
        off += p->numel();
    }
    return out;
}

inline Tensor slice_channels(const Tensor& t, int64_t c0, int64_t c1) {
    require(t.rank() == 3 && 0 <= c0 && c0 < c1 && c1 <= t.shape[0],
            "slice_channels: bad channel range");
    int64_t hw = t.shape[1] * t.shape[2];
    Tensor out({c1 - c0, t.shape[1], t.shape[2]});
    std::copy(t.data.begin() + c0 * hw, t.data.begin() + c1 * hw, out.data.begin());
    return out;
}

inline Tensor unsqueeze0(const Tensor& t) {
    std::vector<int64_t> s = {1};
    s.insert(s.end(), t.shape.begin(), t.shape.end());
    return t.reshaped(s);
}

inline Tensor squeeze0(const Tensor& t) {
    require(t.rank() >= 2 && t.shape[0] == 1, "squeeze0 needs leading extent 1");
    return t.reshaped({t.shape.begin() + 1, t.shape.end()});
}

}  // namespace rgbd

#endif
