#ifndef RGBD_OPS_HPP
#define RGBD_OPS_HPP

#include "rgbd/autograd.hpp"

namespace rgbd {
namespace nn {

// Elementwise
template <typename T> VarT<T> add(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> sub(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> mul(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> scale(VarT<T> a, double c);
template <typename T> VarT<T> add_scalar(VarT<T> a, double c);
template <typename T> VarT<T> silu(VarT<T> x);
template <typename T> VarT<T> sigmoid(VarT<T> x);
template <typename T> VarT<T> tanh_act(VarT<T> x);
template <typename T> VarT<T> exp_act(VarT<T> x);

// Structure
template <typename T> VarT<T> reshape(VarT<T> x, std::vector<int64_t> shape);
template <typename T> VarT<T> concat_ch(std::vector<VarT<T>> parts);
template <typename T> VarT<T> slice_ch(VarT<T> x, int64_t c0, int64_t c1);
template <typename T> VarT<T> bchw_to_tokens(VarT<T> x);
template <typename T> VarT<T> tokens_to_bchw(VarT<T> x, int64_t h, int64_t w);
template <typename T> VarT<T> concat_tokens(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> slice_tokens(VarT<T> x, int64_t n0, int64_t n1);
template <typename T> VarT<T> split_heads(VarT<T> x, int64_t heads);
template <typename T> VarT<T> merge_heads(VarT<T> x, int64_t heads);
template <typename T> VarT<T> transpose_01(VarT<T> x);  // [A,B,C] -> [B,A,C]
template <typename T> VarT<T> repeat_batch(VarT<T> x, int64_t times);
template <typename T> VarT<T> upsample_nearest2(VarT<T> x);

// Linear algebra
template <typename T> VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> b);
template <typename T> VarT<T> bmm(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> bmm_nt(VarT<T> a, VarT<T> b);
template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, VarT<T> b, int stride, int padding);

// Normalization / attention
template <typename T>
VarT<T> group_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, int groups, double eps);
template <typename T> VarT<T> softmax_last(VarT<T> x);
template <typename T>
VarT<T> multihead_attention(VarT<T> q_tokens, VarT<T> kv_tokens, VarT<T> wq, VarT<T> bq,
                            VarT<T> wk, VarT<T> bk, VarT<T> wv, VarT<T> bv, VarT<T> wo,
                            VarT<T> bo, int64_t heads);

// Reductions / losses / broadcast
template <typename T> VarT<T> mean_all(VarT<T> x);
template <typename T> VarT<T> sum_all(VarT<T> x);
template <typename T> VarT<T> mse(VarT<T> a, VarT<T> b);
template <typename T> VarT<T> add_channel_bias(VarT<T> x, VarT<T> t);

// Non-graph reference kernel for tests lives in tests/; this is the only
// conv entry point the library itself uses.

}  // namespace nn
}  // namespace rgbd

#endif
