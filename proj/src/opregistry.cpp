#include "rgbd/opregistry.hpp"

#include <algorithm>
#include <cmath>

namespace rgbd {
namespace nn {

namespace {

struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& m) : std::runtime_error("lookup error: " + m) {}
};

void register_builtin(OpRegistry& r) {
    using V = std::vector<VarD>;

    r.add("add", [](const V& in) { return add(in[0], in[1]); }, {{2, 3, 4}, {2, 3, 4}});
    r.add("sub", [](const V& in) { return sub(in[0], in[1]); }, {{2, 3, 4}, {2, 3, 4}});
    r.add("mul", [](const V& in) { return mul(in[0], in[1]); }, {{2, 3, 4}, {2, 3, 4}});
    r.add("scale", [](const V& in) { return scale(in[0], 0.73); }, {{3, 5}});
    r.add("add_scalar", [](const V& in) { return add_scalar(in[0], -0.31); }, {{3, 5}});
    r.add("silu", [](const V& in) { return silu(in[0]); }, {{2, 3, 4}});
    r.add("sigmoid", [](const V& in) { return sigmoid(in[0]); }, {{2, 3, 4}});
    r.add("tanh", [](const V& in) { return tanh_act(in[0]); }, {{2, 3, 4}});
    r.add("exp", [](const V& in) { return exp_act(in[0]); }, {{2, 3, 4}});
    r.add("reshape",
          [](const V& in) { return reshape(in[0], {in[0]->value.numel()}); }, {{2, 3, 4}});
    r.add("concat_ch", [](const V& in) { return concat_ch<double>({in[0], in[1]}); },
          {{1, 2, 3, 3}, {1, 3, 3, 3}});
    r.add("slice_ch",
          [](const V& in) {
              int64_t c = in[0]->value.shape[1];
              return slice_ch(in[0], c / 4, c / 4 + c / 2);
          },
          {{1, 4, 2, 2}});
    r.add("bchw_to_tokens", [](const V& in) { return bchw_to_tokens(in[0]); }, {{1, 3, 2, 2}});
    r.add("tokens_to_bchw",
          [](const V& in) {
              int64_t n = in[0]->value.shape[1];
              int64_t h = (int64_t)std::llround(std::sqrt((double)n));
              return tokens_to_bchw(in[0], h, n / h);
          },
          {{1, 4, 3}});
    r.add("concat_tokens", [](const V& in) { return concat_tokens(in[0], in[1]); },
          {{1, 3, 4}, {1, 2, 4}});
    r.add("slice_tokens",
          [](const V& in) {
              int64_t n = in[0]->value.shape[1];
              return slice_tokens(in[0], n / 2, n);
          },
          {{1, 5, 4}});
    r.add("split_heads", [](const V& in) { return split_heads(in[0], 2); }, {{2, 3, 8}});
    r.add("merge_heads", [](const V& in) { return merge_heads(in[0], 2); }, {{4, 3, 4}});
    r.add("transpose_01", [](const V& in) { return transpose_01(in[0]); }, {{2, 3, 4}});
    r.add("repeat_batch", [](const V& in) { return repeat_batch(in[0], 3); }, {{1, 2, 3}});
    r.add("upsample_nearest2", [](const V& in) { return upsample_nearest2(in[0]); },
          {{1, 2, 3, 3}});
    r.add("linear", [](const V& in) { return linear(in[0], in[1], in[2]); },
          {{5, 7}, {3, 7}, {3}});
    r.add("matmul", [](const V& in) { return bmm(in[0], in[1]); }, {{3, 4, 5}, {3, 5, 6}});
    r.add("matmul_nt", [](const V& in) { return bmm_nt(in[0], in[1]); }, {{3, 4, 5}, {3, 6, 5}});
    r.add("conv2d", [](const V& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
          {{1, 2, 5, 5}, {3, 2, 3, 3}, {3}});
    r.add("conv2d_s2", [](const V& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
          {{1, 3, 6, 6}, {4, 3, 3, 3}, {4}});
    r.add("group_norm", [](const V& in) { return group_norm(in[0], in[1], in[2], 8, 1e-5); },
          {{2, 16, 3, 3}, {16}, {16}});
    r.add("softmax", [](const V& in) { return softmax_last(in[0]); }, {{2, 3, 5}});
    r.add("cross_attention",
          [](const V& in) {
              return multihead_attention(in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7],
                                         in[8], in[9], 2);
          },
          {{1, 4, 8}, {1, 5, 8}, {8, 8}, {8}, {8, 8}, {8}, {8, 8}, {8}, {8, 8}, {8}});
    r.add("mean", [](const V& in) { return mean_all(in[0]); }, {{3, 4}});
    r.add("sum", [](const V& in) { return sum_all(in[0]); }, {{3, 4}});
    r.add("mse", [](const V& in) { return mse(in[0], in[1]); }, {{2, 6}, {2, 6}});
    r.add("add_channel_bias", [](const V& in) { return add_channel_bias(in[0], in[1]); },
          {{2, 4, 3, 3}, {2, 4}});
}

}  // namespace

OpRegistry& OpRegistry::instance() {
    static OpRegistry reg = [] {
        OpRegistry r;
        register_builtin(r);
        return r;
    }();
    return reg;
}

void OpRegistry::add(const std::string& name, Builder build,
                     std::vector<std::vector<int64_t>> default_shapes) {
    entries_[name] = Entry{std::move(build), std::move(default_shapes)};
}

const OpRegistry::Entry& OpRegistry::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw LookupError("unregistered op name: " + name);
    return it->second;
}

std::vector<std::string> OpRegistry::names() const {
    std::vector<std::string> out;
    for (auto& [k, v] : entries_) out.push_back(k);
    return out;
}

GradCheckReport grad_check(const std::string& op_name,
                           const std::vector<std::vector<int64_t>>& input_shapes, uint64_t seed) {
    const auto& entry = OpRegistry::instance().get(op_name);
    Rng rng(seed ^ fnv1a64(op_name));

    std::vector<VarD> inputs;
    for (const auto& s : input_shapes)
        inputs.push_back(make_leaf<double>(randn_tensor<double>(s, rng, 0.5), true));

    // scalar objective: sum(w * op(inputs)) with fixed random weights
    auto run = [&](bool with_grad) -> VarD {
        std::vector<VarD> ins;
        for (auto& v : inputs) ins.push_back(make_leaf<double>(v->value, with_grad));
        auto out = entry.build(ins);
        if (with_grad)
            for (size_t i = 0; i < inputs.size(); i++) inputs[i] = ins[i];
        return out;
    };

    VarD out0 = run(true);
    TensorD w = randn_tensor<double>(out0->value.shape, rng, 1.0);
    auto loss_of = [&](const VarD& out) {
        return sum_all(mul(out, make_leaf<double>(w, false)));
    };
    auto loss = loss_of(out0);
    backward(loss);

    GradCheckReport rep;
    rep.op = op_name;
    rep.seed = seed;

    const int64_t max_per_input = 512;
    for (size_t ii = 0; ii < inputs.size(); ii++) {
        auto& in = inputs[ii];
        int64_t n = in->value.numel();
        std::vector<int64_t> idx;
        if (n <= max_per_input) {
            idx.resize((size_t)n);
            for (int64_t i = 0; i < n; i++) idx[(size_t)i] = i;
        } else {
            rep.subsampled = true;
            Rng pick(seed * 1315423911ULL + ii);
            for (int64_t i = 0; i < max_per_input; i++) idx.push_back(pick.randint(0, n - 1));
            std::sort(idx.begin(), idx.end());
            idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        }
        NoGradGuard ng;
        std::vector<std::pair<double, double>> pairs;  // (finite-difference, analytic)
        for (int64_t i : idx) {
            double x0 = in->value[i];
            double h = 1e-5 * std::max(1.0, std::abs(x0));
            in->value[i] = x0 + h;
            double fp = loss_of(run(false))->value[0];
            in->value[i] = x0 - h;
            double fm = loss_of(run(false))->value[0];
            in->value[i] = x0;
            double fd = (fp - fm) / (2.0 * h);
            double an = in->has_grad ? in->grad[i] : 0.0;
            pairs.emplace_back(fd, an);
        }
        // Error relative to this input's gradient scale, so near-zero entries
        // are not dominated by finite-difference roundoff.
        double gmax = 0;
        for (auto& [fd, an] : pairs) gmax = std::max({gmax, std::abs(fd), std::abs(an)});
        for (auto& [fd, an] : pairs) {
            rep.elements_checked++;
            // both sides agree the gradient is zero to finite-difference
            // resolution (an exactly-zero gradient is legitimate, e.g. a
            // softmax-shift-invariant bias)
            if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
            double denom = std::max({std::abs(fd), std::abs(an), 1e-3 * gmax, 1e-7});
            rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - an) / denom);
        }
    }
    return rep;
}

GradCheckReport grad_check(const std::string& op_name, uint64_t seed) {
    return grad_check(op_name, OpRegistry::instance().get(op_name).default_shapes, seed);
}

}  // namespace nn
}  // namespace rgbd
