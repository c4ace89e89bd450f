#ifndef RGBD_OPREGISTRY_HPP
#define RGBD_OPREGISTRY_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rgbd/ops.hpp"

namespace rgbd {
namespace nn {

// Registry of every differentiable operation used anywhere in the project,
// in extended (double) precision, so the finite-difference checker can cover
// each one. Composite ops (attention) register their built-from-primitives
// form.
class OpRegistry {
public:
    using Builder = std::function<VarD(const std::vector<VarD>&)>;
    struct Entry {
        Builder build;
        std::vector<std::vector<int64_t>> default_shapes;
    };

    static OpRegistry& instance();

    void add(const std::string& name, Builder build,
             std::vector<std::vector<int64_t>> default_shapes);
    const Entry& get(const std::string& name) const;  // throws on unknown name
    std::vector<std::string> names() const;

private:
    OpRegistry() = default;
    std::map<std::string, Entry> entries_;
};

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
    int64_t elements_checked = 0;
    bool subsampled = false;
    uint64_t seed = 0;
};

// Central finite differences against the analytic backward pass, extended
// precision, inputs drawn from `seed`. Inputs larger than 512 elements are
// subsampled (seeded; reported in the result).
GradCheckReport grad_check(const std::string& op_name,
                           const std::vector<std::vector<int64_t>>& input_shapes, uint64_t seed);
GradCheckReport grad_check(const std::string& op_name, uint64_t seed);

}  // namespace nn
}  // namespace rgbd

#endif
