#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stroke/rng.hpp"
#include "stroke/tape.hpp"
#include "stroke/tensor.hpp"

namespace stroke {

/// Named model parameter. `grad` persists across tape lifetimes; `bound` is
/// the parameter's node on the current step's tape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;  // optimizer moments, sized on first step
    bool trainable = true;
    Value bound{};
};

/// Owns parameters in stable storage; iteration order = creation order, which
/// fixes the initialization and update order for determinism.
class ParamStore {
public:
    Parameter& create(const std::string& name, std::vector<int64_t> shape);
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    Parameter* find(const std::string& name);
    void remove(const std::string& name);

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<std::string> names() const;

    int64_t total_count() const;
    int64_t trainable_count() const;

    void zero_grads();
    void set_all_trainable(bool t);

    /// Creates one tape leaf per parameter (requires_grad = trainable) and
    /// records it in Parameter::bound.
    void bind(Tape& tape);
    /// p.grad += tape grad for every trainable parameter bound on this tape.
    void accumulate_grads(const Tape& tape);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, Parameter*> by_name_;
};

/// Truncated-normal(sigma) fill for projection weights; draws consume the Rng
/// in element order.
void init_trunc_normal(Tensor& t, Rng& rng, double sigma = 0.02);

/// Adaptive moment estimation over the trainable subset of a store.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<Parameter*> params);
    int64_t t() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace stroke
