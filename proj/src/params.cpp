#include "stroke/params.hpp"

#include <algorithm>
#include <cmath>

#include "stroke/errors.hpp"

namespace stroke {

Parameter& ParamStore::create(const std::string& name, std::vector<int64_t> shape) {
    if (has(name)) throw Error("parameter already exists: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor::zeros(std::move(shape));
    p->grad = Tensor::zeros(p->value.shape());
    Parameter& ref = *p;
    params_.push_back(std::move(p));
    by_name_[name] = &ref;
    return ref;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("no such parameter: " + name);
    return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("no such parameter: " + name);
    return *it->second;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

void ParamStore::remove(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return;
    Parameter* target = it->second;
    by_name_.erase(it);
    params_.erase(std::remove_if(params_.begin(), params_.end(),
                                 [target](const std::unique_ptr<Parameter>& p) { return p.get() == target; }),
                  params_.end());
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p->name);
    return out;
}

int64_t ParamStore::total_count() const {
    int64_t n = 0;
    for (auto& p : params_) n += p->value.size();
    return n;
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (auto& p : params_)
        if (p->trainable) n += p->value.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p->grad.zero();
}

void ParamStore::set_all_trainable(bool t) {
    for (auto& p : params_) p->trainable = t;
}

void ParamStore::bind(Tape& tape) {
    for (auto& p : params_) p->bound = tape.leaf(p->value, p->trainable);
}

void ParamStore::accumulate_grads(const Tape& tape) {
    for (auto& p : params_) {
        if (!p->trainable || !p->bound.valid()) continue;
        const Tensor& g = tape.grad(p->bound);
        double* dst = p->grad.data();
        const double* src = g.data();
        for (int64_t i = 0; i < p->grad.size(); ++i) dst[i] += src[i];
    }
}

void init_trunc_normal(Tensor& t, Rng& rng, double sigma) {
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.trunc_normal(sigma);
}

void Adam::step(std::vector<Parameter*> params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        if (p->m.size() != p->value.size()) {
            p->m = Tensor::zeros(p->value.shape());
            p->v = Tensor::zeros(p->value.shape());
        }
        double* w = p->value.data();
        const double* g = p->grad.data();
        double* m = p->m.data();
        double* v = p->v.data();
        for (int64_t i = 0; i < p->value.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace stroke
