#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mosformer/tensor.hpp"

namespace mosf {

// Named parameter registry. Registration order is the canonical order for
// checkpoints and optimizer state, so it must be deterministic.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool learnable = true;
    };

    Tensor<T>& add(const std::string& name, Tensor<T> t, bool learnable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        t.set_requires_grad(learnable);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t), learnable});
        return entries_.back().tensor;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
        return entries_[it->second].tensor;
    }
    const Tensor<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<Tensor<T>> learnable(const std::string& prefix = "") const {
        std::vector<Tensor<T>> out;
        for (const auto& e : entries_)
            if (e.learnable && e.name.rfind(prefix, 0) == 0) out.push_back(e.tensor);
        return out;
    }

    void set_learnable_requires_grad(const std::string& prefix, bool value) {
        for (auto& e : entries_)
            if (e.learnable && e.name.rfind(prefix, 0) == 0) e.tensor.set_requires_grad(value);
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mosf
