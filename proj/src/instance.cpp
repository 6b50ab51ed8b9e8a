#include "pat/instance.hpp"

#include <atomic>
#include <exception>
#include <thread>

namespace pat {

std::vector<std::string> TargetInstance::style_texts() const {
    std::vector<std::string> out;
    for (const auto& s : context.style_texts) out.push_back(s.text);
    return out;
}

std::vector<std::string> TargetInstance::topic_texts() const {
    std::vector<std::string> out;
    for (const auto& t : context.topic_texts) out.push_back(t.text);
    return out;
}

std::string TargetInstance::key() const {
    return target.user_id + "/" + target.topic_id + "/" + std::to_string(index);
}

std::vector<TargetInstance> make_instances(const corpus::Dataset& ds, const graph::BipartiteGraph& g,
                                           const graph::EmbeddingIndex& idx, const retrieval::RetrievalConfig& cfg,
                                           corpus::Split split) {
    std::vector<TargetInstance> out;
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const auto& e = ds.entries[i];
        if (e.split != split) continue;
        TargetInstance inst;
        inst.index = i;
        inst.target = e;
        for (const auto& h : corpus::history_of(ds, e.user_id, {corpus::Split::train})) {
            if (h.text.find(e.text) == std::string::npos) inst.history_texts.push_back(h.text);
        }
        inst.context = retrieval::build_aux_context(g, idx, e.user_id, e.topic_id, cfg, e.text);
        out.push_back(std::move(inst));
    }
    return out;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, n); ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace pat
