#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "pat/corpus.hpp"
#include "pat/instance.hpp"
#include "pat/retrieval.hpp"
#include "pat/stylegraph.hpp"

namespace testing {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "pat") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string str(const std::string& rel = {}) const { return rel.empty() ? path_.string() : (path_ / rel).string(); }

private:
    fs::path path_;
};

struct Pipeline {
    pat::corpus::Dataset ds;
    pat::graph::BipartiteGraph graph;
    pat::graph::EmbeddingIndex index;
    pat::retrieval::RetrievalConfig cfg;

    std::vector<pat::TargetInstance> instances(pat::corpus::Split split) const {
        return pat::make_instances(ds, graph, index, cfg, split);
    }
};

inline Pipeline make_pipeline(pat::corpus::Dataset ds, std::size_t layers = 2) {
    Pipeline p;
    p.ds = std::move(ds);
    p.graph = pat::graph::build_graph(p.ds, {pat::corpus::Split::train});
    pat::graph::TrigramEncoder enc;
    p.index = pat::graph::propagate(pat::graph::init_embeddings(p.graph, enc), p.graph, layers);
    return p;
}

inline Pipeline synthetic_pipeline(std::uint64_t seed, std::size_t users, std::size_t topics,
                                   const pat::corpus::SparsityHistogram& hist,
                                   pat::corpus::Task task = pat::corpus::Task::long_text) {
    return make_pipeline(pat::corpus::generate_synthetic(seed, users, topics, hist, task));
}

// 96% of users with at most one train entry.
inline pat::corpus::SparsityHistogram sparse_histogram(std::size_t users) {
    const std::size_t low = users - users * 4 / 100;
    return {{0, low / 2}, {1, low - low / 2}, {2, users - low}};
}

// Random corpus (at most 160 users and 40 topics) with forced ties: a few
// extra users are exact copies of existing ones.
inline Pipeline random_corpus(std::mt19937_64& rng) {
    const std::size_t users = 5 + rng() % 150;
    const std::size_t topics = 1 + rng() % 40;
    pat::corpus::SparsityHistogram hist;
    std::size_t left = users;
    for (std::size_t h = 0; left > 0; ++h) {
        const std::size_t n = h == 3 ? left : rng() % (left + 1);
        if (n) hist[h] += n;
        left -= n;
    }
    auto ds = pat::corpus::generate_synthetic(rng(), users, topics, hist);
    const std::size_t clones = rng() % 5;
    const auto ids = ds.users();
    for (std::size_t c = 0; c < clones; ++c) {
        const auto& src = ids[rng() % ids.size()];
        for (const auto& e : pat::corpus::history_of(ds, src, {pat::corpus::Split::train})) {
            auto copy = e;
            copy.user_id = "clone" + std::to_string(c);
            ds.entries.push_back(copy);
        }
    }
    return make_pipeline(std::move(ds), rng() % 3);
}

}  // namespace testing
