#include "pat/stylegraph.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>

namespace pat::graph {

std::vector<std::string> BipartiteGraph::topics_of(const std::string& user) const {
    std::vector<std::string> out;
    for (auto it = edges.lower_bound({user, ""}); it != edges.end() && it->first == user; ++it) {
        out.push_back(it->second);
    }
    return out;
}

std::vector<std::string> BipartiteGraph::users_of(const std::string& topic) const {
    std::vector<std::string> out;
    for (const auto& [u, t] : edges) {
        if (t == topic) out.push_back(u);
    }
    return out;
}

BipartiteGraph build_graph(const corpus::Dataset& ds, corpus::SplitSet splits) {
    BipartiteGraph g;
    for (const auto& e : ds.entries) {
        if (!splits.contains(e.split)) continue;
        g.users.insert(e.user_id);
        g.topics.insert(e.topic_id);
        EdgeKey key{e.user_id, e.topic_id};
        g.edges.insert(key);
        g.edge_texts[key].push_back(e.text);
        AuthoredText at{e.user_id, e.topic_id, e.text};
        g.user_texts[e.user_id].push_back(at);
        g.topic_texts[e.topic_id].push_back(std::move(at));
    }
    return g;
}

// ---------------------------------------------------------------------------
// vector helpers

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector normalized(Vector v) {
    const double n = l2_norm(v);
    if (n == 0.0) return v;
    for (double& x : v) x /= n;
    return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------
// encoders

std::vector<Vector> Encoder::encode_batch(std::span<const std::string> texts) const {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(encode(t));
    return out;
}

TrigramEncoder::TrigramEncoder(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("encoder dim must be positive");
}

std::vector<std::string> TrigramEncoder::trigrams(const std::string& text) {
    const std::string framed = "\x02" + text + "\x03";
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 3 <= framed.size(); ++i) out.push_back(framed.substr(i, 3));
    return out;
}

std::size_t TrigramEncoder::bucket(const std::string& trigram) const {
    // FNV-1a, 64-bit
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : trigram) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h % dim_);
}

Vector TrigramEncoder::encode(const std::string& text) const {
    if (text.empty()) throw Error("cannot encode empty text");
    Vector v(dim_, 0.0);
    for (const auto& tri : trigrams(text)) v[bucket(tri)] += 1.0;
    return normalized(std::move(v));
}

RemoteEncoder::RemoteEncoder(std::string endpoint, std::size_t dim, http::RetryPolicy policy)
    : endpoint_(std::move(endpoint)), dim_(dim), policy_(policy) {}

Vector RemoteEncoder::encode(const std::string& text) const {
    return encode_batch(std::span<const std::string>(&text, 1)).front();
}

std::vector<Vector> RemoteEncoder::encode_batch(std::span<const std::string> texts) const {
    for (const auto& t : texts) {
        if (t.empty()) throw Error("cannot encode empty text");
    }
    nlohmann::json req;
    req["input"] = std::vector<std::string>(texts.begin(), texts.end());
    const nlohmann::json reply = http::post_json(endpoint_, req, policy_);
    const auto& data = reply.at("data");
    if (!data.is_array() || data.size() != texts.size()) {
        throw http::EndpointError(200, "embedding reply has " + std::to_string(data.size()) + " rows, expected " +
                                           std::to_string(texts.size()));
    }
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& row : data) {
        Vector v = row.at("embedding").get<Vector>();
        if (v.size() != dim_) {
            throw http::EndpointError(200, "embedding has dim " + std::to_string(v.size()) + ", expected " +
                                               std::to_string(dim_));
        }
        out.push_back(normalized(std::move(v)));
    }
    return out;
}

std::unique_ptr<Encoder> make_encoder(const EncoderRef& ref) {
    if (ref.kind == EncoderKind::remote) {
        if (!ref.endpoint) throw ConfigError("remote encoder requires an endpoint");
        return std::make_unique<RemoteEncoder>(*ref.endpoint, ref.dim);
    }
    return std::make_unique<TrigramEncoder>(ref.dim);
}

// ---------------------------------------------------------------------------
// embeddings

namespace {

Vector mean_of(const std::vector<Vector>& rows, std::size_t dim) {
    Vector m(dim, 0.0);
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < dim; ++i) m[i] += r[i];
    }
    for (double& x : m) x /= static_cast<double>(rows.size());
    return m;
}

}  // namespace

EmbeddingIndex init_embeddings(const BipartiteGraph& g, const Encoder& enc) {
    EmbeddingIndex idx;
    idx.dim = enc.dim();
    idx.layers = 0;

    // Encode each distinct text once, in sorted order.
    std::map<std::string, Vector> cache;
    for (const auto& [key, texts] : g.edge_texts) {
        for (const auto& t : texts) cache.emplace(t, Vector{});
    }
    std::vector<std::string> distinct;
    distinct.reserve(cache.size());
    for (const auto& [t, _] : cache) distinct.push_back(t);
    auto encoded = enc.encode_batch(distinct);
    for (std::size_t i = 0; i < distinct.size(); ++i) cache[distinct[i]] = std::move(encoded[i]);

    auto pooled = [&](const std::vector<AuthoredText>& texts) {
        std::vector<Vector> rows;
        rows.reserve(texts.size());
        for (const auto& at : texts) rows.push_back(cache.at(at.text));
        return normalized(mean_of(rows, idx.dim));
    };
    for (const auto& u : g.users) {
        auto it = g.user_texts.find(u);
        idx.user_vec[u] = it == g.user_texts.end() ? Vector(idx.dim, 0.0) : pooled(it->second);
    }
    for (const auto& t : g.topics) {
        auto it = g.topic_texts.find(t);
        idx.topic_vec[t] = it == g.topic_texts.end() ? Vector(idx.dim, 0.0) : pooled(it->second);
    }
    return idx;
}

EmbeddingIndex propagate(const EmbeddingIndex& idx, const BipartiteGraph& g, std::size_t layers) {
    EmbeddingIndex cur = idx;
    std::map<std::string, std::vector<std::string>> user_nbrs;
    std::map<std::string, std::vector<std::string>> topic_nbrs;
    for (const auto& [u, t] : g.edges) {
        user_nbrs[u].push_back(t);
        topic_nbrs[t].push_back(u);
    }

    auto step = [&](const std::map<std::string, Vector>& self, const std::map<std::string, Vector>& other,
                    const std::map<std::string, std::vector<std::string>>& nbrs) {
        std::map<std::string, Vector> next;
        for (const auto& [id, v] : self) {
            auto it = nbrs.find(id);
            Vector agg(cur.dim, 0.0);
            if (it == nbrs.end() || it->second.empty()) {
                agg = v;
            } else {
                for (const auto& n : it->second) {
                    const Vector& nv = other.at(n);
                    for (std::size_t i = 0; i < cur.dim; ++i) agg[i] += nv[i];
                }
                for (double& x : agg) x /= static_cast<double>(it->second.size());
            }
            Vector out(cur.dim);
            for (std::size_t i = 0; i < cur.dim; ++i) out[i] = 0.5 * v[i] + 0.5 * agg[i];
            next.emplace(id, normalized(std::move(out)));
        }
        return next;
    };

    for (std::size_t k = 0; k < layers; ++k) {
        auto users = step(cur.user_vec, cur.topic_vec, user_nbrs);
        auto topics = step(cur.topic_vec, cur.user_vec, topic_nbrs);
        cur.user_vec = std::move(users);
        cur.topic_vec = std::move(topics);
    }
    cur.layers = idx.layers + layers;
    return cur;
}

Vector user_vector(const EmbeddingIndex& idx, const std::string& user, const std::string& target_topic) {
    if (auto it = idx.user_vec.find(user); it != idx.user_vec.end()) return it->second;
    if (auto it = idx.topic_vec.find(target_topic); it != idx.topic_vec.end()) return it->second;
    return Vector(idx.dim, 0.0);
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr char kMagic[8] = {'P', 'A', 'T', 'E', 'M', 'B', 'I', 'X'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IndexFormatError("embedding index truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_index(const EmbeddingIndex& idx, const std::string& path, const EncoderRef& enc) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kIndexVersion);
    put_u32(out, static_cast<std::uint32_t>(idx.dim));
    put_u32(out, static_cast<std::uint32_t>(idx.layers));
    put_u64(out, idx.user_vec.size());
    put_u64(out, idx.topic_vec.size());
    for (const auto* table : {&idx.user_vec, &idx.topic_vec}) {
        for (const auto& [id, _] : *table) {
            put_u32(out, static_cast<std::uint32_t>(id.size()));
            out += id;
        }
    }
    for (const auto* table : {&idx.user_vec, &idx.topic_vec}) {
        for (const auto& [id, v] : *table) {
            if (v.size() != idx.dim) throw IndexFormatError("vector for " + id + " has wrong length");
            for (double x : v) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        }
    }
    write_file(path, out);

    nlohmann::ordered_json meta;
    meta["format"] = "pat-embedding-index";
    meta["version"] = kIndexVersion;
    meta["dim"] = idx.dim;
    meta["layers"] = idx.layers;
    meta["n_users"] = idx.user_vec.size();
    meta["n_topics"] = idx.topic_vec.size();
    meta["encoder"] = {{"kind", enc.kind == EncoderKind::remote ? "remote" : "local_deterministic"},
                       {"dim", enc.dim}};
    if (enc.endpoint) meta["encoder"]["endpoint"] = *enc.endpoint;
    meta["sha256"] = sha256_hex(out);
    write_file(path + ".json", meta.dump(2) + "\n");
}

EmbeddingIndex load_index(const std::string& path) {
    const std::string bytes = read_file(path);
    Reader r(bytes);
    if (r.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw IndexFormatError("bad magic in " + path);
    const auto version = r.uint(4);
    if (version != kIndexVersion) throw IndexFormatError("unsupported index version " + std::to_string(version));
    EmbeddingIndex idx;
    idx.dim = r.uint(4);
    idx.layers = r.uint(4);
    const auto n_users = r.uint(8);
    const auto n_topics = r.uint(8);
    std::vector<std::string> user_ids, topic_ids;
    for (std::uint64_t i = 0; i < n_users; ++i) user_ids.push_back(r.take(r.uint(4)));
    for (std::uint64_t i = 0; i < n_topics; ++i) topic_ids.push_back(r.take(r.uint(4)));
    auto read_row = [&] {
        Vector v(idx.dim);
        for (auto& x : v) x = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
        return normalized(std::move(v));
    };
    for (const auto& id : user_ids) idx.user_vec[id] = read_row();
    for (const auto& id : topic_ids) idx.topic_vec[id] = read_row();
    if (!r.done()) throw IndexFormatError("trailing bytes in " + path);
    return idx;
}

}  // namespace pat::graph
