#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pat/corpus.hpp"
#include "pat/http.hpp"

namespace pat::graph {

using Vector = std::vector<double>;
using EdgeKey = std::pair<std::string, std::string>;  // (user, topic)

/// A text with its author and topic, kept in dataset order.
struct AuthoredText {
    std::string author;
    std::string topic;
    std::string text;

    bool operator==(const AuthoredText&) const = default;
};

/// User–topic bipartite graph. An edge (u, t) exists iff u wrote at least one
/// text about t under the split filter used to build it.
struct BipartiteGraph {
    std::set<std::string> users;
    std::set<std::string> topics;
    std::set<EdgeKey> edges;
    std::map<EdgeKey, std::vector<std::string>> edge_texts;

    // Dataset-order projections of edge_texts.
    std::map<std::string, std::vector<AuthoredText>> user_texts;
    std::map<std::string, std::vector<AuthoredText>> topic_texts;

    std::vector<std::string> topics_of(const std::string& user) const;
    std::vector<std::string> users_of(const std::string& topic) const;
};

BipartiteGraph build_graph(const corpus::Dataset& ds, corpus::SplitSet splits);

enum class EncoderKind { local_deterministic, remote };

struct EncoderRef {
    EncoderKind kind = EncoderKind::local_deterministic;
    std::optional<std::string> endpoint;
    std::size_t dim = 256;
};

/// Text -> unit-norm vector of length dim.
class Encoder {
public:
    virtual ~Encoder() = default;
    virtual std::size_t dim() const = 0;
    virtual Vector encode(const std::string& text) const = 0;
    /// Default implementation encodes one text at a time.
    virtual std::vector<Vector> encode_batch(std::span<const std::string> texts) const;
};

/// Hashed character-trigram bag, L2-normalized. The text is framed with
/// start/end sentinels so every non-empty text has at least one trigram.
class TrigramEncoder final : public Encoder {
public:
    explicit TrigramEncoder(std::size_t dim = 256);
    std::size_t dim() const override { return dim_; }
    Vector encode(const std::string& text) const override;

    /// The framed trigrams of a text, in order. Exposed for tests.
    static std::vector<std::string> trigrams(const std::string& text);
    std::size_t bucket(const std::string& trigram) const;

private:
    std::size_t dim_;
};

/// POST {"input": [...]} -> {"data": [{"embedding": [...]}, ...]}.
class RemoteEncoder final : public Encoder {
public:
    RemoteEncoder(std::string endpoint, std::size_t dim, http::RetryPolicy policy = {});
    std::size_t dim() const override { return dim_; }
    Vector encode(const std::string& text) const override;
    std::vector<Vector> encode_batch(std::span<const std::string> texts) const override;

private:
    std::string endpoint_;
    std::size_t dim_;
    http::RetryPolicy policy_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderRef& ref);

/// Node vectors of both sides of the graph. Every vector has length dim and
/// is unit-norm or exactly zero.
struct EmbeddingIndex {
    std::size_t dim = 0;
    std::map<std::string, Vector> user_vec;
    std::map<std::string, Vector> topic_vec;
    std::size_t layers = 0;

    bool operator==(const EmbeddingIndex&) const = default;
};

/// Returns v / ||v||, or v unchanged when it is exactly zero.
Vector normalized(Vector v);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
/// Cosine similarity; 0 when either side is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Mean-pooled, re-normalized encodings of each node's texts (layer 0).
EmbeddingIndex init_embeddings(const BipartiteGraph& g, const Encoder& enc);

/// Parameter-free mean-aggregator propagation:
/// v <- normalize(0.5 * v + 0.5 * mean(neighbors)), applied `layers` times.
/// Isolated nodes are their own neighbor mean.
EmbeddingIndex propagate(const EmbeddingIndex& idx, const BipartiteGraph& g, std::size_t layers);

/// Query-time user vector. Users without train history fall back to the
/// target topic's vector, then to zero.
Vector user_vector(const EmbeddingIndex& idx, const std::string& user, const std::string& target_topic);

class IndexFormatError : public Error {
public:
    using Error::Error;
};

/// Binary layout (little-endian):
///   magic "PATEMBIX", u32 version, u32 dim, u32 layers, u64 n_users, u64 n_topics,
///   id table (u32 length + bytes; users then topics, each sorted),
///   float32 rows in id-table order.
/// A JSON sidecar at `path + ".json"` carries the same header fields.
void save_index(const EmbeddingIndex& idx, const std::string& path, const EncoderRef& enc);
/// Rows are re-normalized after the float32 round trip.
EmbeddingIndex load_index(const std::string& path);

inline constexpr std::uint32_t kIndexVersion = 1;

}  // namespace pat::graph
