#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pat/common.hpp"

namespace pat::corpus {

enum class Split : std::uint8_t { train, validation, test };
enum class Task : std::uint8_t { long_text, short_text };

std::string_view to_string(Split s);
std::string_view to_string(Task t);
Split parse_split(std::string_view s);
Task parse_task(std::string_view s);

/// Small set of splits used as a filter.
class SplitSet {
public:
    constexpr SplitSet() = default;
    constexpr SplitSet(std::initializer_list<Split> splits) {
        for (Split s : splits) bits_ |= bit(s);
    }
    static constexpr SplitSet all() { return {Split::train, Split::validation, Split::test}; }

    constexpr bool contains(Split s) const { return (bits_ & bit(s)) != 0; }

private:
    static constexpr std::uint8_t bit(Split s) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(s)); }
    std::uint8_t bits_ = 0;
};

/// One (x, y) pair written by a user about a topic.
struct HistoryEntry {
    std::string user_id;
    std::string topic_id;
    std::string prompt;  // x
    std::string text;    // y
    Split split = Split::train;

    bool operator==(const HistoryEntry&) const = default;
};

/// Entries in file order. Immutable once built.
struct Dataset {
    std::vector<HistoryEntry> entries;
    Task task = Task::long_text;

    /// Distinct user ids in first-appearance order.
    std::vector<std::string> users() const;
};

/// Malformed input line (bad JSON).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Well-formed JSON that violates the record schema.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

Dataset ingest_corpus(const std::string& path, Task task);
Dataset parse_corpus(std::string_view jsonl, Task task);

/// Canonical JSONL: one record per line, keys user_id, topic_id, prompt, text, split.
std::string serialize(const Dataset& ds);
std::string serialize_entry(const HistoryEntry& e);

std::vector<HistoryEntry> history_of(const Dataset& ds, std::string_view user, SplitSet splits);

/// Number of train-split entries of a user.
std::size_t history_size(const Dataset& ds, std::string_view user);

/// Histogram over per-user train history sizes: size -> number of users.
using SparsityHistogram = std::map<std::size_t, std::size_t>;

/// Deterministic desk-scale corpus. Every user gets `h` train entries (h drawn
/// from the histogram), one validation entry and one test entry. Each user
/// belongs to a latent style group whose marker words and punctuation habit
/// appear in all of the user's texts; each topic has a latent attribute word
/// embedded in every text about it.
Dataset generate_synthetic(std::uint64_t seed, std::size_t n_users, std::size_t n_topics,
                           const SparsityHistogram& sparsity, Task task = Task::long_text);

/// Latent tokens of a synthetic corpus, recomputed from the same arguments.
struct SyntheticLatents {
    std::map<std::string, std::string> user_style;      // user id -> style marker word
    std::map<std::string, std::string> topic_attribute;  // topic id -> attribute word
};
SyntheticLatents synthetic_latents(std::uint64_t seed, std::size_t n_users, std::size_t n_topics,
                                   const SparsityHistogram& sparsity);

/// Parses "0:5,1:5" into a histogram.
SparsityHistogram parse_sparsity(std::string_view spec);

}  // namespace pat::corpus
