#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pat/common.hpp"

namespace pat::metrics {

/// Lowercases ASCII, splits on Unicode whitespace, strips leading/trailing
/// punctuation from each token and drops empty tokens.
std::vector<std::string> tokenize(std::string_view text);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Prf rouge1(std::string_view candidate, std::string_view reference);
Prf rougeL(std::string_view candidate, std::string_view reference);

/// Length of the longest common subsequence of two token sequences.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Exact-match METEOR: greedy left-to-right unigram alignment, F_mean with
/// recall weighted 9:1, fragmentation penalty 0.5 * (chunks / matches)^3.
/// No stemming or synonym matching.
double meteor(std::string_view candidate, std::string_view reference);

struct MetricReport {
    double rouge1_f = 0.0;
    double rougeL_f = 0.0;
    double meteor = 0.0;

    bool operator==(const MetricReport&) const = default;
};

MetricReport score_all(std::string_view candidate, std::string_view reference);

enum class RewardKind { rougeL, mean_of_three };

struct RewardSpec {
    RewardKind kind = RewardKind::rougeL;
    double tie_epsilon = 1e-9;
};

RewardKind parse_reward_kind(std::string_view s);
std::string_view to_string(RewardKind k);

double reward(std::string_view candidate, std::string_view reference, const RewardSpec& spec = {});

}  // namespace pat::metrics
