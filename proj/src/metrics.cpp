#include "pat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pat::metrics {

namespace {

// Decodes one UTF-8 code point at `pos`; a truncated sequence decodes as its
// lead byte.
char32_t decode(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xf0) {
        len = 4;
        cp = b0 & 0x07u;
    } else if (b0 >= 0xe0) {
        len = 3;
        cp = b0 & 0x0fu;
    } else if (b0 >= 0xc0) {
        len = 2;
        cp = b0 & 0x1fu;
    }
    if (pos + len > s.size()) {
        ++pos;
        return b0;
    }
    for (std::size_t i = 1; i < len; ++i) cp = (cp << 6) | (static_cast<unsigned char>(s[pos + i]) & 0x3fu);
    pos += len;
    return cp;
}

bool is_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0d) || c == 0x20 || c == 0x85 || c == 0xa0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200a) || c == 0x2028 || c == 0x2029 || c == 0x202f || c == 0x205f || c == 0x3000;
}

bool is_punct(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
               (c >= 0x7b && c <= 0x7e);
    }
    return c == 0xa1 || c == 0xa7 || c == 0xab || c == 0xb6 || c == 0xb7 || c == 0xbb || c == 0xbf ||
           (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205e) || (c >= 0x3001 && c <= 0x3003) ||
           (c >= 0x3008 && c <= 0x3011);
}

struct CodePoint {
    char32_t cp;
    std::size_t begin;
    std::size_t end;
};

void flush(std::string_view text, std::vector<CodePoint>& word, std::vector<std::string>& out) {
    std::size_t lo = 0;
    std::size_t hi = word.size();
    while (lo < hi && is_punct(word[lo].cp)) ++lo;
    while (hi > lo && is_punct(word[hi - 1].cp)) --hi;
    if (lo < hi) {
        std::string tok(text.substr(word[lo].begin, word[hi - 1].end - word[lo].begin));
        for (char& ch : tok) {
            if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        }
        out.push_back(std::move(tok));
    }
    word.clear();
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::vector<CodePoint> word;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t begin = pos;
        const char32_t cp = decode(text, pos);
        if (is_space(cp)) {
            flush(text, word, out);
        } else {
            word.push_back({cp, begin, pos});
        }
    }
    flush(text, word, out);
    return out;
}

Prf rouge1(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty() || ref.empty()) return {};
    std::map<std::string_view, std::size_t> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    std::size_t overlap = 0;
    for (const auto& t : cand) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    Prf out;
    out.precision = static_cast<double>(overlap) / static_cast<double>(cand.size());
    out.recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

Prf rougeL(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty() || ref.empty()) return {};
    const auto lcs = static_cast<double>(lcs_length(cand, ref));
    Prf out;
    out.precision = lcs / static_cast<double>(cand.size());
    out.recall = lcs / static_cast<double>(ref.size());
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

double meteor(std::string_view candidate, std::string_view reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    if (cand.empty() || ref.empty()) return 0.0;

    std::vector<bool> used(ref.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> alignment;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!used[j] && cand[i] == ref[j]) {
                used[j] = true;
                alignment.emplace_back(i, j);
                break;
            }
        }
    }
    const auto m = static_cast<double>(alignment.size());
    if (alignment.empty()) return 0.0;

    std::size_t chunks = 0;
    for (std::size_t k = 0; k < alignment.size(); ++k) {
        const bool continues = k > 0 && alignment[k].first == alignment[k - 1].first + 1 &&
                               alignment[k].second == alignment[k - 1].second + 1;
        if (!continues) ++chunks;
    }
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    return f_mean * (1.0 - penalty);
}

MetricReport score_all(std::string_view candidate, std::string_view reference) {
    return {rouge1(candidate, reference).f1, rougeL(candidate, reference).f1, meteor(candidate, reference)};
}

RewardKind parse_reward_kind(std::string_view s) {
    if (s == "rougeL") return RewardKind::rougeL;
    if (s == "mean_of_three") return RewardKind::mean_of_three;
    throw ConfigError("unknown reward kind: " + std::string(s));
}

std::string_view to_string(RewardKind k) { return k == RewardKind::rougeL ? "rougeL" : "mean_of_three"; }

double reward(std::string_view candidate, std::string_view reference, const RewardSpec& spec) {
    if (spec.kind == RewardKind::rougeL) return rougeL(candidate, reference).f1;
    const auto m = score_all(candidate, reference);
    return (m.rouge1_f + m.rougeL_f + m.meteor) / 3.0;
}

}  // namespace pat::metrics
