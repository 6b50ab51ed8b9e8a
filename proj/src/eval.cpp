#include "pat/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace pat::eval {

std::optional<int> parse_judge_score(std::string_view reply) {
    std::size_t i = 0;
    while (i < reply.size()) {
        while (i < reply.size() && std::isspace(static_cast<unsigned char>(reply[i]))) ++i;
        std::size_t j = i;
        while (j < reply.size() && !std::isspace(static_cast<unsigned char>(reply[j]))) ++j;
        std::string_view tok = reply.substr(i, j - i);
        while (!tok.empty() && !std::isdigit(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
        std::size_t k = 0;
        if (!tok.empty() && (tok[0] == '+' || tok[0] == '-')) k = 1;
        bool numeric = k < tok.size();
        for (std::size_t c = k; c < tok.size(); ++c) numeric = numeric && std::isdigit(static_cast<unsigned char>(tok[c]));
        if (numeric) {
            if (tok.size() - k > 3) return std::nullopt;
            const int v = std::stoi(std::string(tok));
            if (v < 1 || v > 7) return std::nullopt;
            return v;
        }
        i = j;
    }
    return std::nullopt;
}

int judge(const agents::ChatClient& client, std::string_view target, std::string_view generated,
          const agents::ModelRef& judge_model, std::size_t max_tokens, std::size_t reasks) {
    const auto prompt = agents::build_judge_prompt(target, generated);
    std::string last;
    for (std::size_t attempt = 0; attempt <= reasks; ++attempt) {
        last = agents::greedy(client, judge_model, prompt, max_tokens, attempt);
        if (auto score = parse_judge_score(last)) return *score;
    }
    throw JudgeError("judge " + judge_model.id + " gave no score in 1..7 after " + std::to_string(reasks) +
                     " re-asks; last reply: " + last);
}

Generation generate_for_instance(const agents::ChatClient& client, const TargetInstance& inst, Variant variant,
                                 const EvalModels& models, std::size_t max_tokens) {
    const auto& m = variant == Variant::zero_shot ? models.base : models.tuned;
    const bool want_style = variant != Variant::no_style && variant != Variant::no_both;
    const bool want_topic = variant != Variant::no_topic && variant != Variant::no_both;
    const auto style_texts = inst.style_texts();
    const auto topic_texts = inst.topic_texts();

    Generation g;
    std::string s, p;
    if (want_style) {
        const auto parsed = agents::parse_summary(
            agents::greedy(client, m.style, agents::build_style_prompt(style_texts, inst.history_texts), max_tokens),
            agents::kStyleMarker);
        s = parsed.text;
        g.marker_warnings += parsed.marker_missing ? 1 : 0;
    }
    if (want_topic) {
        const auto parsed = agents::parse_summary(
            agents::greedy(client, m.topic, agents::build_topic_prompt(topic_texts), max_tokens), agents::kTopicMarker);
        p = parsed.text;
        g.marker_warnings += parsed.marker_missing ? 1 : 0;
    }
    g.prompt = agents::build_gen_prompt(inst.target.prompt, s, p, style_texts, topic_texts, variant);
    const auto out = agents::parse_generation(agents::greedy(client, m.generator, g.prompt, max_tokens));
    g.text = out.text;
    g.marker_warnings += out.marker_missing ? 1 : 0;
    return g;
}

// ---------------------------------------------------------------------------
// aggregation

std::optional<double> delta_pct(const metrics::MetricReport& ours, const metrics::MetricReport& baseline) {
    const double o[] = {ours.rouge1_f, ours.rougeL_f, ours.meteor};
    const double b[] = {baseline.rouge1_f, baseline.rougeL_f, baseline.meteor};
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        if (b[i] == 0.0) continue;
        sum += (o[i] - b[i]) / b[i];
        ++n;
    }
    if (n == 0) return std::nullopt;
    return 100.0 * sum / n;
}

Aggregate aggregate(const std::vector<const EvalRecord*>& records) {
    Aggregate a;
    a.records = records.size();
    double r1 = 0.0, rl = 0.0, me = 0.0, js = 0.0;
    std::size_t ok = 0;
    for (const auto* r : records) {
        if (r->error) {
            ++a.failed;
            continue;
        }
        ++ok;
        r1 += r->metrics.rouge1_f;
        rl += r->metrics.rougeL_f;
        me += r->metrics.meteor;
        if (r->judge_score) {
            js += *r->judge_score;
            ++a.judge_scored;
        }
        if (r->judge_failed) ++a.judge_failed;
    }
    if (ok > 0) {
        const double n = static_cast<double>(ok);
        a.mean = {r1 / n, rl / n, me / n};
    }
    if (a.judge_scored > 0) a.judge_mean = js / static_cast<double>(a.judge_scored);
    return a;
}

EvalReport build_report(std::vector<EvalRecord> records, const EvalConfig& cfg, nlohmann::ordered_json config_echo) {
    EvalReport rep;
    rep.variants = cfg.variants;
    rep.baseline = cfg.baseline;
    rep.config = std::move(config_echo);
    rep.records = std::move(records);

    auto has_variant = [&](Variant v) {
        return std::find(rep.variants.begin(), rep.variants.end(), v) != rep.variants.end();
    };
    auto gain = [&](const std::map<Variant, Aggregate>& by) -> std::optional<double> {
        if (!has_variant(Variant::full) || !has_variant(rep.baseline) || rep.baseline == Variant::full) return {};
        const auto& ours = by.at(Variant::full);
        const auto& base = by.at(rep.baseline);
        if (ours.records == ours.failed || base.records == base.failed) return {};
        return delta_pct(ours.mean, base.mean);
    };

    for (const auto& r : rep.records) {
        rep.marker_warnings += r.marker_warnings;
        rep.generation_failures += r.error ? 1 : 0;
        rep.judge_failures += r.judge_failed ? 1 : 0;
    }
    for (Variant v : rep.variants) {
        std::vector<const EvalRecord*> sel;
        for (const auto& r : rep.records) {
            if (r.variant == v) sel.push_back(&r);
        }
        rep.overall[v] = aggregate(sel);
    }
    rep.delta_pct = gain(rep.overall);

    for (std::size_t s = 0; s < cfg.strata.size(); ++s) {
        StratumRow row;
        row.history_len = cfg.strata[s];
        row.open_ended = s + 1 == cfg.strata.size();
        auto in_stratum = [&](std::size_t h) { return row.open_ended ? h >= row.history_len : h == row.history_len; };
        std::size_t total = 0, failed = 0;
        for (Variant v : rep.variants) {
            std::vector<const EvalRecord*> sel;
            for (const auto& r : rep.records) {
                if (r.variant == v && in_stratum(r.history_len)) sel.push_back(&r);
            }
            auto a = aggregate(sel);
            total += a.records;
            failed += a.failed;
            row.variants[v] = a;
        }
        row.present = total > 0;
        row.fully_failed = row.present && failed == total;
        if (row.present) row.delta_pct = gain(row.variants);
        rep.strata.push_back(std::move(row));
    }
    return rep;
}

EvalReport evaluate(const agents::ChatClient& client, const corpus::Dataset& ds,
                    const std::vector<TargetInstance>& instances, const EvalConfig& cfg, const EvalModels& models,
                    nlohmann::ordered_json config_echo) {
    const std::size_t nv = cfg.variants.size();
    std::vector<EvalRecord> records(instances.size() * nv);
    parallel_for(records.size(), cfg.max_in_flight, [&](std::size_t k) {
        const auto& inst = instances[k / nv];
        auto& rec = records[k];
        rec.user = inst.target.user_id;
        rec.topic = inst.target.topic_id;
        rec.history_len = corpus::history_size(ds, rec.user);
        rec.variant = cfg.variants[k % nv];
        rec.reference = inst.target.text;
        try {
            auto g = generate_for_instance(client, inst, rec.variant, models, cfg.max_tokens);
            rec.generated = std::move(g.text);
            rec.marker_warnings = g.marker_warnings;
            rec.metrics = metrics::score_all(rec.generated, rec.reference);
        } catch (const Error& e) {
            rec.error = e.what();
            spdlog::warn("evaluation of {} ({}) failed: {}", inst.key(), agents::to_string(rec.variant), e.what());
            return;
        }
        if (!models.judge) return;
        try {
            rec.judge_score = judge(client, rec.reference, rec.generated, *models.judge, 16, cfg.judge_reasks);
        } catch (const Error& e) {
            rec.judge_failed = true;
            spdlog::warn("judge for {} ({}) failed: {}", inst.key(), agents::to_string(rec.variant), e.what());
        }
    });
    return build_report(std::move(records), cfg, std::move(config_echo));
}

bool any_stratum_failed(const EvalReport& report) {
    return std::any_of(report.strata.begin(), report.strata.end(), [](const StratumRow& s) { return s.fully_failed; });
}

ReportFormat parse_report_format(std::string_view s) {
    if (s == "table") return ReportFormat::table;
    if (s == "json") return ReportFormat::json;
    throw ConfigError("unknown report format: " + std::string(s));
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr const char* kSchema = "pat-eval-report";
constexpr int kSchemaVersion = 1;

template <typename T>
nlohmann::ordered_json opt(const std::optional<T>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<T>();
}

nlohmann::ordered_json metrics_json(const metrics::MetricReport& m) {
    return {{"rouge1", m.rouge1_f}, {"rougeL", m.rougeL_f}, {"meteor", m.meteor}};
}

metrics::MetricReport metrics_from(const nlohmann::json& j) {
    return {j.at("rouge1").get<double>(), j.at("rougeL").get<double>(), j.at("meteor").get<double>()};
}

nlohmann::ordered_json aggregate_json(const Aggregate& a) {
    nlohmann::ordered_json j;
    j["records"] = a.records;
    j["failed"] = a.failed;
    j["mean"] = metrics_json(a.mean);
    j["mean_x100"] = metrics_json({100.0 * a.mean.rouge1_f, 100.0 * a.mean.rougeL_f, 100.0 * a.mean.meteor});
    j["judge_mean"] = opt(a.judge_mean);
    j["judge_mean_div10"] = a.judge_mean ? nlohmann::ordered_json(*a.judge_mean / 10.0) : nlohmann::ordered_json(nullptr);
    j["judge_scored"] = a.judge_scored;
    j["judge_failed"] = a.judge_failed;
    return j;
}

Aggregate aggregate_from(const nlohmann::json& j) {
    Aggregate a;
    a.records = j.at("records");
    a.failed = j.at("failed");
    a.mean = metrics_from(j.at("mean"));
    a.judge_mean = opt_from<double>(j.at("judge_mean"));
    a.judge_scored = j.at("judge_scored");
    a.judge_failed = j.at("judge_failed");
    return a;
}

nlohmann::ordered_json by_variant_json(const std::vector<Variant>& order, const std::map<Variant, Aggregate>& by) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (Variant v : order) j[std::string(agents::to_string(v))] = aggregate_json(by.at(v));
    return j;
}

std::map<Variant, Aggregate> by_variant_from(const nlohmann::json& j) {
    std::map<Variant, Aggregate> out;
    for (const auto& [k, v] : j.items()) out[agents::parse_variant(k)] = aggregate_from(v);
    return out;
}

std::string fixed(double v, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string pad(std::string s, std::size_t w, bool left = true) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string signed_pct(const std::optional<double>& d) {
    if (!d) return "n/a";
    return (*d >= 0 ? "+" : "") + fixed(*d, 2) + "%";
}

std::string stratum_label(const StratumRow& s) {
    return std::to_string(s.history_len) + (s.open_ended && s.history_len > 0 ? "+" : "");
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    j["schema"] = kSchema;
    j["version"] = kSchemaVersion;
    j["notes"] = {"METEOR is the exact-match variant (no stemming or synonyms); comparable within this tool only",
                  "judge_mean is the raw 1-7 mean; judge_mean_div10 is the 0.1-0.7 normalization"};
    j["variants"] = nlohmann::ordered_json::array();
    for (Variant v : rep.variants) j["variants"].push_back(agents::to_string(v));
    j["baseline"] = agents::to_string(rep.baseline);
    j["overall"] = by_variant_json(rep.variants, rep.overall);
    j["delta_pct"] = opt(rep.delta_pct);
    j["strata"] = nlohmann::ordered_json::array();
    for (const auto& s : rep.strata) {
        nlohmann::ordered_json row;
        row["history_len"] = s.history_len;
        row["open_ended"] = s.open_ended;
        row["present"] = s.present;
        row["fully_failed"] = s.fully_failed;
        row["delta_pct"] = opt(s.delta_pct);
        row["variants"] = s.present ? by_variant_json(rep.variants, s.variants) : nlohmann::ordered_json(nullptr);
        j["strata"].push_back(std::move(row));
    }
    j["warnings"] = {{"marker_missing", rep.marker_warnings},
                     {"generation_failures", rep.generation_failures},
                     {"judge_failures", rep.judge_failures}};
    j["config"] = rep.config;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : rep.records) {
        nlohmann::ordered_json rec;
        rec["user"] = r.user;
        rec["topic"] = r.topic;
        rec["history_len"] = r.history_len;
        rec["variant"] = agents::to_string(r.variant);
        rec["generated"] = r.generated;
        rec["reference"] = r.reference;
        rec["metrics"] = metrics_json(r.metrics);
        rec["judge_score"] = opt(r.judge_score);
        rec["judge_failed"] = r.judge_failed;
        rec["error"] = opt(r.error);
        rec["marker_warnings"] = r.marker_warnings;
        j["records"].push_back(std::move(rec));
    }
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != kSchema) throw Error("not a pat-eval-report document");
    if (j.at("version").get<int>() != kSchemaVersion) {
        throw Error("unsupported report version " + std::to_string(j.at("version").get<int>()));
    }
    EvalReport rep;
    for (const auto& v : j.at("variants")) rep.variants.push_back(agents::parse_variant(v.get<std::string>()));
    rep.baseline = agents::parse_variant(j.at("baseline").get<std::string>());
    rep.overall = by_variant_from(j.at("overall"));
    rep.delta_pct = opt_from<double>(j.at("delta_pct"));
    for (const auto& row : j.at("strata")) {
        StratumRow s;
        s.history_len = row.at("history_len");
        s.open_ended = row.at("open_ended");
        s.present = row.at("present");
        s.fully_failed = row.at("fully_failed");
        s.delta_pct = opt_from<double>(row.at("delta_pct"));
        if (s.present) s.variants = by_variant_from(row.at("variants"));
        rep.strata.push_back(std::move(s));
    }
    const auto& w = j.at("warnings");
    rep.marker_warnings = w.at("marker_missing");
    rep.generation_failures = w.at("generation_failures");
    rep.judge_failures = w.at("judge_failures");
    rep.config = j.at("config");
    for (const auto& rec : j.at("records")) {
        EvalRecord r;
        r.user = rec.at("user");
        r.topic = rec.at("topic");
        r.history_len = rec.at("history_len");
        r.variant = agents::parse_variant(rec.at("variant").get<std::string>());
        r.generated = rec.at("generated");
        r.reference = rec.at("reference");
        r.metrics = metrics_from(rec.at("metrics"));
        r.judge_score = opt_from<int>(rec.at("judge_score"));
        r.judge_failed = rec.at("judge_failed");
        r.error = opt_from<std::string>(rec.at("error"));
        r.marker_warnings = rec.at("marker_warnings");
        rep.records.push_back(std::move(r));
    }
    return rep;
}

std::string render_report(const EvalReport& rep, ReportFormat format) {
    if (format == ReportFormat::json) return to_json(rep).dump(2) + "\n";

    std::string out;
    out += "PaT evaluation report (" + std::string(kSchema) + " v" + std::to_string(kSchemaVersion) + ")\n";
    out += "METEOR: exact-match variant, no stemming or synonyms. Judge: raw 1-7 mean, Judge/10 = 0.1-0.7 scale.\n\n";

    auto metric_cells = [](const Aggregate& a, bool x100) {
        const double k = x100 ? 100.0 : 1.0;
        const int prec = x100 ? 2 : 4;
        return pad(fixed(k * a.mean.rouge1_f, prec), 9, false) + pad(fixed(k * a.mean.rougeL_f, prec), 9, false) +
               pad(fixed(k * a.mean.meteor, prec), 9, false);
    };

    out += pad("Variant", 11) + pad("n", 5, false) + pad("failed", 8, false) + pad("ROUGE-1", 9, false) +
           pad("ROUGE-L", 9, false) + pad("METEOR", 9, false) + pad("Judge", 8, false) + pad("Judge/10", 10, false) +
           "\n";
    for (Variant v : rep.variants) {
        const auto& a = rep.overall.at(v);
        out += pad(std::string(agents::to_string(v)), 11) + pad(std::to_string(a.records), 5, false) +
               pad(std::to_string(a.failed), 8, false) + metric_cells(a, false) +
               pad(a.judge_mean ? fixed(*a.judge_mean, 2) : "n/a", 8, false) +
               pad(a.judge_mean ? fixed(*a.judge_mean / 10.0, 3) : "n/a", 10, false) + "\n";
    }
    out += "Delta% full vs " + std::string(agents::to_string(rep.baseline)) + ": " + signed_pct(rep.delta_pct) +
           "\n\n";

    out += "By history length (metric x100 in the right block)\n";
    out += pad("# History", 11) + pad("Variant", 11) + pad("n", 5, false) + pad("ROUGE-1", 9, false) +
           pad("ROUGE-L", 9, false) + pad("METEOR", 9, false) + pad("R-1", 9, false) + pad("R-L", 9, false) +
           pad("MET", 9, false) + pad("Delta%", 10, false) + "\n";
    for (const auto& s : rep.strata) {
        if (!s.present) {
            out += pad(stratum_label(s), 11) + "absent\n";
            continue;
        }
        bool first = true;
        for (Variant v : rep.variants) {
            const auto& a = s.variants.at(v);
            out += pad(first ? stratum_label(s) : "", 11) + pad(std::string(agents::to_string(v)), 11) +
                   pad(std::to_string(a.records - a.failed), 5, false) + metric_cells(a, false) +
                   metric_cells(a, true) + pad(first ? signed_pct(s.delta_pct) : "", 10, false) + "\n";
            first = false;
        }
        if (s.fully_failed) out += pad("", 11) + "every record in this stratum failed\n";
    }
    out += "\nWarnings: marker_missing=" + std::to_string(rep.marker_warnings) +
           " generation_failures=" + std::to_string(rep.generation_failures) +
           " judge_failures=" + std::to_string(rep.judge_failures) + "\n";
    return out;
}

}  // namespace pat::eval
