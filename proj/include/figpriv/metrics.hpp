#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/agents.hpp"
#include "figpriv/geometry.hpp"
#include "figpriv/pipeline.hpp"

namespace figpriv {

inline double masked_percentage(const BinaryMask& mask) {
    if (mask.size() == 0) throw DataError("masked_percentage on an empty mask");
    return 100.0 * static_cast<double>(mask.popcount()) / static_cast<double>(mask.size());
}

struct StrategyRow {
    std::string image;
    std::map<std::string, double> masked_percentage;  // strategy name -> percent
};

struct StrategyReport {
    std::vector<StrategyRow> rows;
    std::map<std::string, double> mean_masked_percentage;
    // Percentage points of image content that high-risk masking preserves
    // over full-object masking.
    double preserved_delta = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json rows_json = nlohmann::json::array();
        for (const auto& row : rows) {
            nlohmann::json entry{{"image", row.image}};
            for (const auto& [strategy, pct] : row.masked_percentage) entry[strategy] = pct;
            rows_json.push_back(entry);
        }
        return nlohmann::json{{"rows", rows_json},
                              {"means", mean_masked_percentage},
                              {"preserved_delta", preserved_delta}};
    }

    std::string to_csv() const {
        std::string out = "image,strategy,masked_percentage\n";
        for (const auto& row : rows)
            for (const auto& [strategy, pct] : row.masked_percentage) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.10g", pct);
                out += row.image + "," + strategy + "," + buf + "\n";
            }
        return out;
    }
};

// Cross-strategy comparison over manifests grouped by input image. Every
// image must carry the same strategy set; order of the input list does not
// matter.
inline StrategyReport compare_strategies(const std::vector<nlohmann::json>& manifests) {
    if (manifests.empty()) throw DataError("no manifests to compare");
    std::map<std::string, std::map<std::string, double>> grouped;
    for (const auto& doc : manifests) {
        if (!doc.contains("input") || !doc.contains("strategy") ||
            !doc.contains("masked_percentage"))
            throw DataError("manifest missing input/strategy/masked_percentage");
        grouped[doc.at("input").get<std::string>()][doc.at("strategy").get<std::string>()] =
            doc.at("masked_percentage").get<double>();
    }
    std::set<std::string> strategy_set;
    for (const auto& [image, per_strategy] : grouped)
        for (const auto& [strategy, pct] : per_strategy) strategy_set.insert(strategy);
    for (const auto& [image, per_strategy] : grouped)
        for (const auto& strategy : strategy_set)
            if (!per_strategy.count(strategy))
                throw DataError("image '" + image + "' is missing a manifest for strategy '" +
                                strategy + "'");

    StrategyReport report;
    for (const auto& [image, per_strategy] : grouped) {
        StrategyRow row;
        row.image = image;
        row.masked_percentage = per_strategy;
        report.rows.push_back(std::move(row));
    }
    for (const auto& strategy : strategy_set) {
        double sum = 0.0;
        for (const auto& row : report.rows) sum += row.masked_percentage.at(strategy);
        report.mean_masked_percentage[strategy] = sum / static_cast<double>(report.rows.size());
    }
    auto object = report.mean_masked_percentage.find(strategy_name(MaskStrategy::object));
    auto high = report.mean_masked_percentage.find(strategy_name(MaskStrategy::high_risk));
    if (object != report.mean_masked_percentage.end() &&
        high != report.mean_masked_percentage.end())
        report.preserved_delta = object->second - high->second;
    return report;
}

// Evaluation-only probes; they reuse the agents' yes-likelihood contract
// and in CI only ever run against the mock backend.

inline double recognition_probe(const Image& image, const std::string& category,
                                AgentBackend& backend) {
    std::string prompt = expand_template(prompts::recognition, {{"private object", category}});
    return yes_probability(image, prompt, backend);
}

inline double answerability_probe(const Image& image, const std::string& question,
                                  AgentBackend& backend) {
    std::string prompt = expand_template(prompts::answerability, {{"question", question}});
    return yes_probability(image, prompt, backend);
}

struct ProbeRow {
    std::string category;
    std::string question;
    double probability = 0.0;
};

// Batch answerability over a question file: JSON list of
// {category, question}.
inline std::vector<ProbeRow> answerability_batch(const Image& image,
                                                 const nlohmann::json& questions,
                                                 AgentBackend& backend) {
    if (!questions.is_array()) throw DataError("question file must be a JSON array");
    std::vector<ProbeRow> rows;
    for (const auto& q : questions) {
        ProbeRow row;
        row.category = q.value("category", std::string());
        row.question = q.at("question").get<std::string>();
        row.probability = answerability_probe(image, row.question, backend);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace figpriv
