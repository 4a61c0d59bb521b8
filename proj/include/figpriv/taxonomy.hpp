#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/graph.hpp"
#include "figpriv/scoring.hpp"

namespace figpriv {

struct PrivateCategory {
    std::string name;
    std::vector<std::string> synonym_nodes;
    std::vector<std::string> pii_types;

    bool operator==(const PrivateCategory&) const = default;
};

// Private-object category table: which ecosystem nodes stand in for a
// category and which PII types its instances typically contain. Lookup is
// case/whitespace-normalized. Immutable after load.
class CategoryTable {
public:
    static CategoryTable from_json(const nlohmann::json& doc) {
        if (!doc.is_array()) throw DataError("category table must be a JSON array");
        CategoryTable table;
        for (const auto& item : doc) {
            PrivateCategory cat;
            try {
                cat.name = item.at("name").get<std::string>();
                cat.synonym_nodes = item.at("synonym_nodes").get<std::vector<std::string>>();
                cat.pii_types = item.at("pii_types").get<std::vector<std::string>>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError(std::string("malformed category entry: ") + e.what());
            }
            if (cat.name.empty()) throw DataError("category with empty name");
            dedupe_check(cat.synonym_nodes, cat.name, "synonym_nodes");
            dedupe_check(cat.pii_types, cat.name, "pii_types");
            std::string key = normalize_id(cat.name);
            if (!table.categories_.emplace(key, std::move(cat)).second)
                throw DataError("duplicate category name: " + key);
        }
        return table;
    }

    static CategoryTable load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open category table: " + path.string());
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("invalid category table " + path.string() + ": " + e.what());
        }
        return from_json(doc);
    }

    // The bundled default table covering the sixteen dataset categories
    // (plus id card).
    static const CategoryTable& builtin() {
        static const CategoryTable table = from_json(nlohmann::json::parse(builtin_json()));
        return table;
    }

    static const char* builtin_json();

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [key, cat] : categories_) {
            (void)key;
            arr.push_back({{"name", cat.name},
                           {"synonym_nodes", cat.synonym_nodes},
                           {"pii_types", cat.pii_types}});
        }
        return arr;
    }

    bool contains(std::string_view name) const {
        return categories_.count(normalize_id(name)) > 0;
    }

    const PrivateCategory& at(std::string_view name) const {
        auto it = categories_.find(normalize_id(name));
        if (it == categories_.end())
            throw DataError("unknown category: " + std::string(name));
        return it->second;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(categories_.size());
        for (const auto& [key, cat] : categories_) {
            (void)cat;
            out.push_back(key);
        }
        return out;
    }

    size_t size() const { return categories_.size(); }

    bool operator==(const CategoryTable& other) const {
        return categories_ == other.categories_;
    }

private:
    static void dedupe_check(std::vector<std::string>& list, const std::string& cat,
                             const char* field) {
        std::set<std::string> seen;
        for (const auto& entry : list) {
            if (!seen.insert(normalize_id(entry)).second)
                throw DataError("duplicate entry '" + entry + "' in " + field + " of category " +
                                cat);
        }
    }

    std::map<std::string, PrivateCategory> categories_;
};

struct HighRiskSet {
    std::string category;
    std::set<std::string> members;   // normalized PII ids, score >= threshold
    std::vector<std::string> unscored;  // PII in the table but absent from the scores
    double threshold = 0.0;
    std::string score_source;  // "<algorithm>/<channel>"

    bool contains(std::string_view pii) const {
        return members.count(normalize_id(pii)) > 0;
    }
};

// Synonym nodes of a category that actually exist in the graph, after id
// normalization on both sides.
inline std::vector<std::string> resolve_synonyms(const CategoryTable& table,
                                                 const EcosystemGraph& graph,
                                                 std::string_view category) {
    const PrivateCategory& cat = table.at(category);
    std::vector<std::string> present;
    for (const auto& syn : cat.synonym_nodes) {
        std::string id = normalize_id(syn);
        if (graph.find(id)) present.push_back(id);
    }
    return present;
}

// H_r(c): the PII types of the category whose risk score reaches tau.
// PII missing from the score vector count as unscored; by default they are
// excluded with a warning, strict_unscored flips to conservative inclusion.
inline HighRiskSet high_risk_for_category(const CategoryTable& table, const ScoreVector& scores,
                                          std::string_view category, double tau,
                                          bool strict_unscored = false) {
    if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
    const PrivateCategory& cat = table.at(category);
    HighRiskSet out;
    out.category = normalize_id(cat.name);
    out.threshold = tau;
    out.score_source =
        std::string(algorithm_name(scores.algorithm)) + "/" + channel_name(scores.channel);
    for (const auto& pii : cat.pii_types) {
        std::string id = normalize_id(pii);
        auto score = scores.find(id);
        if (!score) {
            out.unscored.push_back(id);
            if (strict_unscored) {
                out.members.insert(id);
            } else {
                warn("PII '" + id + "' of category '" + out.category +
                     "' has no risk score; excluded from the high-risk set");
            }
            continue;
        }
        if (*score >= tau) out.members.insert(id);
    }
    return out;
}

// Default threshold: the 60th percentile (linear interpolation) of all node
// scores. A placeholder policy; callers with real preferences pass tau.
inline double default_tau(const ScoreVector& scores) {
    if (scores.scores.empty()) throw DataError("default_tau on empty score vector");
    std::vector<double> values;
    values.reserve(scores.scores.size());
    for (const auto& [id, v] : scores.scores) values.push_back(v);
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    double rank = 0.6 * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(rank);
    double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

inline const char* CategoryTable::builtin_json() {
    return R"JSON([
  {"name": "bank statement",
   "synonym_nodes": ["bank account statement", "bank account information"],
   "pii_types": ["address", "bank account balance", "bank account number",
                 "bank account transfer amount", "date of birth", "email address",
                 "employment history", "medicaid reimbursement", "medical information",
                 "medicare reimbursement", "name", "personal identification number",
                 "routing number", "social security number", "tax refund", "username"]},
  {"name": "letter with address",
   "synonym_nodes": ["mail"],
   "pii_types": ["address", "name", "phone number", "signature"]},
  {"name": "credit or debit card",
   "synonym_nodes": ["bank card", "credit card", "credit card information", "debit card",
                     "debit card information"],
   "pii_types": ["bank card expiration date", "credit card number", "cvv code",
                 "debit card number", "name", "signature"]},
  {"name": "bills or receipt",
   "synonym_nodes": ["billing information", "billing statement", "finance invoice and receipt",
                     "invoice and/or receipt"],
   "pii_types": ["address", "bill paid", "credit card number", "customer account",
                 "customer account information", "date of birth", "email address",
                 "medical information", "name", "personal identification number", "signature"]},
  {"name": "preganancy test",
   "synonym_nodes": ["diagnosis", "medical record"],
   "pii_types": []},
  {"name": "pregnancy test box",
   "synonym_nodes": [],
   "pii_types": []},
  {"name": "mortage or investment report",
   "synonym_nodes": ["financial information", "financial statement", "loan application",
                     "loan information", "loan statement", "mortgage document"],
   "pii_types": ["account number", "address", "bank account number", "date of birth",
                 "email address", "employee record", "fund bank account",
                 "fund withdrawn from bank account", "name", "social security number"]},
  {"name": "doctor prescription",
   "synonym_nodes": ["medical information", "medical prescription", "medication prescription"],
   "pii_types": ["address", "date of birth", "diagnosis", "email address",
                 "medication prescribed", "name", "personal identification number"]},
  {"name": "empty pill bottle",
   "synonym_nodes": ["medical information", "medical record"],
   "pii_types": ["address", "date of birth", "diagnosis", "email address", "name",
                 "personal identification number"]},
  {"name": "condom with plastic bag",
   "synonym_nodes": [],
   "pii_types": []},
  {"name": "tattoo sleeve",
   "synonym_nodes": ["biometric data"],
   "pii_types": ["biometric data"]},
  {"name": "transcript",
   "synonym_nodes": ["student transcript"],
   "pii_types": ["address", "date of birth", "education level", "email address", "name",
                 "school attended"]},
  {"name": "business card",
   "synonym_nodes": ["employment information"],
   "pii_types": ["address", "email address", "employment history", "employer name", "name",
                 "phone number", "position"]},
  {"name": "condom box",
   "synonym_nodes": [],
   "pii_types": []},
  {"name": "local newspaper",
   "synonym_nodes": [],
   "pii_types": []},
  {"name": "medical record document",
   "synonym_nodes": ["medical information", "medical prescription", "medical record"],
   "pii_types": ["address", "date of birth", "diagnosis", "email address", "name",
                 "personal identification number"]},
  {"name": "id card",
   "synonym_nodes": ["personal identification information"],
   "pii_types": ["address", "date of birth", "driver license", "driver license number", "name",
                 "personal identification number", "photo", "signature", "gender"]}
])JSON";
}

}  // namespace figpriv
