#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/common.hpp"

namespace figpriv {

enum class WeightChannel { frequency, loss };

inline const char* channel_name(WeightChannel c) {
    return c == WeightChannel::frequency ? "frequency" : "loss";
}

inline WeightChannel channel_from_name(std::string_view name) {
    if (name == "frequency") return WeightChannel::frequency;
    if (name == "loss") return WeightChannel::loss;
    throw ConfigError("unknown weight channel: " + std::string(name));
}

struct PiiNode {
    std::string id;            // normalized
    std::string display_name;  // first-seen raw spelling
};

struct EdgeRecord {
    std::string source;
    std::string target;
    double weight_frequency = 0.0;
    double weight_loss = 0.0;
};

// Directed identity-ecosystem graph. An edge source->target means exposure
// of the source PII enables compromise of the target PII. Immutable after
// build; adjacency indexes mirror the edge set exactly.
class EcosystemGraph {
public:
    struct Edge {
        size_t source = 0;
        size_t target = 0;
        double weight_frequency = 0.0;
        double weight_loss = 0.0;

        double weight(WeightChannel c) const {
            return c == WeightChannel::frequency ? weight_frequency : weight_loss;
        }
    };

    static EcosystemGraph build(const std::vector<EdgeRecord>& records) {
        if (records.empty()) throw DataError("empty graph: no edge records");
        EcosystemGraph g;
        // Duplicate ordered pairs merge by summing each weight channel.
        std::map<std::pair<size_t, size_t>, size_t> edge_index;
        for (const auto& rec : records) {
            std::string src = normalize_id(rec.source);
            std::string dst = normalize_id(rec.target);
            if (src.empty() || dst.empty())
                throw DataError("edge record with empty endpoint name");
            if (rec.weight_frequency < 0.0 || rec.weight_loss < 0.0)
                throw DataError("negative edge weight on edge " + src + " -> " + dst);
            size_t s = g.intern(src, rec.source);
            size_t t = g.intern(dst, rec.target);
            auto key = std::make_pair(s, t);
            auto it = edge_index.find(key);
            if (it == edge_index.end()) {
                edge_index.emplace(key, g.edges_.size());
                g.edges_.push_back({s, t, rec.weight_frequency, rec.weight_loss});
            } else {
                g.edges_[it->second].weight_frequency += rec.weight_frequency;
                g.edges_[it->second].weight_loss += rec.weight_loss;
            }
        }
        g.out_adjacency_.assign(g.nodes_.size(), {});
        g.in_adjacency_.assign(g.nodes_.size(), {});
        for (size_t e = 0; e < g.edges_.size(); ++e) {
            g.out_adjacency_[g.edges_[e].source].push_back(e);
            g.in_adjacency_[g.edges_[e].target].push_back(e);
        }
        return g;
    }

    size_t node_count() const { return nodes_.size(); }
    size_t edge_count() const { return edges_.size(); }

    const std::vector<PiiNode>& nodes() const { return nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const PiiNode& node(size_t i) const { return nodes_.at(i); }

    std::optional<size_t> find(std::string_view raw_id) const {
        auto it = index_.find(normalize_id(raw_id));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<size_t>& out_edges(size_t node) const { return out_adjacency_.at(node); }
    const std::vector<size_t>& in_edges(size_t node) const { return in_adjacency_.at(node); }

    size_t out_degree(size_t node) const { return out_adjacency_.at(node).size(); }
    size_t in_degree(size_t node) const { return in_adjacency_.at(node).size(); }

    double out_weight(size_t node, WeightChannel c) const {
        double sum = 0.0;
        for (size_t e : out_adjacency_.at(node)) sum += edges_[e].weight(c);
        return sum;
    }

    static EcosystemGraph load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open graph file: " + path.string());
        std::string ext = path.extension().string();
        for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".csv") return build(parse_csv(in, path.string()));
        return build(parse_json(in, path.string()));
    }

    static std::vector<EdgeRecord> parse_json(std::istream& in, const std::string& origin) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("invalid JSON edge list in " + origin + ": " + e.what());
        }
        if (!doc.is_array()) throw DataError("edge-list file must be a JSON array: " + origin);
        std::vector<EdgeRecord> records;
        records.reserve(doc.size());
        for (const auto& item : doc) {
            EdgeRecord rec;
            try {
                rec.source = item.at("source").get<std::string>();
                rec.target = item.at("target").get<std::string>();
                rec.weight_frequency = item.at("weight_frequency").get<double>();
                rec.weight_loss = item.at("weight_loss").get<double>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError("malformed edge record in " + origin + ": " + e.what());
            }
            records.push_back(std::move(rec));
        }
        return records;
    }

    static std::vector<EdgeRecord> parse_csv(std::istream& in, const std::string& origin) {
        std::string line;
        if (!std::getline(in, line)) throw DataError("empty CSV edge list: " + origin);
        auto header = split_csv_line(line);
        std::vector<std::string> expected = {"source", "target", "weight_frequency", "weight_loss"};
        std::vector<int> col(expected.size(), -1);
        for (size_t i = 0; i < header.size(); ++i) {
            for (size_t j = 0; j < expected.size(); ++j)
                if (normalize_id(header[i]) == expected[j]) col[j] = static_cast<int>(i);
        }
        for (size_t j = 0; j < expected.size(); ++j)
            if (col[j] < 0)
                throw DataError("CSV edge list missing column '" + expected[j] + "': " + origin);
        std::vector<EdgeRecord> records;
        size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
            auto fields = split_csv_line(line);
            if (fields.size() < header.size())
                throw DataError("CSV edge list row " + std::to_string(lineno) +
                                " has too few fields: " + origin);
            EdgeRecord rec;
            rec.source = fields[static_cast<size_t>(col[0])];
            rec.target = fields[static_cast<size_t>(col[1])];
            try {
                rec.weight_frequency = std::stod(fields[static_cast<size_t>(col[2])]);
                rec.weight_loss = std::stod(fields[static_cast<size_t>(col[3])]);
            } catch (const std::exception&) {
                throw DataError("CSV edge list row " + std::to_string(lineno) +
                                " has a non-numeric weight: " + origin);
            }
            records.push_back(std::move(rec));
        }
        return records;
    }

private:
    size_t intern(const std::string& id, const std::string& raw) {
        auto it = index_.find(id);
        if (it != index_.end()) return it->second;
        size_t idx = nodes_.size();
        nodes_.push_back({id, raw});
        index_.emplace(id, idx);
        return idx;
    }

    static std::vector<std::string> split_csv_line(const std::string& line) {
        std::vector<std::string> fields;
        std::string cur;
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (quoted) {
                if (c == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        cur.push_back('"');
                        ++i;
                    } else {
                        quoted = false;
                    }
                } else {
                    cur.push_back(c);
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (c == '\r') {
                // tolerate CRLF
            } else {
                cur.push_back(c);
            }
        }
        fields.push_back(cur);
        return fields;
    }

    std::vector<PiiNode> nodes_;
    std::vector<Edge> edges_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<std::vector<size_t>> out_adjacency_;
    std::vector<std::vector<size_t>> in_adjacency_;
};

}  // namespace figpriv
