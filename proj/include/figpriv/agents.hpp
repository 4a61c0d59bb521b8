#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/geometry.hpp"
#include "figpriv/image.hpp"
#include "figpriv/image_io.hpp"

namespace figpriv {

// The model-backed roles of the pipeline. "label" is the sub-category
// (named-entity style) classifier that runs per detected text.
enum class AgentRole { detect, segment, orientation, ocr, vlm, label };

inline const char* role_name(AgentRole r) {
    switch (r) {
        case AgentRole::detect: return "detect";
        case AgentRole::segment: return "segment";
        case AgentRole::orientation: return "orientation";
        case AgentRole::ocr: return "ocr";
        case AgentRole::vlm: return "vlm";
        case AgentRole::label: return "label";
    }
    return "?";
}

inline AgentRole role_from_name(std::string_view name) {
    if (name == "detect") return AgentRole::detect;
    if (name == "segment") return AgentRole::segment;
    if (name == "orientation") return AgentRole::orientation;
    if (name == "ocr") return AgentRole::ocr;
    if (name == "vlm") return AgentRole::vlm;
    if (name == "label") return AgentRole::label;
    throw ConfigError("unknown agent role: " + std::string(name));
}

inline constexpr AgentRole kAllRoles[] = {AgentRole::detect, AgentRole::segment,
                                          AgentRole::orientation, AgentRole::ocr,
                                          AgentRole::vlm, AgentRole::label};

namespace prompts {
inline constexpr const char* detect =
    "Locate [private object] in the image and output in JSON format.";
inline constexpr const char* orientation =
    "Is the text in this document readable (top down, left to right)? Answer yes or no";
inline constexpr const char* vlm_text =
    "Locate all text (bbox coordinates). Include all readable and blury text";
inline constexpr const char* label =
    "Based on the image, classify this text: [strs] using these categories: "
    "[private_object_categories]. Output only one category.";
inline constexpr const char* recognition =
    "Is there a [private object] in the image? Answer yes or no";
inline constexpr const char* answerability =
    "Given this question: '[question]', based on the image, are you able to answer the question?"
    " Answer yes or no";
}  // namespace prompts

inline std::string expand_template(std::string tmpl,
                                   const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        std::string needle = "[" + key + "]";
        size_t pos = 0;
        while ((pos = tmpl.find(needle, pos)) != std::string::npos) {
            tmpl.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    return tmpl;
}

struct AgentEndpointConfig {
    std::string base_url;
    std::string model_id;
    std::string prompt_template;
    double timeout_s = 60.0;
    int max_retries = 2;
    int backoff_initial_ms = 1000;  // doubles per retry
    std::string auth_token_env;
    bool logprob_mode = false;
    std::string mode = "chat";  // "chat" or "dedicated" (segment/ocr style endpoints)

    void validate() const {
        if (timeout_s <= 0.0) throw ConfigError("agent timeout must be > 0");
        if (max_retries < 0) throw ConfigError("agent max_retries must be >= 0");
        if (backoff_initial_ms <= 0) throw ConfigError("agent backoff must be > 0");
        if (mode != "chat" && mode != "dedicated")
            throw ConfigError("agent mode must be 'chat' or 'dedicated'");
    }
};

// Role -> endpoint map plus the backend selector. The auth token itself
// never lives in the file, only the name of the environment variable.
struct AgentSetConfig {
    std::string backend = "mock";  // "mock" or "http"
    std::filesystem::path fixture_dir;
    std::map<AgentRole, AgentEndpointConfig> roles;

    const AgentEndpointConfig& role(AgentRole r) const {
        auto it = roles.find(r);
        if (it == roles.end()) throw ConfigError(std::string("no config for agent role ") +
                                                 role_name(r));
        return it->second;
    }

    static AgentSetConfig defaults() {
        AgentSetConfig cfg;
        for (AgentRole r : kAllRoles) {
            AgentEndpointConfig ep;
            switch (r) {
                case AgentRole::detect: ep.prompt_template = prompts::detect; break;
                case AgentRole::orientation:
                    ep.prompt_template = prompts::orientation;
                    ep.logprob_mode = true;
                    break;
                case AgentRole::vlm: ep.prompt_template = prompts::vlm_text; break;
                case AgentRole::label: ep.prompt_template = prompts::label; break;
                case AgentRole::segment:
                    ep.prompt_template = "[private object]";
                    ep.mode = "dedicated";
                    break;
                case AgentRole::ocr: ep.mode = "dedicated"; break;
            }
            cfg.roles[r] = ep;
        }
        return cfg;
    }

    static AgentSetConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open agent config: " + path.string());
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("invalid agent config " + path.string() + ": " + e.what());
        }
        AgentSetConfig cfg = defaults();
        const nlohmann::json* roles = &doc;
        if (doc.is_object() && doc.contains("roles")) {
            cfg.backend = doc.value("backend", cfg.backend);
            if (doc.contains("fixture_dir"))
                cfg.fixture_dir = doc.at("fixture_dir").get<std::string>();
            roles = &doc.at("roles");
        }
        if (!roles->is_object()) throw ConfigError("agent config must map role -> endpoint");
        for (const auto& [name, body] : roles->items()) {
            AgentRole r = role_from_name(name);
            AgentEndpointConfig& ep = cfg.roles[r];
            ep.base_url = body.value("base_url", ep.base_url);
            ep.model_id = body.value("model_id", ep.model_id);
            ep.prompt_template = body.value("prompt_template", ep.prompt_template);
            ep.timeout_s = body.value("timeout_s", ep.timeout_s);
            ep.max_retries = body.value("max_retries", ep.max_retries);
            ep.backoff_initial_ms = body.value("backoff_initial_ms", ep.backoff_initial_ms);
            ep.auth_token_env = body.value("auth_token_env", ep.auth_token_env);
            ep.logprob_mode = body.value("logprob_mode", ep.logprob_mode);
            ep.mode = body.value("mode", ep.mode);
            ep.validate();
        }
        if (cfg.backend != "mock" && cfg.backend != "http")
            throw ConfigError("agent backend must be 'mock' or 'http'");
        // Relative fixture dirs resolve against the config file location.
        if (!cfg.fixture_dir.empty() && cfg.fixture_dir.is_relative())
            cfg.fixture_dir = path.parent_path() / cfg.fixture_dir;
        return cfg;
    }
};

struct AgentRequest {
    AgentRole role;
    std::string prompt;
    const Image* image = nullptr;
    std::string text;  // label role: the text being classified
};

// A backend resolves a request to the role's native response shape
// (detection array / RLE mask object / probability object / text).
class AgentBackend {
public:
    virtual ~AgentBackend() = default;
    virtual nlohmann::json invoke(const AgentRequest& request) = 0;
    virtual std::string tag() const = 0;
};

// ---------------------------------------------------------------------------
// Response parsing. Model output is messy; everything here is tolerant and
// drops invalid geometry with a warning rather than letting it escape.

struct DetectionResult {
    BBox bbox;
    std::string label;
    std::string raw;
};

enum class TextSource { ocr, vlm };

inline const char* source_name(TextSource s) { return s == TextSource::ocr ? "ocr" : "vlm"; }

struct TextDetection {
    std::string text;
    bool is_box = false;  // region arrived as a bbox (VLM) vs polygon (OCR)
    BBox box;
    Polygon polygon;
    TextSource source = TextSource::ocr;
    std::string frame;  // rotation-frame tag, assigned by the pipeline
};

namespace detail {

inline std::string strip_code_fences(const std::string& raw) {
    std::string s = raw;
    size_t fence = s.find("```");
    if (fence == std::string::npos) return s;
    size_t start = s.find('\n', fence);
    if (start == std::string::npos) return s;
    size_t end = s.find("```", start);
    if (end == std::string::npos) return s.substr(start + 1);
    return s.substr(start + 1, end - start - 1);
}

inline std::optional<nlohmann::json> try_parse_json(const std::string& text) {
    auto parsed = nlohmann::json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    // Fall back to the first bracketed span; models often wrap JSON in prose.
    for (char open : {'[', '{'}) {
        size_t pos = text.find(open);
        if (pos == std::string::npos) continue;
        auto sub = nlohmann::json::parse(text.substr(pos), nullptr, false, true);
        if (!sub.is_discarded()) return sub;
    }
    return std::nullopt;
}

inline std::optional<BBox> bbox_from_json(const nlohmann::json& obj, int img_w, int img_h) {
    const nlohmann::json* coords = nullptr;
    if (obj.contains("bbox_2d")) coords = &obj.at("bbox_2d");
    else if (obj.contains("bbox")) coords = &obj.at("bbox");
    if (!coords || !coords->is_array() || coords->size() != 4) return std::nullopt;
    for (const auto& v : *coords)
        if (!v.is_number()) return std::nullopt;
    BBox box{static_cast<int>(std::llround((*coords)[0].get<double>())),
             static_cast<int>(std::llround((*coords)[1].get<double>())),
             static_cast<int>(std::llround((*coords)[2].get<double>())),
             static_cast<int>(std::llround((*coords)[3].get<double>()))};
    if (box.x_top > box.x_bottom) std::swap(box.x_top, box.x_bottom);
    if (box.y_top > box.y_bottom) std::swap(box.y_top, box.y_bottom);
    if (img_w > 0 && img_h > 0) {
        // An entirely-outside box is no detection; a straddling one clamps.
        if (box.x_bottom < 0 || box.y_bottom < 0 || box.x_top > img_w - 1 ||
            box.y_top > img_h - 1)
            return std::nullopt;
        box.x_top = std::clamp(box.x_top, 0, img_w - 1);
        box.x_bottom = std::clamp(box.x_bottom, 0, img_w - 1);
        box.y_top = std::clamp(box.y_top, 0, img_h - 1);
        box.y_bottom = std::clamp(box.y_bottom, 0, img_h - 1);
    }
    if (!box.valid()) return std::nullopt;
    return box;
}

}  // namespace detail

// Tolerant bbox extraction from raw model text: strips code fences, accepts
// an array of objects or a single object, keys "bbox_2d" or "bbox" as
// [x1,y1,x2,y2], clamps to image bounds when given. No parseable bbox is an
// empty list, never an error.
inline std::vector<DetectionResult> parse_bbox_json(const std::string& raw_text, int img_w = 0,
                                                    int img_h = 0) {
    std::vector<DetectionResult> results;
    auto parsed = detail::try_parse_json(detail::strip_code_fences(raw_text));
    if (!parsed) return results;
    nlohmann::json items = nlohmann::json::array();
    if (parsed->is_array()) items = *parsed;
    else if (parsed->is_object()) items.push_back(*parsed);
    for (const auto& item : items) {
        if (!item.is_object()) continue;
        auto box = detail::bbox_from_json(item, img_w, img_h);
        if (!box) continue;
        DetectionResult det;
        det.bbox = *box;
        det.label = item.value("label", std::string());
        det.raw = raw_text;
        results.push_back(std::move(det));
    }
    return results;
}

// Alternating-run-length mask: counts of 0s then 1s, row-major, starting
// with zeros. The segment role's dedicated response shape.
inline nlohmann::json mask_to_rle(const BinaryMask& mask) {
    std::vector<long long> counts;
    uint8_t current = 0;
    long long run = 0;
    for (uint8_t b : mask.bits()) {
        if (b == current) {
            ++run;
        } else {
            counts.push_back(run);
            current = b;
            run = 1;
        }
    }
    counts.push_back(run);
    return nlohmann::json{{"width", mask.width()}, {"height", mask.height()},
                          {"counts", counts}};
}

inline BinaryMask mask_from_rle(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("width") || !doc.contains("height") ||
        !doc.contains("counts"))
        throw DataError("malformed mask response: expected {width, height, counts}");
    int w = doc.at("width").get<int>();
    int h = doc.at("height").get<int>();
    if (w <= 0 || h <= 0) throw DataError("malformed mask response: bad dimensions");
    BinaryMask mask(w, h, false);
    size_t pos = 0;
    uint8_t value = 0;
    const size_t total = static_cast<size_t>(w) * static_cast<size_t>(h);
    for (const auto& c : doc.at("counts")) {
        long long run = c.get<long long>();
        if (run < 0 || pos + static_cast<size_t>(run) > total)
            throw DataError("malformed mask response: run lengths exceed dimensions");
        if (value)
            for (long long i = 0; i < run; ++i) {
                size_t idx = pos + static_cast<size_t>(i);
                mask.set(static_cast<int>(idx % w), static_cast<int>(idx / w));
            }
        pos += static_cast<size_t>(run);
        value ^= 1;
    }
    if (pos != total) throw DataError("malformed mask response: run lengths short of dimensions");
    return mask;
}

namespace detail {

inline std::string trim_label(std::string s) {
    auto is_junk = [](char c) {
        return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == '!' || c == '"' ||
               c == '\'' || c == '`' || c == ':' || c == ',';
    };
    size_t b = 0, e = s.size();
    while (b < e && is_junk(s[b])) ++b;
    while (e > b && is_junk(s[e - 1])) --e;
    return s.substr(b, e - b);
}

inline std::vector<TextDetection> parse_ocr_response(const nlohmann::json& doc) {
    nlohmann::json items = doc;
    if (doc.is_string()) {
        auto parsed = try_parse_json(strip_code_fences(doc.get<std::string>()));
        if (!parsed) return {};
        items = *parsed;
    }
    if (items.is_null()) return {};
    if (!items.is_array()) return {};
    std::vector<TextDetection> out;
    for (const auto& item : items) {
        if (!item.is_object() || !item.contains("polygon")) continue;
        TextDetection det;
        det.text = item.value("text", std::string());
        det.source = TextSource::ocr;
        det.is_box = false;
        const auto& pts = item.at("polygon");
        if (!pts.is_array()) continue;
        bool ok = true;
        for (const auto& pt : pts) {
            if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
                ok = false;
                break;
            }
            det.polygon.vertices.push_back({pt[0].get<double>(), pt[1].get<double>()});
        }
        if (!ok || det.polygon.vertices.size() < 3 || det.polygon.degenerate()) {
            warn("dropping OCR detection with invalid polygon (" +
                 std::to_string(det.polygon.vertices.size()) + " points)");
            continue;
        }
        out.push_back(std::move(det));
    }
    return out;
}

inline std::vector<TextDetection> parse_vlm_response(const nlohmann::json& doc, int img_w,
                                                     int img_h) {
    nlohmann::json items = doc;
    if (doc.is_string()) {
        auto parsed = try_parse_json(strip_code_fences(doc.get<std::string>()));
        if (!parsed) return {};
        items = *parsed;
    }
    if (items.is_null()) return {};
    if (items.is_object()) {
        nlohmann::json arr = nlohmann::json::array();
        arr.push_back(items);
        items = arr;
    }
    if (!items.is_array()) return {};
    std::vector<TextDetection> out;
    for (const auto& item : items) {
        if (!item.is_object()) continue;
        auto box = bbox_from_json(item, img_w, img_h);
        if (!box) {
            warn("dropping text-VLM detection without a usable bbox");
            continue;
        }
        TextDetection det;
        det.text = item.value("text", item.value("label", std::string()));
        det.source = TextSource::vlm;
        det.is_box = true;
        det.box = *box;
        if (det.text.empty()) {
            warn("dropping text-VLM detection with empty text");
            continue;
        }
        out.push_back(std::move(det));
    }
    return out;
}

inline double parse_orientation_response(const nlohmann::json& doc) {
    if (doc.is_object() && (doc.contains("p_yes") || doc.contains("p_no"))) {
        double yes = doc.value("p_yes", 0.0);
        double no = doc.value("p_no", 0.0);
        if (yes < 0 || no < 0 || yes + no <= 0.0) {
            warn("orientation response with unusable likelihoods; treating as undecided");
            return 0.5;
        }
        return yes / (yes + no);
    }
    std::string text;
    if (doc.is_string()) text = doc.get<std::string>();
    else if (doc.is_object()) text = doc.value("text", std::string());
    std::string norm = normalize_id(trim_label(text));
    if (norm.rfind("yes", 0) == 0) return 1.0;
    if (norm.rfind("no", 0) == 0) return 0.0;
    warn("orientation answer '" + text + "' is neither yes nor no; treating as undecided");
    return 0.5;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mock backend: a directory of JSON fixtures keyed by (role, content hash of
// the input image pixels). Fully offline and referentially transparent.

class MockAgentBackend : public AgentBackend {
public:
    explicit MockAgentBackend(std::filesystem::path fixture_dir)
        : dir_(std::move(fixture_dir)) {
        if (!std::filesystem::is_directory(dir_))
            throw ConfigError("mock fixture directory does not exist: " + dir_.string());
    }

    static std::string key_for(const Image& img) { return to_hex(content_hash(img)); }

    nlohmann::json invoke(const AgentRequest& request) override {
        nlohmann::json fixture = lookup(request);
        if (request.role == AgentRole::label && fixture.is_object() &&
            fixture.contains("labels")) {
            const auto& labels = fixture.at("labels");
            if (labels.contains(request.text)) return nlohmann::json{{"text", labels.at(request.text)}};
            std::string norm = normalize_id(request.text);
            for (const auto& [k, v] : labels.items())
                if (normalize_id(k) == norm) return nlohmann::json{{"text", v}};
            return nlohmann::json{{"text", "other"}};
        }
        return fixture;
    }

    std::string tag() const override { return "mock:" + dir_.filename().string(); }

private:
    nlohmann::json lookup(const AgentRequest& request) {
        std::filesystem::path role_dir = dir_ / role_name(request.role);
        std::filesystem::path exact =
            role_dir / (request.image ? key_for(*request.image) + ".json" : "default.json");
        for (const auto& candidate : {exact, role_dir / "default.json"}) {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(candidate.string());
            if (it != cache_.end()) {
                if (!it->second.is_discarded()) return it->second;
                continue;
            }
            std::ifstream in(candidate);
            if (!in) {
                cache_[candidate.string()] = nlohmann::json::value_t::discarded;
                continue;
            }
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw DataError("invalid fixture " + candidate.string() + ": " + e.what());
            }
            cache_[candidate.string()] = doc;
            return doc;
        }
        return empty_response(request.role);
    }

    static nlohmann::json empty_response(AgentRole role) {
        switch (role) {
            case AgentRole::detect: return nlohmann::json("no objects found");
            case AgentRole::segment: return nlohmann::json();  // -> all-ones fallback
            case AgentRole::orientation: return nlohmann::json{{"text", "unknown"}};
            case AgentRole::ocr:
            case AgentRole::vlm: return nlohmann::json::array();
            case AgentRole::label: return nlohmann::json{{"text", "other"}};
        }
        return nlohmann::json();
    }

    std::filesystem::path dir_;
    std::mutex mutex_;
    std::map<std::string, nlohmann::json> cache_;
};

// ---------------------------------------------------------------------------
// Agent operations. All take the backend plus that role's endpoint config;
// transport failures surface as TransportError, absent results do not.

// First parsed bounding box, or nothing when the detector finds no object
// (the pipeline then falls back to the whole image).
inline std::optional<DetectionResult> detect_object(const Image& image,
                                                    const std::string& category_name,
                                                    AgentBackend& backend,
                                                    const AgentEndpointConfig& cfg) {
    if (image.empty()) throw DataError("detect_object on empty image");
    AgentRequest req;
    req.role = AgentRole::detect;
    req.prompt = expand_template(cfg.prompt_template, {{"private object", category_name}});
    req.image = &image;
    nlohmann::json response = backend.invoke(req);
    std::string raw = response.is_string() ? response.get<std::string>() : response.dump();
    auto detections = parse_bbox_json(raw, image.width, image.height);
    if (detections.empty()) return std::nullopt;
    return detections.front();
}

// Object mask for the crop. An empty or all-zero segmenter answer falls
// back to the all-ones mask (mask more, not less); a mask of the wrong
// size is a contract violation.
inline BinaryMask segment_object(const Image& crop_img, const std::string& category_name,
                                 AgentBackend& backend, const AgentEndpointConfig& cfg) {
    if (crop_img.empty()) throw DataError("segment_object on empty image");
    AgentRequest req;
    req.role = AgentRole::segment;
    req.prompt = expand_template(cfg.prompt_template, {{"private object", category_name}});
    req.image = &crop_img;
    nlohmann::json response = backend.invoke(req);
    if (response.is_string()) {
        auto parsed = detail::try_parse_json(detail::strip_code_fences(response.get<std::string>()));
        response = parsed ? *parsed : nlohmann::json();
    }
    if (response.is_null() || (response.is_object() && response.empty()))
        return BinaryMask::ones(crop_img.width, crop_img.height);
    BinaryMask mask = mask_from_rle(response);
    if (mask.width() != crop_img.width || mask.height() != crop_img.height)
        throw DataError("segmenter returned a mask of mismatched dimensions");
    if (mask.popcount() == 0) return BinaryMask::ones(crop_img.width, crop_img.height);
    return mask;
}

// Likelihood that the image reads upright, in [0,1].
inline double judge_orientation(const Image& image, AgentBackend& backend,
                                const AgentEndpointConfig& cfg) {
    AgentRequest req;
    req.role = AgentRole::orientation;
    req.prompt = cfg.prompt_template;
    req.image = &image;
    return detail::parse_orientation_response(backend.invoke(req));
}

inline std::vector<TextDetection> ocr_text(const Image& image, AgentBackend& backend,
                                           const AgentEndpointConfig& cfg) {
    AgentRequest req;
    req.role = AgentRole::ocr;
    req.prompt = cfg.prompt_template;
    req.image = &image;
    return detail::parse_ocr_response(backend.invoke(req));
}

inline std::vector<TextDetection> vlm_text(const Image& image, AgentBackend& backend,
                                           const AgentEndpointConfig& cfg) {
    AgentRequest req;
    req.role = AgentRole::vlm;
    req.prompt = cfg.prompt_template;
    req.image = &image;
    return detail::parse_vlm_response(backend.invoke(req), image.width, image.height);
}

// Sub-category label for one text segment, normalized and matched against
// the allowed set; anything else degrades to "other".
inline std::string classify_text(const Image& image_crop, const std::string& text,
                                 const std::string& category,
                                 const std::vector<std::string>& allowed_labels,
                                 AgentBackend& backend, const AgentEndpointConfig& cfg) {
    if (allowed_labels.empty()) throw DataError("classify_text with empty label set");
    std::string joined;
    for (const auto& l : allowed_labels) {
        if (!joined.empty()) joined += ", ";
        joined += l;
    }
    AgentRequest req;
    req.role = AgentRole::label;
    req.prompt = expand_template(
        cfg.prompt_template,
        {{"strs", text}, {"private_object_categories", joined}, {"private object", category}});
    req.image = &image_crop;
    req.text = text;
    nlohmann::json response = backend.invoke(req);
    std::string raw;
    if (response.is_string()) raw = response.get<std::string>();
    else if (response.is_object()) raw = response.value("text", std::string());
    std::string norm = normalize_id(detail::trim_label(raw));
    for (const auto& l : allowed_labels)
        if (normalize_id(l) == norm) return normalize_id(l);
    if (norm != "other")
        warn("label '" + raw + "' is not in the allowed set; using 'other'");
    return "other";
}

// Shared yes-likelihood contract used by the evaluation probes.
inline double yes_probability(const Image& image, const std::string& prompt,
                              AgentBackend& backend, AgentRole role = AgentRole::orientation) {
    AgentRequest req;
    req.role = role;
    req.prompt = prompt;
    req.image = &image;
    return detail::parse_orientation_response(backend.invoke(req));
}

}  // namespace figpriv
