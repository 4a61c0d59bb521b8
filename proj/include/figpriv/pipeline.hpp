#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/agents.hpp"
#include "figpriv/graph.hpp"
#include "figpriv/image.hpp"
#include "figpriv/image_io.hpp"
#include "figpriv/scoring.hpp"
#include "figpriv/taxonomy.hpp"

namespace figpriv {

enum class MaskStrategy { object, fine_grained, high_risk };

inline const char* strategy_name(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::object: return "object";
        case MaskStrategy::fine_grained: return "fine_grained";
        case MaskStrategy::high_risk: return "high_risk";
    }
    return "?";
}

// Output-file suffix: <stem>.object.png / <stem>.fine.png / <stem>.highrisk.png
inline const char* strategy_suffix(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::object: return "object";
        case MaskStrategy::fine_grained: return "fine";
        case MaskStrategy::high_risk: return "highrisk";
    }
    return "?";
}

inline MaskStrategy strategy_from_name(std::string_view name) {
    if (name == "object") return MaskStrategy::object;
    if (name == "fine_grained" || name == "fine") return MaskStrategy::fine_grained;
    if (name == "high_risk" || name == "highrisk") return MaskStrategy::high_risk;
    throw ConfigError("unknown masking strategy: " + std::string(name));
}

struct PipelineConfig {
    std::vector<double> candidate_angles{0.0, 90.0, 180.0, 270.0};
    MaskStrategy strategy = MaskStrategy::high_risk;
    ScoreConfig risk;
    std::optional<double> tau;  // absent -> 60th percentile of the score vector
    std::optional<std::string> category;
    bool phi_correction = true;
    bool strict_labeling = true;   // labeler failure masks the detection
    bool strict_unscored = false;  // unscored PII join the high-risk set
    double iou_merge = 0.0;        // >0 enables IoU-based OCR/VLM dedup (off by default)

    void validate() const {
        if (candidate_angles.empty()) throw ConfigError("candidate angle set must be non-empty");
        for (double a : candidate_angles)
            if (!std::isfinite(a)) throw ConfigError("candidate angles must be finite");
        if (tau && !std::isfinite(*tau)) throw ConfigError("tau must be finite");
        risk.validate();
    }
};

struct ManifestRecord {
    std::string text;
    Polygon polygon;  // original-image coordinates
    TextSource source = TextSource::ocr;
    std::string sub_category;
    bool high_risk = false;
};

struct StageTrace {
    std::string name;
    std::string status;  // ok | skipped | failed | none
    double ms = 0.0;
};

struct Manifest {
    std::string schema = "figpriv-manifest/1";
    std::string input;
    std::string category;
    std::optional<BBox> detection_bbox;  // paper order [x_top, y_top, x_bottom, y_bottom]
    Point crop_origin{0.0, 0.0};
    double theta_star = 0.0;
    double phi_median = 0.0;
    MaskStrategy strategy = MaskStrategy::high_risk;
    double masked_percentage = 0.0;
    std::vector<ManifestRecord> records;
    HighRiskSet high_risk_set;
    std::string agent_backend;
    nlohmann::json effective_config;
    std::vector<StageTrace> stages;
    std::string error;

    nlohmann::json to_json() const {
        nlohmann::json records_json = nlohmann::json::array();
        for (const auto& rec : records) {
            nlohmann::json poly = nlohmann::json::array();
            for (const auto& v : rec.polygon.vertices) poly.push_back({v.x, v.y});
            records_json.push_back({{"text", rec.text},
                                    {"polygon", poly},
                                    {"source", source_name(rec.source)},
                                    {"sub_category", rec.sub_category},
                                    {"high_risk", rec.high_risk}});
        }
        nlohmann::json stages_json = nlohmann::json::array();
        for (const auto& st : stages)
            stages_json.push_back({{"name", st.name}, {"status", st.status}, {"ms", st.ms}});
        nlohmann::json hr{{"category", high_risk_set.category},
                          {"threshold", high_risk_set.threshold},
                          {"members", std::vector<std::string>(high_risk_set.members.begin(),
                                                               high_risk_set.members.end())},
                          {"unscored", high_risk_set.unscored},
                          {"score_source", high_risk_set.score_source}};
        nlohmann::json doc{{"schema", schema},
                           {"input", input},
                           {"category", category},
                           {"crop_origin", {crop_origin.x, crop_origin.y}},
                           {"theta_star", theta_star},
                           {"phi_median", phi_median},
                           {"strategy", strategy_name(strategy)},
                           {"masked_percentage", masked_percentage},
                           {"records", records_json},
                           {"high_risk_set", hr},
                           {"agent_backend", agent_backend},
                           {"config", effective_config},
                           {"stages", stages_json}};
        if (detection_bbox)
            doc["detection_bbox"] = {detection_bbox->x_top, detection_bbox->y_top,
                                     detection_bbox->x_bottom, detection_bbox->y_bottom};
        else
            doc["detection_bbox"] = nullptr;
        if (!error.empty()) doc["error"] = error;
        return doc;
    }

    // Manifest with run-varying timings removed; the determinism contract
    // compares this form.
    static nlohmann::json comparison_form(nlohmann::json manifest) {
        if (manifest.contains("stages"))
            for (auto& stage : manifest["stages"]) stage.erase("ms");
        return manifest;
    }
};

// ---------------------------------------------------------------------------
// Stage operations

struct OrientationChoice {
    double theta_star = 0.0;
    RotationSpec spec;
    Image rotated;
    std::vector<std::pair<double, double>> scores;  // (angle, probability)
};

// Judge every candidate rotation and keep the argmax; ties go to the
// earliest angle in the list. A singleton {0} skips both rotation and judge.
inline OrientationChoice select_orientation(const Image& crop_img,
                                            const std::vector<double>& angles,
                                            AgentBackend& backend,
                                            const AgentEndpointConfig& cfg) {
    if (angles.empty()) throw ConfigError("candidate angle set must be non-empty");
    OrientationChoice choice;
    if (angles.size() == 1 && angles[0] == 0.0) {
        choice.theta_star = 0.0;
        choice.spec = RotationSpec::identity(crop_img.width, crop_img.height);
        choice.rotated = crop_img;
        return choice;
    }
    double best = -1.0;
    for (double angle : angles) {
        auto [rotated, spec] = rotate_with_spec(crop_img, angle);
        double p = judge_orientation(rotated, backend, cfg);
        choice.scores.emplace_back(angle, p);
        if (p > best) {
            best = p;
            choice.theta_star = angle;
            choice.spec = spec;
            choice.rotated = std::move(rotated);
        }
    }
    return choice;
}

struct RecognizedText {
    std::vector<TextDetection> detections;
    double phi_median = 0.0;
    std::optional<RotationSpec> phi_spec;  // set when a phi correction was applied
    bool ocr_failed = false;
    bool vlm_failed = false;
};

inline double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

// Union of OCR polygons and VLM boxes over the aligned crop, without
// deduplication. With phi correction on, the median OCR skew re-rotates the
// crop before the VLM pass, and those detections carry the composed frame.
inline RecognizedText recognize_text(const Image& rotated, AgentBackend& backend,
                                     const AgentEndpointConfig& ocr_cfg,
                                     const AgentEndpointConfig& vlm_cfg, bool phi_correction) {
    RecognizedText out;
    std::vector<TextDetection> ocr_dets;
    try {
        ocr_dets = ocr_text(rotated, backend, ocr_cfg);
    } catch (const TransportError& e) {
        out.ocr_failed = true;
        warn(std::string("OCR agent failed, continuing with text-VLM only: ") + e.what());
    }
    for (auto& det : ocr_dets) det.frame = "rot";

    if (phi_correction && !ocr_dets.empty()) {
        std::vector<double> phis;
        for (const auto& det : ocr_dets) {
            try {
                phis.push_back(polygon_orientation_angle(det.polygon));
            } catch (const DataError&) {
                // degenerate polygon contributes no skew estimate
            }
        }
        out.phi_median = median(phis);
    }

    const Image* vlm_input = &rotated;
    Image corrected;
    std::string vlm_frame = "rot";
    if (std::abs(out.phi_median) > 1e-9) {
        auto [img, spec] = rotate_with_spec(rotated, -out.phi_median);
        corrected = std::move(img);
        out.phi_spec = spec;
        vlm_input = &corrected;
        vlm_frame = "rot+phi";
    }

    std::vector<TextDetection> vlm_dets;
    try {
        vlm_dets = vlm_text(*vlm_input, backend, vlm_cfg);
    } catch (const TransportError& e) {
        out.vlm_failed = true;
        warn(std::string("text-VLM agent failed, continuing with OCR only: ") + e.what());
    }
    if (out.ocr_failed && out.vlm_failed)
        throw TransportError("both text recognition agents failed");
    for (auto& det : vlm_dets) det.frame = vlm_frame;

    out.detections = std::move(ocr_dets);
    out.detections.insert(out.detections.end(), std::make_move_iterator(vlm_dets.begin()),
                          std::make_move_iterator(vlm_dets.end()));
    return out;
}

// Frame tag -> the rotation chain that produced it, in application order.
using FrameChains = std::map<std::string, std::vector<RotationSpec>>;

// Convert every detection to a polygon in original-image coordinates:
// boxes become rings, each vertex walks the inverse of its frame's rotation
// chain, then shifts by the detected object's top-left corner.
inline std::vector<Polygon> refine_detections(const std::vector<TextDetection>& detections,
                                              const FrameChains& chains,
                                              const Point& object_origin) {
    std::vector<Polygon> out;
    out.reserve(detections.size());
    for (const auto& det : detections) {
        auto chain = chains.find(det.frame);
        if (chain == chains.end())
            throw DataError("detection carries unknown rotation frame tag '" + det.frame + "'");
        Polygon poly = det.is_box ? bbox_to_polygon(det.box) : det.polygon;
        for (auto it = chain->second.rbegin(); it != chain->second.rend(); ++it)
            poly = inverse_rotate_polygon(poly, *it);
        out.push_back(realign_to_original(poly, object_origin));
    }
    return out;
}

struct RiskAssignment {
    std::vector<ManifestRecord> records;
    HighRiskSet high_risk_set;
};

// Label every detection against the category's PII list plus "other" and
// flag membership in H_r. Labeler failure falls conservative (flagged) in
// strict mode, "other" in permissive mode.
inline RiskAssignment assign_risk(const std::vector<TextDetection>& detections,
                                  const std::vector<Polygon>& refined_polygons,
                                  const Image& object_crop, const std::string& category,
                                  const ScoreVector& scores, const CategoryTable& table,
                                  double tau, bool strict_unscored, bool strict_labeling,
                                  AgentBackend& backend, const AgentEndpointConfig& label_cfg) {
    if (detections.size() != refined_polygons.size())
        throw DataError("detections and refined polygons out of step");
    RiskAssignment out;
    out.high_risk_set = high_risk_for_category(table, scores, category, tau, strict_unscored);
    const PrivateCategory& cat = table.at(category);
    std::vector<std::string> allowed = cat.pii_types;
    allowed.push_back("other");
    for (size_t i = 0; i < detections.size(); ++i) {
        ManifestRecord rec;
        rec.text = detections[i].text;
        rec.polygon = refined_polygons[i];
        rec.source = detections[i].source;
        try {
            rec.sub_category =
                classify_text(object_crop, rec.text, category, allowed, backend, label_cfg);
            rec.high_risk = out.high_risk_set.contains(rec.sub_category);
        } catch (const TransportError& e) {
            if (strict_labeling) {
                rec.sub_category = "label_error";
                rec.high_risk = true;
                warn(std::string("labeler failed; masking conservatively: ") + e.what());
            } else {
                rec.sub_category = "other";
                rec.high_risk = false;
                warn(std::string("labeler failed; leaving unmasked: ") + e.what());
            }
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

// object -> the segmentation mask at its crop origin; fine_grained -> every
// text polygon; high_risk -> only the flagged polygons.
inline BinaryMask build_strategy_mask(MaskStrategy strategy,
                                      const BinaryMask& seg_mask_in_original_frame,
                                      const std::vector<Polygon>& all_polygons,
                                      const std::vector<Polygon>& high_risk_polygons,
                                      int width, int height) {
    switch (strategy) {
        case MaskStrategy::object: return seg_mask_in_original_frame;
        case MaskStrategy::fine_grained: return rasterize(all_polygons, width, height);
        case MaskStrategy::high_risk: return rasterize(high_risk_polygons, width, height);
    }
    throw ConfigError("unknown masking strategy");
}

struct PipelineResult {
    Image masked;
    BinaryMask mask;
    Manifest manifest;
};

namespace detail {

class StageClock {
public:
    explicit StageClock(std::vector<StageTrace>& trace) : trace_(trace) {}

    void begin(const std::string& name) {
        current_ = name;
        start_ = std::chrono::steady_clock::now();
    }
    void end(const std::string& status = "ok") {
        auto elapsed = std::chrono::steady_clock::now() - start_;
        trace_.push_back(
            {current_, status,
             std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(elapsed)
                 .count()});
    }
    void skip(const std::string& name) { trace_.push_back({name, "skipped", 0.0}); }
    void fail() {
        if (!current_.empty()) end("failed");
    }

private:
    std::vector<StageTrace>& trace_;
    std::string current_;
    std::chrono::steady_clock::time_point start_;
};

inline nlohmann::json effective_config_json(const PipelineConfig& cfg, double resolved_tau) {
    return nlohmann::json{
        {"angles", cfg.candidate_angles},
        {"strategy", strategy_name(cfg.strategy)},
        {"risk",
         {{"algorithm", algorithm_name(cfg.risk.algorithm)},
          {"channel", channel_name(cfg.risk.channel)},
          {"damping", cfg.risk.damping},
          {"epsilon", cfg.risk.epsilon},
          {"max_iterations", cfg.risk.max_iterations}}},
        {"tau", resolved_tau},
        {"phi_correction", cfg.phi_correction},
        {"strict_labeling", cfg.strict_labeling},
        {"strict_unscored", cfg.strict_unscored}};
}

inline void sort_records(std::vector<ManifestRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const ManifestRecord& a, const ManifestRecord& b) {
                         if (a.source != b.source) return a.source < b.source;
                         Point am = a.polygon.min_corner(), bm = b.polygon.min_corner();
                         if (am.y != bm.y) return am.y < bm.y;
                         if (am.x != bm.x) return am.x < bm.x;
                         return a.text < b.text;
                     });
}

}  // namespace detail

// One full run over one image. Deterministic under the mock backend. On a
// stage-fatal error the partially-filled manifest (with trace) is copied to
// partial_out, then the error propagates.
inline PipelineResult run_pipeline(const std::filesystem::path& image_path,
                                   const std::string& category, const PipelineConfig& config,
                                   AgentBackend& backend, const AgentSetConfig& agents,
                                   const EcosystemGraph& graph, const CategoryTable& table,
                                   Manifest* partial_out = nullptr) {
    config.validate();
    Manifest manifest;
    manifest.input = image_path.string();
    manifest.category = normalize_id(category);
    manifest.strategy = config.strategy;
    manifest.agent_backend = backend.tag();
    detail::StageClock clock(manifest.stages);

    try {
        if (!table.contains(category)) throw DataError("unknown category: " + category);

        clock.begin("risk_scores");
        ScoreVector scores = risk_scores(graph, config.risk);
        double tau = config.tau ? *config.tau : default_tau(scores);
        manifest.effective_config = detail::effective_config_json(config, tau);
        clock.end();

        clock.begin("load");
        Image image = load_image(image_path);
        clock.end();

        clock.begin("detect");
        std::optional<DetectionResult> detection =
            detect_object(image, category, backend, agents.role(AgentRole::detect));
        clock.end(detection ? "ok" : "none");

        // Absent detection -> the whole image with origin (0,0).
        clock.begin("crop");
        Image object_crop;
        if (detection) {
            CropResult cr = crop(image, detection->bbox);
            object_crop = std::move(cr.image);
            manifest.detection_bbox = cr.used;
            manifest.crop_origin = {static_cast<double>(cr.used.x_top),
                                    static_cast<double>(cr.used.y_top)};
        } else {
            object_crop = image;
            manifest.detection_bbox = std::nullopt;
            manifest.crop_origin = {0.0, 0.0};
        }
        clock.end();

        clock.begin("segment");
        BinaryMask seg_mask =
            segment_object(object_crop, category, backend, agents.role(AgentRole::segment));
        Image whited = whiteout_outside_mask(object_crop, seg_mask);
        clock.end();

        BBox placement = manifest.detection_bbox
                             ? *manifest.detection_bbox
                             : BBox{0, 0, image.width - 1, image.height - 1};
        BinaryMask seg_full = place_mask(seg_mask, placement, image.width, image.height);

        std::vector<Polygon> all_polygons, high_polygons;
        if (config.strategy == MaskStrategy::object) {
            // Full-object masking never consults the text agents.
            clock.skip("orientation");
            clock.skip("ocr");
            clock.skip("vlm");
            clock.skip("label");
            manifest.high_risk_set = high_risk_for_category(table, scores, category, tau,
                                                            config.strict_unscored);
        } else {
            clock.begin("orientation");
            OrientationChoice orientation =
                select_orientation(whited, config.candidate_angles, backend,
                                   agents.role(AgentRole::orientation));
            manifest.theta_star = orientation.theta_star;
            clock.end();

            clock.begin("text_recognition");
            RecognizedText recognized =
                recognize_text(orientation.rotated, backend, agents.role(AgentRole::ocr),
                               agents.role(AgentRole::vlm), config.phi_correction);
            manifest.phi_median = recognized.phi_median;
            clock.end();

            clock.begin("refine");
            FrameChains chains;
            chains["rot"] = {orientation.spec};
            if (recognized.phi_spec)
                chains["rot+phi"] = {orientation.spec, *recognized.phi_spec};
            std::vector<Polygon> refined =
                refine_detections(recognized.detections, chains, manifest.crop_origin);
            clock.end();

            clock.begin("label");
            RiskAssignment assignment = assign_risk(
                recognized.detections, refined, object_crop, category, scores, table, tau,
                config.strict_unscored, config.strict_labeling, backend,
                agents.role(AgentRole::label));
            manifest.high_risk_set = assignment.high_risk_set;
            clock.end();

            manifest.records = std::move(assignment.records);
            detail::sort_records(manifest.records);
            for (const auto& rec : manifest.records) {
                all_polygons.push_back(rec.polygon);
                if (rec.high_risk) high_polygons.push_back(rec.polygon);
            }
        }

        clock.begin("mask");
        BinaryMask mask = build_strategy_mask(config.strategy, seg_full, all_polygons,
                                              high_polygons, image.width, image.height);
        Image masked = apply_mask(image, mask);
        manifest.masked_percentage =
            100.0 * static_cast<double>(mask.popcount()) / static_cast<double>(mask.size());
        clock.end();

        return {std::move(masked), std::move(mask), std::move(manifest)};
    } catch (const std::exception& e) {
        clock.fail();
        manifest.error = e.what();
        if (partial_out) *partial_out = manifest;
        throw;
    }
}

}  // namespace figpriv
