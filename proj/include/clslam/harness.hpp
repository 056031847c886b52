#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clslam/adaptation.hpp"
#include "clslam/metrics.hpp"
#include "clslam/simworld.hpp"
#include "clslam/toynets.hpp"
#include "json.hpp"

namespace clslam {

struct LoopSettings {
    bool enabled = false;
    double threshold = 0.95;
    std::size_t min_gap = 50;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::vector<AdaptationMode> methods{AdaptationMode::fixed, AdaptationMode::expert_only,
                                        AdaptationMode::general_only, AdaptationMode::cl_slam};
    std::filesystem::path output = "out";
    std::optional<std::filesystem::path> data;  // read datasets instead of rendering

    RenderSettings render;
    NetArch arch;
    std::uint64_t init_seed = 1;
    PretrainConfig pretrain;
    AdaptationConfig adaptation;
    LossWeights loss;
    LoopSettings loops;
    SegmentOptions segments;

    std::string pretrain_env;
    std::vector<std::string> environments;  // evaluation environments, plan order
    std::map<std::string, EnvironmentSpec> env_specs;
    std::map<std::string, std::vector<SceneSpec>> scenes;  // per environment, in order

    /// Throws ConfigError.
    void validate() const;
    /// Canonical key=value text of every setting, sorted; hashed for reports.
    std::string canonical() const;
    std::string hash() const;
};

/// INI file: [experiment], [render], [network], [pretrain], [adaptation],
/// [loss], [loops], [metrics], [plan], one [env:ID] per environment and one
/// [scene:ID] per scene. Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// Scenes with derived seeds: every seed in the config is mixed with the
/// master seed, so changing --seed changes every world and network.
std::map<std::string, RenderedScene> render_scenes(const ExperimentConfig& cfg);
void generate_datasets(const ExperimentConfig& cfg, const std::filesystem::path& dir);

struct RunRecord {
    AdaptationMode method = AdaptationMode::fixed;
    DeploymentSequence sequence;
    SegmentErrors errors;
    BaseMetrics base;
    std::size_t frames = 0;
    std::size_t loops = 0;  // accepted loop closures (full-SLAM runs)
    double seconds = 0;     // timing, excluded from comparisons
};

struct MethodSummary {
    AdaptationMode method = AdaptationMode::fixed;
    Quality aq;
    Quality rq;
    bool handoff_ok = true;  // every deployment of this method
    std::uint64_t checksum_before = 0;  // stored weights at the start of every sequence
    std::uint64_t checksum_after_min = 0, checksum_after_max = 0;  // over sequence ends
};

struct ReportTable {
    std::string config_hash;
    std::uint64_t seed = 0;
    bool loops = false;
    EvalPlan plan;
    std::vector<double> pretrain_losses;
    std::vector<RunRecord> records;  // sorted by (method, sequence)
    std::vector<MethodSummary> methods;
    double seconds = 0;
};

ReportTable run_experiment(const ExperimentConfig& cfg);

/// Timing fields live under "timing" so they can be dropped before comparing.
nlohmann::json report_to_json(const ReportTable& t);
ReportTable report_from_json(const nlohmann::json& j);
std::string report_csv(const ReportTable& t);
std::string report_text(const ReportTable& t);
/// Writes report.json, report.csv and report.txt into `dir`. Throws IoError.
void emit_report(const ReportTable& t, const std::filesystem::path& dir);

}  // namespace clslam
