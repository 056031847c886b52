#include "clslam/harness.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "clslam/backend.hpp"
#include "clslam/error.hpp"
#include "clslam/rng.hpp"

namespace clslam {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

// ------------------------------------------------------------------ config

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

// Reads keys of one section and rejects keys nobody asked for.
class Section {
public:
    Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

    template <class T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!tree_) return;
        const auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
        if (!v) return;
        out = convert<T>(key, *v);
    }

    void finish() const {
        if (!tree_) return;
        for (const auto& [k, v] : *tree_) {
            if (!used_.count(k)) throw Error(ErrorKind::ConfigError, "[" + name_ + "] unknown key '" + k + "'");
        }
    }

private:
    template <class T>
    T convert(const std::string& key, const std::string& v) const {
        try {
            if constexpr (std::is_same_v<T, std::string>) {
                return v;
            } else if constexpr (std::is_same_v<T, bool>) {
                if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
                if (v == "false" || v == "off" || v == "0" || v == "no") return false;
                throw std::invalid_argument(v);
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                return split_list(v);
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                std::vector<double> out;
                for (const auto& s : split_list(v)) out.push_back(std::stod(s));
                return out;
            } else if constexpr (std::is_floating_point_v<T>) {
                std::size_t pos = 0;
                const T x = static_cast<T>(std::stod(v, &pos));
                if (pos != v.size()) throw std::invalid_argument(v);
                return x;
            } else {
                std::size_t pos = 0;
                const long long x = std::stoll(v, &pos);
                if (pos != v.size() || (std::is_unsigned_v<T> && x < 0)) throw std::invalid_argument(v);
                return static_cast<T>(x);
            }
        } catch (const std::exception&) {
            throw Error(ErrorKind::ConfigError, "[" + name_ + "] " + key + ": bad value '" + v + "'");
        }
    }

    std::string name_;
    const pt::ptree* tree_;
    std::set<std::string> used_;
};

std::uint64_t fnv(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (methods.empty()) throw Error(ErrorKind::ConfigError, "no methods");
    adaptation.validate();
    loss.validate();
    render.intrinsics.validate();
    arch.validate();
    if (arch.image_height != render.intrinsics.height || arch.image_width != render.intrinsics.width)
        throw Error(ErrorKind::ConfigError, "network input size differs from the render size");
    if (pretrain.epochs < 1) throw Error(ErrorKind::ConfigError, "pretrain epochs must be >= 1");
    if (!(loops.threshold > 0 && loops.threshold <= 1)) throw Error(ErrorKind::ConfigError, "loop threshold outside (0,1]");
    if (segments.lengths.empty() || segments.step == 0) throw Error(ErrorKind::ConfigError, "bad segment settings");
    if (pretrain_env.empty()) throw Error(ErrorKind::ConfigError, "[plan] pretrain environment missing");
    if (environments.size() < 2) throw Error(ErrorKind::ConfigError, "[plan] needs at least two environments");
    std::set<std::string> ids;
    for (const auto& e : environments) {
        if (e == pretrain_env) throw Error(ErrorKind::ConfigError, "pretrain environment also evaluated");
    }
    for (const auto& e : [&] {
             auto all = environments;
             all.push_back(pretrain_env);
             return all;
         }()) {
        if (!env_specs.count(e)) throw Error(ErrorKind::ConfigError, "environment '" + e + "' not defined");
        const auto it = scenes.find(e);
        if (it == scenes.end() || it->second.empty()) throw Error(ErrorKind::ConfigError, "environment '" + e + "' has no scenes");
        if (e != pretrain_env && it->second.size() < 2)
            throw Error(ErrorKind::ConfigError, "environment '" + e + "' needs two scenes");
        try {
            env_specs.at(e).validate();
            for (const auto& s : it->second) {
                s.validate();
                if (!ids.insert(s.scene_id).second) throw Error(ErrorKind::ConfigError, "duplicate scene " + s.scene_id);
            }
        } catch (const Error& err) {
            if (err.kind() == ErrorKind::ConfigError) throw;
            throw Error(ErrorKind::ConfigError, err.message());
        }
    }
}

std::string ExperimentConfig::canonical() const {
    std::map<std::string, std::string> kv;
    auto put = [&](const std::string& k, const auto& v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        kv[k] = os.str();
    };
    put("experiment.seed", seed);
    std::string m;
    for (auto x : methods) m += std::string(to_string(x)) + ",";
    put("experiment.methods", m);
    if (data) put("experiment.data", data->string());
    const auto& k = render.intrinsics;
    put("render.fx", k.fx), put("render.fy", k.fy), put("render.cx", k.cx), put("render.cy", k.cy);
    put("render.width", k.width), put("render.height", k.height);
    put("render.supersample", render.supersample), put("render.camera_height", render.camera_height);
    put("network.init_seed", init_seed);
    put("network.rotation_scale", arch.rotation_scale), put("network.translation_scale", arch.translation_scale);
    put("pretrain.epochs", pretrain.epochs), put("pretrain.learning_rate", pretrain.learning_rate);
    put("pretrain.seed", pretrain.seed);
    put("adaptation.cycles", adaptation.cycles), put("adaptation.learning_rate", adaptation.learning_rate);
    put("adaptation.min_distance", adaptation.min_distance), put("adaptation.replay_per_env", adaptation.replay_per_env);
    put("adaptation.offline_epochs", adaptation.offline_epochs), put("adaptation.seed", adaptation.seed);
    put("loss.smoothness", loss.smoothness), put("loss.velocity", loss.velocity), put("loss.ssim_alpha", loss.ssim_alpha);
    put("loops.enabled", loops.enabled), put("loops.threshold", loops.threshold), put("loops.min_gap", loops.min_gap);
    std::string lens;
    for (double l : segments.lengths) lens += std::to_string(l) + ",";
    put("metrics.lengths", lens), put("metrics.step", segments.step), put("metrics.median_scaling", segments.median_scaling);
    put("plan.pretrain", pretrain_env);
    std::string envs;
    for (const auto& e : environments) envs += e + ",";
    put("plan.environments", envs);
    for (const auto& [id, e] : env_specs) {
        const std::string p = "env:" + id + ".";
        put(p + "texture_seed", e.texture_seed), put(p + "texture_frequency", e.texture_frequency);
        put(p + "texture_octaves", e.texture_octaves), put(p + "contrast", e.contrast), put(p + "gain", e.gain);
        put(p + "bias", e.bias), put(p + "box_density", e.box_density), put(p + "box_height_min", e.box_height_min);
        put(p + "box_height_max", e.box_height_max), put(p + "box_size_min", e.box_size_min);
        put(p + "box_size_max", e.box_size_max), put(p + "velocity_min", e.velocity_min);
        put(p + "velocity_max", e.velocity_max), put(p + "noise_sigma", e.noise_sigma);
        put(p + "velocity_noise", e.velocity_noise);
    }
    for (const auto& [env, list] : scenes) {
        std::string ids;
        for (const auto& s : list) {
            ids += s.scene_id + ",";
            const std::string p = "scene:" + s.scene_id + ".";
            put(p + "env", env), put(p + "seed", s.seed), put(p + "length", s.length);
            put(p + "max_curvature", s.max_curvature), put(p + "revisit", s.revisit), put(p + "frame_rate", s.frame_rate);
        }
        put("env:" + env + ".scenes", ids);
    }
    std::string out;
    for (const auto& [key, v] : kv) out += key + "=" + v + "\n";
    return out;
}

std::string ExperimentConfig::hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << mix64(fnv(canonical()));
    return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    auto section = [&](const std::string& name) {
        const auto it = tree.find(name);
        return Section(name, it == tree.not_found() ? nullptr : &it->second);
    };
    static const std::set<std::string> fixed_sections{"experiment", "render", "network", "pretrain", "adaptation",
                                                      "loss", "loops", "metrics", "plan"};

    ExperimentConfig c;
    {
        Section s = section("experiment");
        s.get("seed", c.seed);
        std::vector<std::string> methods;
        s.get("methods", methods);
        if (!methods.empty()) {
            c.methods.clear();
            for (const auto& m : methods) c.methods.push_back(parse_adaptation_mode(m));
        }
        std::string out = c.output.string(), data;
        s.get("output", out);
        s.get("data", data);
        c.output = out;
        if (!data.empty()) c.data = fs::path(data);
        s.finish();
    }
    {
        Section s = section("render");
        auto& k = c.render.intrinsics;
        s.get("fx", k.fx), s.get("fy", k.fy), s.get("cx", k.cx), s.get("cy", k.cy);
        s.get("width", k.width), s.get("height", k.height);
        s.get("supersample", c.render.supersample), s.get("camera_height", c.render.camera_height);
        s.finish();
        c.arch.image_height = k.height;
        c.arch.image_width = k.width;
    }
    {
        Section s = section("network");
        s.get("init_seed", c.init_seed);
        s.get("rotation_scale", c.arch.rotation_scale), s.get("translation_scale", c.arch.translation_scale);
        s.finish();
    }
    {
        Section s = section("pretrain");
        s.get("epochs", c.pretrain.epochs), s.get("learning_rate", c.pretrain.learning_rate), s.get("seed", c.pretrain.seed);
        s.finish();
    }
    {
        Section s = section("adaptation");
        auto& a = c.adaptation;
        s.get("cycles", a.cycles), s.get("learning_rate", a.learning_rate), s.get("min_distance", a.min_distance);
        s.get("replay_per_env", a.replay_per_env), s.get("offline_epochs", a.offline_epochs), s.get("seed", a.seed);
        s.finish();
    }
    {
        Section s = section("loss");
        s.get("smoothness", c.loss.smoothness), s.get("velocity", c.loss.velocity), s.get("ssim_alpha", c.loss.ssim_alpha);
        s.finish();
    }
    {
        Section s = section("loops");
        s.get("enabled", c.loops.enabled), s.get("threshold", c.loops.threshold), s.get("min_gap", c.loops.min_gap);
        s.finish();
    }
    {
        Section s = section("metrics");
        s.get("lengths", c.segments.lengths), s.get("step", c.segments.step);
        s.get("median_scaling", c.segments.median_scaling);
        s.finish();
    }
    {
        Section s = section("plan");
        s.get("pretrain", c.pretrain_env), s.get("environments", c.environments);
        s.finish();
    }

    std::map<std::string, std::vector<std::string>> env_scene_ids;
    std::map<std::string, SceneSpec> scene_specs;
    for (const auto& [name, body] : tree) {
        if (fixed_sections.count(name)) continue;
        const auto colon = name.find(':');
        const std::string kind = name.substr(0, colon), id = colon == std::string::npos ? "" : name.substr(colon + 1);
        if (colon == std::string::npos || id.empty()) throw Error(ErrorKind::ConfigError, "unknown section [" + name + "]");
        Section s(name, &body);
        if (kind == "env") {
            EnvironmentSpec e;
            e.env_id = id;
            s.get("texture_seed", e.texture_seed), s.get("texture_frequency", e.texture_frequency);
            s.get("texture_octaves", e.texture_octaves), s.get("contrast", e.contrast), s.get("gain", e.gain);
            s.get("bias", e.bias), s.get("box_density", e.box_density);
            s.get("box_height_min", e.box_height_min), s.get("box_height_max", e.box_height_max);
            s.get("box_size_min", e.box_size_min), s.get("box_size_max", e.box_size_max);
            s.get("velocity_min", e.velocity_min), s.get("velocity_max", e.velocity_max);
            s.get("noise_sigma", e.noise_sigma), s.get("velocity_noise", e.velocity_noise);
            std::vector<std::string> ids;
            s.get("scenes", ids);
            env_scene_ids[id] = ids;
            c.env_specs[id] = e;
        } else if (kind == "scene") {
            SceneSpec sc;
            sc.scene_id = id;
            s.get("seed", sc.seed), s.get("length", sc.length), s.get("max_curvature", sc.max_curvature);
            s.get("revisit", sc.revisit), s.get("frame_rate", sc.frame_rate);
            std::string env;
            s.get("env", env);  // informational; membership comes from the env's scene list
            scene_specs[id] = sc;
        } else {
            throw Error(ErrorKind::ConfigError, "unknown section [" + name + "]");
        }
        s.finish();
    }
    for (const auto& [env, ids] : env_scene_ids) {
        for (const auto& id : ids) {
            const auto it = scene_specs.find(id);
            if (it == scene_specs.end()) throw Error(ErrorKind::ConfigError, "scene '" + id + "' has no [scene:" + id + "]");
            c.scenes[env].push_back(it->second);
        }
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::ConfigError, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

// ------------------------------------------------------------------ scenes

namespace {

std::vector<std::string> all_envs(const ExperimentConfig& cfg) {
    std::vector<std::string> out{cfg.pretrain_env};
    out.insert(out.end(), cfg.environments.begin(), cfg.environments.end());
    return out;
}

EnvironmentSpec seeded_env(const ExperimentConfig& cfg, const std::string& id) {
    EnvironmentSpec e = cfg.env_specs.at(id);
    e.texture_seed = derive_seed(cfg.seed, "env:" + id + ":" + std::to_string(e.texture_seed));
    return e;
}

SceneSpec seeded_scene(const ExperimentConfig& cfg, SceneSpec s) {
    s.seed = derive_seed(cfg.seed, "scene:" + s.scene_id + ":" + std::to_string(s.seed));
    return s;
}

}  // namespace

std::map<std::string, RenderedScene> render_scenes(const ExperimentConfig& cfg) {
    std::map<std::string, RenderedScene> out;
    for (const auto& env : all_envs(cfg)) {
        const EnvironmentSpec e = seeded_env(cfg, env);
        for (const auto& s : cfg.scenes.at(env)) out[s.scene_id] = generate_scene(e, seeded_scene(cfg, s), cfg.render);
    }
    return out;
}

void generate_datasets(const ExperimentConfig& cfg, const fs::path& dir) {
    for (const auto& [id, scene] : render_scenes(cfg)) write_dataset(scene, dir / scene.env_id / id);
}

// -------------------------------------------------------------- experiment

namespace {

Trajectory gt_subset(const RenderedScene& s, const std::vector<std::size_t>& frames) {
    Trajectory t;
    for (auto f : frames) t.push_back(s.ground_truth[f].timestamp, s.ground_truth[f].pose);
    return t;
}

std::uint64_t pair_checksum(const NetworkPair& p) { return mix64(p.depth.checksum() ^ mix64(p.pose.checksum())); }

// Sequential loop detection over the accepted frames; the graph is optimized
// at every detection and later nodes are attached to the optimized estimate.
std::pair<Trajectory, std::size_t> close_loops(const DeploymentResult& r, const RenderedScene& scene,
                                               const Learner& learner, const NetworkPair& params,
                                               const LoopSettings& settings) {
    PoseGraph graph;
    DescriptorMemory memory;
    std::size_t loops = 0;
    for (std::size_t k = 0; k < r.frames.size(); ++k) {
        if (k == 0) {
            graph.add_node(r.odometry[0].pose);
        } else {
            const Pose3 z = r.odometry[k - 1].pose.inverse() * r.odometry[k].pose;
            graph.add_node(graph.nodes()[k - 1] * z);
            graph.add_odometry(k - 1, k, z);
        }
        const Descriptor d = describe(*scene.images[r.frames[k]]);
        const auto hits = detect_loops(k, d, memory, settings.threshold, settings.min_gap);
        if (!hits.empty()) {
            const std::size_t j = hits.front().frame;
            const Pose3 z = se3_exp(learner.pose.forward(*scene.images[r.frames[j]], *scene.images[r.frames[k]], params.pose));
            graph.add_loop(j, k, z);
            optimize_graph(graph);
            ++loops;
        }
        memory.add(k, d);
    }
    Trajectory t;
    for (std::size_t k = 0; k < r.frames.size(); ++k) t.push_back(r.odometry[k].timestamp, graph.nodes()[k]);
    return {t, loops};
}

struct Deployed {
    DualState state;
    DeploymentResult result;
    NetworkPair odometry_params;  // network that produced the odometry, at scene end
    bool handoff_ok = true;       // along the whole prefix
};

}  // namespace

ReportTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ReportTable table;
    table.config_hash = cfg.hash();
    table.seed = cfg.seed;
    table.loops = cfg.loops.enabled;

    std::map<std::string, RenderedScene> scenes;
    if (cfg.data) {
        for (const auto& env : all_envs(cfg))
            for (const auto& s : cfg.scenes.at(env)) scenes[s.scene_id] = read_dataset(*cfg.data / env / s.scene_id);
    } else {
        scenes = render_scenes(cfg);
    }

    const Learner learner(cfg.arch, cfg.render.intrinsics, cfg.loss);
    const std::uint64_t init = derive_seed(cfg.seed, "init:" + std::to_string(cfg.init_seed));
    NetworkPair theta0{learner.depth.init_params(derive_seed(init, "depth")),
                       learner.pose.init_params(derive_seed(init, "pose"))};
    std::vector<RenderedScene> pre;
    for (const auto& s : cfg.scenes.at(cfg.pretrain_env)) pre.push_back(scenes.at(s.scene_id));
    PretrainConfig pc = cfg.pretrain;
    pc.seed = derive_seed(cfg.seed, "pretrain:" + std::to_string(cfg.pretrain.seed));
    table.pretrain_losses = pretrain(learner, theta0, pre, pc);

    const SceneRef pre_ref{cfg.pretrain_env, pre.front().scene_id};
    std::vector<std::vector<SceneRef>> env_refs;
    for (const auto& env : cfg.environments) {
        env_refs.emplace_back();
        for (const auto& s : cfg.scenes.at(env)) env_refs.back().push_back({env, s.scene_id});
    }
    table.plan = make_eval_plan(pre_ref, env_refs);
    const auto sequences = table.plan.all_sequences();

    AdaptationConfig ac = cfg.adaptation;
    ac.seed = derive_seed(cfg.seed, "adapt:" + std::to_string(cfg.adaptation.seed));

    std::vector<AdaptationMode> methods = cfg.methods;
    std::sort(methods.begin(), methods.end());
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    for (const AdaptationMode method : methods) {
        ac.mode = method;
        MethodSummary summary;
        summary.method = method;
        summary.checksum_before = pair_checksum(theta0);

        // Prefix memo: every plan sequence shares the pre-training root.
        std::map<DeploymentSequence, Deployed> memo;
        {
            Deployed root{DualState(theta0, ac.learning_rate, ac.seed), {}, theta0, true};
            for (const auto& s : pre)
                for (const auto& t : scene_triplets(s)) root.state.buffer.append(t);
            memo.emplace(DeploymentSequence{pre_ref}, std::move(root));
        }
        std::vector<std::uint64_t> ends;
        for (const auto& seq : sequences) {
            for (std::size_t n = 2; n <= seq.size(); ++n) {
                const DeploymentSequence prefix(seq.begin(), seq.begin() + n);
                if (memo.count(prefix)) continue;
                const Deployed& parent = memo.at(DeploymentSequence(seq.begin(), seq.begin() + n - 1));
                Deployed next{parent.state, {}, {}, parent.handoff_ok};
                const RenderedScene& scene = scenes.at(prefix.back().scene_id);
                try {
                    next.result = run_deployment(next.state, learner, scene, ac);
                } catch (const Error& e) {
                    throw Error(e.kind(), std::string(to_string(method)) + " " + sequence_key(prefix) + ": " + e.message());
                }
                next.handoff_ok = next.handoff_ok && next.result.handoff_ok;
                next.odometry_params = method == AdaptationMode::cl_slam || method == AdaptationMode::expert_only
                                           ? next.state.expert.params
                                       : method == AdaptationMode::general_only ? next.state.generalizer.params
                                                                                : parent.state.stored;
                memo.emplace(prefix, std::move(next));
            }
            const Deployed& d = memo.at(seq);
            const RenderedScene& scene = scenes.at(seq.back().scene_id);
            if (!scene.has_ground_truth()) throw Error(ErrorKind::InvalidArgument, scene.scene_id + " has no ground truth");
            RunRecord rec;
            rec.method = method;
            rec.sequence = seq;
            rec.frames = d.result.frames.size();
            rec.seconds = d.result.seconds;
            Trajectory est = d.result.odometry;
            if (cfg.loops.enabled) {
                auto [t, n] = close_loops(d.result, scene, learner, d.odometry_params, cfg.loops);
                est = std::move(t);
                rec.loops = n;
            }
            rec.errors = relative_segment_errors(gt_subset(scene, d.result.frames), est, cfg.segments);
            rec.base = remap_errors(rec.errors);
            table.records.push_back(rec);
            summary.handoff_ok = summary.handoff_ok && d.handoff_ok;
            ends.push_back(pair_checksum(d.state.stored));
        }
        summary.checksum_after_min = *std::min_element(ends.begin(), ends.end());
        summary.checksum_after_max = *std::max_element(ends.begin(), ends.end());

        std::vector<DeploymentRecord> recs;
        for (const auto& r : table.records)
            if (r.method == method) recs.push_back({r.sequence, r.errors});
        summary.aq = adaptation_quality(table.plan, recs);
        summary.rq = retention_quality(table.plan, recs);
        table.methods.push_back(summary);
    }
    table.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return table;
}

// ----------------------------------------------------------------- reports

namespace {

nlohmann::json seq_json(const DeploymentSequence& s) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : s) j.push_back(r.env_id + "/" + r.scene_id);
    return j;
}

DeploymentSequence seq_from_json(const nlohmann::json& j) {
    DeploymentSequence s;
    for (const auto& x : j) {
        const std::string v = x.get<std::string>();
        const auto slash = v.find('/');
        if (slash == std::string::npos) throw Error(ErrorKind::ParseError, "bad scene reference " + v);
        s.push_back({v.substr(0, slash), v.substr(slash + 1)});
    }
    return s;
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::uint64_t unhex(const std::string& s) { return std::stoull(s, nullptr, 16); }

std::string previous_scenes(const DeploymentSequence& s) {
    std::string out;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) out += (i ? ">" : "") + s[i].scene_id;
    return out;
}

}  // namespace

nlohmann::json report_to_json(const ReportTable& t) {
    nlohmann::json j;
    j["config_hash"] = t.config_hash;
    j["seed"] = t.seed;
    j["loops"] = t.loops;
    j["pretrain_losses"] = t.pretrain_losses;
    j["plan"]["pretrain"] = t.plan.pretrain.env_id + "/" + t.plan.pretrain.scene_id;
    j["plan"]["environments"] = nlohmann::json::array();
    for (const auto& env : t.plan.environments) j["plan"]["environments"].push_back(seq_json(env));
    for (const auto& s : t.plan.aq) j["plan"]["aq"].push_back(seq_json(s));
    for (const auto& p : t.plan.rq)
        j["plan"]["rq"].push_back({{"mixed", seq_json(p.mixed)}, {"reference", seq_json(p.reference)}});
    j["records"] = nlohmann::json::array();
    j["timing"]["total_seconds"] = t.seconds;
    j["timing"]["deployment_seconds"] = nlohmann::json::array();
    for (const auto& r : t.records) {
        j["records"].push_back({{"method", to_string(r.method)},
                                {"sequence", seq_json(r.sequence)},
                                {"t_err", r.errors.t_err},
                                {"r_err", r.errors.r_err},
                                {"segments", r.errors.segments},
                                {"t_hat", r.base.trans},
                                {"r_hat", r.base.rot},
                                {"frames", r.frames},
                                {"loops", r.loops}});
        j["timing"]["deployment_seconds"].push_back(r.seconds);
    }
    for (const auto& m : t.methods) {
        j["methods"].push_back({{"method", to_string(m.method)},
                                {"AQ_trans", m.aq.trans},
                                {"AQ_rot", m.aq.rot},
                                {"RQ_trans", m.rq.trans},
                                {"RQ_rot", m.rq.rot},
                                {"handoff_ok", m.handoff_ok},
                                {"checksum_before", hex(m.checksum_before)},
                                {"checksum_after_min", hex(m.checksum_after_min)},
                                {"checksum_after_max", hex(m.checksum_after_max)}});
    }
    return j;
}

ReportTable report_from_json(const nlohmann::json& j) {
    try {
        ReportTable t;
        t.config_hash = j.at("config_hash").get<std::string>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.loops = j.at("loops").get<bool>();
        t.pretrain_losses = j.at("pretrain_losses").get<std::vector<double>>();
        t.plan.pretrain = seq_from_json(nlohmann::json::array({j.at("plan").at("pretrain")})).front();
        for (const auto& e : j.at("plan").at("environments")) t.plan.environments.push_back(seq_from_json(e));
        for (const auto& s : j.at("plan").at("aq")) t.plan.aq.push_back(seq_from_json(s));
        for (const auto& p : j.at("plan").at("rq"))
            t.plan.rq.push_back({seq_from_json(p.at("mixed")), seq_from_json(p.at("reference"))});
        const auto& secs = j.at("timing").at("deployment_seconds");
        std::size_t i = 0;
        for (const auto& r : j.at("records")) {
            RunRecord rec;
            rec.method = parse_adaptation_mode(r.at("method").get<std::string>());
            rec.sequence = seq_from_json(r.at("sequence"));
            rec.errors = {r.at("t_err").get<double>(), r.at("r_err").get<double>(), r.at("segments").get<std::size_t>()};
            rec.base = {r.at("t_hat").get<double>(), r.at("r_hat").get<double>()};
            rec.frames = r.at("frames").get<std::size_t>();
            rec.loops = r.at("loops").get<std::size_t>();
            rec.seconds = i < secs.size() ? secs[i].get<double>() : 0.0;
            ++i;
            t.records.push_back(rec);
        }
        for (const auto& m : j.at("methods")) {
            MethodSummary s;
            s.method = parse_adaptation_mode(m.at("method").get<std::string>());
            s.aq = {m.at("AQ_trans").get<double>(), m.at("AQ_rot").get<double>()};
            s.rq = {m.at("RQ_trans").get<double>(), m.at("RQ_rot").get<double>()};
            s.handoff_ok = m.at("handoff_ok").get<bool>();
            s.checksum_before = unhex(m.at("checksum_before").get<std::string>());
            s.checksum_after_min = unhex(m.at("checksum_after_min").get<std::string>());
            s.checksum_after_max = unhex(m.at("checksum_after_max").get<std::string>());
            t.methods.push_back(s);
        }
        t.seconds = j.at("timing").at("total_seconds").get<double>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, std::string("report: ") + e.what());
    } catch (const Error& e) {
        throw Error(ErrorKind::ParseError, std::string("report: ") + e.message());
    }
}

std::string report_csv(const ReportTable& t) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "method,sequence,previous,current,t_err,r_err,t_hat,r_hat,frames,loops,config_hash\n";
    for (const auto& r : t.records) {
        os << to_string(r.method) << "," << sequence_key(r.sequence) << "," << previous_scenes(r.sequence) << ","
           << r.sequence.back().scene_id << "," << r.errors.t_err << "," << r.errors.r_err << "," << r.base.trans << ","
           << r.base.rot << "," << r.frames << "," << r.loops << "," << t.config_hash << "\n";
    }
    return os.str();
}

std::string report_text(const ReportTable& t) {
    std::ostringstream os;
    os << "config " << t.config_hash << "  seed " << t.seed << "  loops " << (t.loops ? "on" : "off") << "\n\n";
    std::vector<AdaptationMode> methods;
    for (const auto& m : t.methods) methods.push_back(m.method);

    auto find = [&](AdaptationMode m, const DeploymentSequence& s) -> const RunRecord* {
        for (const auto& r : t.records)
            if (r.method == m && r.sequence == s) return &r;
        return nullptr;
    };
    auto row = [&](const std::string& used, const DeploymentSequence& s) {
        os << std::left << std::setw(5) << used << std::setw(26) << previous_scenes(s) << std::setw(9)
           << s.back().scene_id;
        for (auto m : methods) {
            const RunRecord* r = find(m, s);
            if (r) {
                os << std::right << std::fixed << std::setprecision(2) << std::setw(9) << r->errors.t_err
                   << std::setw(8) << r->errors.r_err;
            } else {
                os << std::setw(17) << "--";
            }
        }
        os << "\n";
    };
    os << std::left << std::setw(5) << "Used" << std::setw(26) << "Previous scenes" << std::setw(9) << "Current";
    for (auto m : methods) os << std::right << std::setw(17) << to_string(m);
    os << "\n" << std::setw(40) << "";
    for (std::size_t i = 0; i < methods.size(); ++i) os << std::right << std::setw(9) << "t_err%" << std::setw(8) << "r_err";
    os << "\n";
    for (const auto& s : t.plan.aq) row("AQ", s);
    for (const auto& p : t.plan.rq) row("RQ", p.mixed);
    for (const auto& p : t.plan.rq) row("RQ*", p.reference);
    os << "(r_err in deg/100m; RQ* rows are the reference deployments)\n\n";

    os << std::left << std::setw(14) << "Method" << std::right << std::setw(10) << "AQ_trans" << std::setw(10)
       << "AQ_rot" << std::setw(12) << "RQ_trans" << std::setw(12) << "RQ_rot" << "  handoff\n";
    for (const auto& m : t.methods) {
        os << std::left << std::setw(14) << to_string(m.method) << std::right << std::fixed << std::setprecision(3)
           << std::setw(10) << m.aq.trans << std::setw(10) << m.aq.rot << std::setprecision(4) << std::setw(12)
           << m.rq.trans << std::setw(12) << m.rq.rot << "  " << (m.handoff_ok ? "ok" : "BROKEN") << "\n";
    }
    return os.str();
}

void emit_report(const ReportTable& t, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string());
    auto write = [&](const std::string& name, const std::string& body) {
        const fs::path p = dir / name;
        std::ofstream os(p);
        os << body;
        os.close();
        if (!os) throw Error(ErrorKind::IoError, "cannot write " + p.string());
    };
    write("report.json", report_to_json(t).dump(2) + "\n");
    write("report.csv", report_csv(t));
    write("report.txt", report_text(t));
}

}  // namespace clslam
