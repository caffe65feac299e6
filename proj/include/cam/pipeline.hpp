#pragma once
// End-to-end stages (synth, train, score, evaluate) driven by one INI config.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "anomaly.hpp"
#include "checkpoint.hpp"
#include "detectors.hpp"
#include "icosphere.hpp"
#include "manifest.hpp"
#include "patch_layout.hpp"
#include "roi.hpp"
#include "stats.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

namespace cam {

struct PipelineConfig {
    // [general]
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0 = all hardware threads
    Feature feature = Feature::Thickness;
    // [paths]
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "out";
    std::filesystem::path roi_map;  // empty: data_dir/rois.camr
    // [encoder], [train], [anomaly]
    EncoderConfig encoder;
    TrainConfig train;
    std::size_t iterations = 10;
    // [synth]
    SynthConfig synth;
    std::size_t n_rois = 8;
    // [evaluate]
    std::size_t n_perm = 10000;
    double alpha = 0.01;
    bool welch = false;
    bool baselines = true;
    std::size_t gmm_components = 1;
    std::size_t iforest_estimators = 100;

    bool serial = false;

    unsigned resolved_threads() const { return serial ? 1u : (threads ? threads : default_threads()); }
    std::filesystem::path roi_map_path() const { return roi_map.empty() ? data_dir / "rois.camr" : roi_map; }
    std::filesystem::path manifest_path() const { return data_dir / "manifest.csv"; }
    std::filesystem::path model_path() const { return out_dir / "model.camw"; }
    std::filesystem::path norm_path() const { return out_dir / "norm.camn"; }
    std::filesystem::path train_log_path() const { return out_dir / "train_log.jsonl"; }
    std::filesystem::path scores_path() const { return out_dir / "scores.csv"; }
    std::filesystem::path report_path() const { return out_dir / "evaluation.json"; }
    std::filesystem::path summary_path() const { return out_dir / "summary.csv"; }
    std::filesystem::path roi_table_path() const { return out_dir / "roi_table.csv"; }

    void validate() const {
        encoder.validate();
        if (encoder.patches != 320 || encoder.patch_dim != 153)
            throw ConfigError("encoder geometry is fixed at 320 patches of 153 vertices");
        train.validate();
        if (iterations < 1 || iterations > encoder.patches)
            throw ConfigError("anomaly.iterations must lie in [1, " + std::to_string(encoder.patches) + "]");
        if (n_rois < 1 || n_rois > 65535) throw ConfigError("synth.n_rois must lie in [1, 65535]");
        for (auto id : synth.anomaly_roi_ids)
            if (id >= n_rois) throw ConfigError("synth.anomaly_rois: id " + std::to_string(id) + " >= n_rois");
        if (synth.n_train < 2 || synth.n_val < 1) throw ConfigError("synth: need n_train >= 2 and n_val >= 1");
        if (n_perm < 1) throw ConfigError("evaluate.n_perm must be positive");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("evaluate.alpha must lie in (0, 1)");
        if (gmm_components < 1 || iforest_estimators < 1)
            throw ConfigError("evaluate: gmm_components and iforest_estimators must be positive");
    }
};

namespace detail {

struct ConfigField {
    std::string section, key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& s, const std::string& name) {
    std::istringstream in(s);
    T v{};
    in >> v;
    if (!in || !(in >> std::ws).eof()) throw ConfigError(name + ": cannot parse \"" + s + "\"");
    return v;
}

inline bool parse_bool(const std::string& s, const std::string& name) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(name + ": expected a boolean, got \"" + s + "\"");
}

inline std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

inline std::vector<ConfigField> config_fields(PipelineConfig& c) {
    std::vector<ConfigField> f;
    auto add_size = [&](std::string sec, std::string key, std::size_t& ref) {
        const std::string name = sec + "." + key;
        f.push_back({sec, key, [&ref] { return std::to_string(ref); },
                     [&ref, name](const std::string& s) {
                         if (!s.empty() && s[0] == '-') throw ConfigError(name + ": must be nonnegative");
                         ref = parse_value<std::size_t>(s, name);
                     }});
    };
    auto add_double = [&](std::string sec, std::string key, double& ref) {
        const std::string name = sec + "." + key;
        f.push_back({sec, key, [&ref] { return format_double(ref); },
                     [&ref, name](const std::string& s) { ref = parse_value<double>(s, name); }});
    };
    auto add_bool = [&](std::string sec, std::string key, bool& ref) {
        const std::string name = sec + "." + key;
        f.push_back({sec, key, [&ref] { return std::string(ref ? "true" : "false"); },
                     [&ref, name](const std::string& s) { ref = parse_bool(s, name); }});
    };
    auto add_path = [&](std::string sec, std::string key, std::filesystem::path& ref) {
        f.push_back({sec, key, [&ref] { return ref.string(); }, [&ref](const std::string& s) { ref = s; }});
    };

    f.push_back({"general", "seed", [&c] { return std::to_string(c.seed); },
                 [&c](const std::string& s) { c.seed = parse_value<std::uint64_t>(s, "general.seed"); }});
    f.push_back({"general", "threads", [&c] { return std::to_string(c.threads); },
                 [&c](const std::string& s) { c.threads = parse_value<unsigned>(s, "general.threads"); }});
    f.push_back({"general", "feature", [&c] { return std::string(feature_name(c.feature)); },
                 [&c](const std::string& s) { c.feature = parse_feature(s); }});
    add_path("paths", "data_dir", c.data_dir);
    add_path("paths", "out_dir", c.out_dir);
    add_path("paths", "roi_map", c.roi_map);

    add_size("encoder", "layers", c.encoder.layers);
    add_size("encoder", "heads", c.encoder.heads);
    add_size("encoder", "dim", c.encoder.dim);
    add_double("encoder", "mask_ratio", c.encoder.mask_ratio);
    add_bool("encoder", "use_ffn", c.encoder.use_ffn);
    add_size("encoder", "ffn_mult", c.encoder.ffn_mult);
    add_double("encoder", "ln_eps", c.encoder.ln_eps);

    add_double("train", "learning_rate", c.train.learning_rate);
    add_size("train", "max_epochs", c.train.max_epochs);
    add_size("train", "batch_size", c.train.batch_size);
    add_size("train", "patience", c.train.patience);
    add_double("train", "weight_decay", c.train.weight_decay);
    add_double("train", "eta_min", c.train.eta_min);

    add_size("anomaly", "iterations", c.iterations);

    add_size("synth", "n_train", c.synth.n_train);
    add_size("synth", "n_val", c.synth.n_val);
    add_size("synth", "n_test_healthy", c.synth.n_test_healthy);
    add_size("synth", "n_anomalous", c.synth.n_anomalous);
    add_size("synth", "n_rois", c.n_rois);
    f.push_back({"synth", "smoothness_degree", [&c] { return std::to_string(c.synth.smoothness_degree); },
                 [&c](const std::string& s) { c.synth.smoothness_degree = parse_value<int>(s, "synth.smoothness_degree"); }});
    f.push_back({"synth", "anomaly_rois",
                 [&c] {
                     std::string out;
                     for (std::size_t i = 0; i < c.synth.anomaly_roi_ids.size(); ++i)
                         out += (i ? "," : "") + std::to_string(c.synth.anomaly_roi_ids[i]);
                     return out;
                 },
                 [&c](const std::string& s) {
                     c.synth.anomaly_roi_ids.clear();
                     for (const auto& tok : split_csv_line(s))
                         if (!tok.empty()) c.synth.anomaly_roi_ids.push_back(parse_value<std::size_t>(tok, "synth.anomaly_rois"));
                 }});
    add_double("synth", "amplitude_sigma", c.synth.anomaly_amplitude_sigma);
    add_double("synth", "smooth_sigma", c.synth.smooth_sigma);
    add_double("synth", "noise_sigma", c.synth.noise_sigma);
    add_double("synth", "base_value", c.synth.base_value);

    add_size("evaluate", "n_perm", c.n_perm);
    add_double("evaluate", "alpha", c.alpha);
    add_bool("evaluate", "welch", c.welch);
    add_bool("evaluate", "baselines", c.baselines);
    add_size("evaluate", "gmm_components", c.gmm_components);
    add_size("evaluate", "iforest_estimators", c.iforest_estimators);
    return f;
}

}  // namespace detail

// Keeps derived copies (synth/train seeds, feature) in sync after overrides.
inline void sync_config(PipelineConfig& c) {
    c.synth.seed = c.seed;
    c.synth.feature = c.feature;
    c.train.seed = c.seed;
    c.train.threads = c.resolved_threads();
}

// Applies `[section] key = value` pairs on top of `base`; unknown sections or
// keys are rejected.
inline PipelineConfig parse_pipeline_config(std::istream& in, PipelineConfig base = {},
                                            const std::string& source = "<config>") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    auto fields = detail::config_fields(base);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(source + ": key \"" + section + "\" outside any section");
        for (const auto& [key, value] : body) {
            auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const auto& f) { return f.section == section && f.key == key; });
            if (it == fields.end()) throw ConfigError(source + ": unknown key [" + section + "] " + key);
            it->set(value.data());
        }
    }
    sync_config(base);
    return base;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse_pipeline_config(in, std::move(base), path.string());
}

inline std::string format_pipeline_config(const PipelineConfig& cfg) {
    PipelineConfig copy = cfg;
    std::ostringstream out;
    std::string section;
    for (const auto& f : detail::config_fields(copy)) {
        if (f.section != section) {
            out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
            section = f.section;
        }
        out << f.key << " = " << f.get() << '\n';
    }
    out << "\n# serial = " << (cfg.serial ? "true" : "false") << ", threads used = " << cfg.resolved_threads() << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Stages

struct Geometry {
    IcoMesh mesh;
    PatchLayout layout;
};

inline Geometry build_geometry() {
    Geometry g{build_icosphere(kMeshOrder), {}};
    g.layout = build_patch_layout(g.mesh);
    return g;
}

inline void require_artifact(const std::filesystem::path& p, const std::string& what, const std::string& producer) {
    if (!std::filesystem::exists(p))
        throw IoError("missing " + what + " " + p.string() + " (run `" + producer + "` first)");
}

inline CohortManifest run_synth(const PipelineConfig& cfg, const Geometry& geo, std::ostream& log) {
    const auto rois = synth_roi_map(geo.mesh, cfg.n_rois, derive_seed(cfg.seed, 0x524F49));
    std::filesystem::create_directories(cfg.data_dir);
    write_roi_map(rois, cfg.data_dir / "rois.camr");
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    sc.feature = cfg.feature;
    const SyntheticGenerator gen(geo.mesh, rois, sc);
    const auto subjects = gen.generate(cfg.resolved_threads());
    auto m = write_synthetic_cohort(subjects, cfg.data_dir);
    log << "synth: wrote " << subjects.size() << " subjects and " << rois.roi_count() << " ROIs to "
        << cfg.data_dir.string() << '\n';
    return m;
}

inline std::vector<Mat<float>> load_patch_inputs(const std::vector<ManifestEntry>& entries, const NormStats& norm,
                                                 const PatchLayout& layout, unsigned threads) {
    std::vector<Mat<float>> out(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        out[i] = patchify(apply_norm(read_surface_sample(entries[i].path), norm), layout).data.cast<float>();
    });
    return out;
}

inline std::vector<SurfaceSample> load_samples(const std::vector<ManifestEntry>& entries, unsigned threads) {
    std::vector<SurfaceSample> out(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) { out[i] = read_surface_sample(entries[i].path); });
    return out;
}

inline TrainResult run_train(const PipelineConfig& cfg, const Geometry& geo, std::ostream& log) {
    require_artifact(cfg.manifest_path(), "cohort manifest", "synth");
    const auto manifest = read_manifest(cfg.manifest_path());
    const auto train_entries = manifest.select(Split::Train);
    const auto val_entries = manifest.select(Split::Val);
    for (const auto& e : train_entries)
        if (e.group != Group::Healthy) throw ConfigError("training split contains non-healthy subject " + e.subject_id);
    if (train_entries.size() < 2 || val_entries.empty())
        throw ValidationError("manifest needs >= 2 train and >= 1 val subjects");
    const unsigned threads = cfg.resolved_threads();

    const auto norm = fit_norm_stats(load_samples(train_entries, threads));
    const auto train_x = load_patch_inputs(train_entries, norm, geo.layout, threads);
    const auto val_x = load_patch_inputs(val_entries, norm, geo.layout, threads);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.threads = threads;
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream jl(cfg.train_log_path(), std::ios::trunc);
    if (!jl) throw IoError("cannot open for writing: " + cfg.train_log_path().string());
    auto init = EncoderParams<float>::init(cfg.encoder, derive_seed(cfg.seed, 0x494E4954));
    log << "train: " << train_x.size() << " train / " << val_x.size() << " val subjects, "
        << init.parameter_count() << " parameters, seed " << cfg.seed << '\n';
    auto result = train(train_x, val_x, std::move(init), tc, [&](const EpochRecord& r) {
        const nlohmann::json line = {{"epoch", r.epoch}, {"train_l1", r.train_l1}, {"val_l1", r.val_l1},
                                     {"lr", r.lr},       {"seed", cfg.seed}};
        jl << line.dump() << '\n';
        jl.flush();
        log << "  epoch " << r.epoch << "  train_l1 " << r.train_l1 << "  val_l1 " << r.val_l1 << '\n';
    });
    save_checkpoint(result.params, cfg.model_path());
    write_norm_stats(norm, cfg.norm_path());
    log << "train: best epoch " << result.best_epoch << " (val_l1 " << result.best_val_l1 << ")"
        << (result.stopped_early ? ", stopped early" : "") << "; wrote " << cfg.model_path().string() << '\n';
    return result;
}

inline std::vector<AnomalyReport> run_score(const PipelineConfig& cfg, const Geometry& geo, std::ostream& log) {
    require_artifact(cfg.manifest_path(), "cohort manifest", "synth");
    require_artifact(cfg.roi_map_path(), "ROI map", "synth");
    require_artifact(cfg.model_path(), "model checkpoint", "train");
    require_artifact(cfg.norm_path(), "normalization statistics", "train");
    const auto manifest = read_manifest(cfg.manifest_path());
    const auto rois = read_roi_map(cfg.roi_map_path(), geo.mesh.vertex_count());
    const auto params = load_checkpoint<float>(cfg.model_path());
    const auto norm = read_norm_stats(cfg.norm_path());
    if (norm.feature != cfg.feature)
        throw ConfigError("normalization statistics are for feature " + std::string(feature_name(norm.feature)) +
                          ", config selects " + std::string(feature_name(cfg.feature)));
    const auto schedule = build_schedule(params.config.patches, cfg.iterations);
    const auto test = manifest.select(Split::Test);
    if (test.empty()) throw ValidationError("manifest has no test subjects");
    auto reports = score_cohort(test, params, norm, geo.layout, rois, schedule, cfg.resolved_threads());
    std::filesystem::create_directories(cfg.out_dir);
    write_score_csv(reports, rois, cfg.scores_path());
    log << "score: " << reports.size() << " subjects, T = " << cfg.iterations << "; wrote "
        << cfg.scores_path().string() << '\n';
    return reports;
}

// ROI-mean feature rows for the classical detectors.
inline detectors::Matrix roi_feature_matrix(const std::vector<SurfaceSample>& samples, const RoiMap& rois) {
    detectors::Matrix m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(rois.roi_count()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto f = roi_means(samples[i].values, rois);
        for (std::size_t k = 0; k < f.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
    }
    return m;
}

struct BaselineAucs {
    double ecod = 0.5, gmm = 0.5, iforest = 0.5;
};

// Fits each detector on `train` rows and returns test-set AUCs.
inline BaselineAucs baseline_aucs(const detectors::Matrix& train, const detectors::Matrix& test,
                                  const std::vector<int>& labels, std::size_t gmm_components,
                                  std::size_t iforest_estimators, std::uint64_t seed) {
    auto auc_of = [&](const std::vector<double>& s) { return stats::auc({s, labels, {}}); };
    BaselineAucs b;
    b.ecod = auc_of(detectors::ecod_score(train, test));
    b.gmm = auc_of(detectors::gmm_score(train, test, gmm_components, derive_seed(seed, 0x474D4D)));
    b.iforest = auc_of(detectors::iforest_score(train, test, iforest_estimators, derive_seed(seed, 0x49464F)));
    return b;
}

inline nlohmann::json run_evaluate(const PipelineConfig& cfg, std::ostream& log) {
    require_artifact(cfg.scores_path(), "score table", "score");
    const auto table = read_score_csv(cfg.scores_path());
    std::vector<std::vector<double>> healthy, cases;
    stats::LabeledScores global;
    global.group = "healthy vs anomalous";
    for (const auto& r : table.rows) {
        (r.group == Group::Healthy ? healthy : cases).push_back(r.roi_scores);
        global.scores.push_back(r.global_score);
        global.labels.push_back(r.group == Group::Anomalous ? 1 : 0);
    }
    if (healthy.empty() || cases.empty())
        throw ValidationError("both classes required (score table has " + std::to_string(healthy.size()) +
                              " healthy and " + std::to_string(cases.size()) + " anomalous subjects)");

    nlohmann::json rep;
    rep["group"] = global.group;
    rep["n_healthy"] = healthy.size();
    rep["n_anomalous"] = cases.size();
    rep["seed"] = cfg.seed;
    rep["auc"] = stats::auc(global);
    rep["p_value"] = stats::permutation_test_auc(global, cfg.n_perm, cfg.seed);
    rep["n_perm"] = cfg.n_perm;
    rep["alpha"] = cfg.alpha;
    rep["t_test"] = cfg.welch ? "welch" : "student";

    const auto all = stats::roi_tests(healthy, cases, table.roi_names, cfg.welch);
    nlohmann::json roi_table = nlohmann::json::array();
    for (const auto& r : all)
        roi_table.push_back({{"roi", r.roi}, {"auc", r.auc}, {"t", r.t}, {"p", r.p}, {"significant", r.p < cfg.alpha}});
    rep["roi_table"] = roi_table;
    nlohmann::json identified = nlohmann::json::array();
    for (const auto& r : stats::identify_rois(healthy, cases, table.roi_names, cfg.alpha, cfg.welch))
        identified.push_back({{"roi", r.roi}, {"auc", r.auc}, {"t", r.t}, {"p", r.p}});
    rep["identified_rois"] = identified;

    std::optional<BaselineAucs> base;
    if (cfg.baselines) {
        require_artifact(cfg.manifest_path(), "cohort manifest", "synth");
        require_artifact(cfg.roi_map_path(), "ROI map", "synth");
        const auto manifest = read_manifest(cfg.manifest_path());
        const auto rois = read_roi_map(cfg.roi_map_path());
        const unsigned threads = cfg.resolved_threads();
        // Detectors need no early stopping, so they fit on every healthy non-test subject.
        auto train_entries = manifest.select(Split::Train);
        const auto val_entries = manifest.select(Split::Val);
        train_entries.insert(train_entries.end(), val_entries.begin(), val_entries.end());
        std::vector<ManifestEntry> test_entries;
        for (const auto& r : table.rows) {
            auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                   [&](const auto& e) { return e.subject_id == r.subject_id; });
            if (it == manifest.entries.end())
                throw ValidationError("scored subject " + r.subject_id + " is not in the manifest");
            test_entries.push_back(*it);
        }
        const auto train_m = roi_feature_matrix(load_samples(train_entries, threads), rois);
        const auto test_m = roi_feature_matrix(load_samples(test_entries, threads), rois);
        base = baseline_aucs(train_m, test_m, global.labels, cfg.gmm_components, cfg.iforest_estimators, cfg.seed);
        rep["baselines"] = {{"ecod", base->ecod}, {"gmm", base->gmm}, {"iforest", base->iforest}};
    }

    std::filesystem::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.report_path(), std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + cfg.report_path().string());
        out << rep.dump(2) << '\n';
    }
    {
        std::ofstream out(cfg.summary_path(), std::ios::trunc);
        out << std::setprecision(kScorePrecision) << "method,group,auc,p_value\n";
        out << "cam," << global.group << ',' << rep["auc"].get<double>() << ',' << rep["p_value"].get<double>() << '\n';
        if (base) {
            out << "ecod," << global.group << ',' << base->ecod << ",\n";
            out << "gmm," << global.group << ',' << base->gmm << ",\n";
            out << "iforest," << global.group << ',' << base->iforest << ",\n";
        }
    }
    {
        std::ofstream out(cfg.roi_table_path(), std::ios::trunc);
        out << std::setprecision(kScorePrecision) << "roi,auc,t,p,significant\n";
        for (const auto& r : all) out << r.roi << ',' << r.auc << ',' << r.t << ',' << r.p << ',' << (r.p < cfg.alpha) << '\n';
    }
    log << "evaluate: AUC " << rep["auc"].get<double>() << ", permutation p " << rep["p_value"].get<double>() << " ("
        << cfg.n_perm << " permutations), " << identified.size() << " ROI(s) with p < " << cfg.alpha << '\n';
    return rep;
}

}  // namespace cam
