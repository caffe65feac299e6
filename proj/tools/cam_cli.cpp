// cam: command-line front end for the masked-autoencoder surface anomaly pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "cam/cam.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    bool serial = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "INI config file (built-in defaults otherwise)");
    sub->add_option("--seed", f.seed, "Master seed (overrides [general] seed)");
    sub->add_option("--out", f.out, "Output directory (overrides [paths] out_dir)");
    sub->add_option("--data", f.data, "Cohort directory (overrides [paths] data_dir)");
    sub->add_flag("--serial", f.serial, "Single-threaded execution for bit-reproducible output");
}

cam::PipelineConfig resolve(const CommonFlags& f) {
    cam::PipelineConfig cfg;
    if (!f.config.empty()) cfg = cam::load_pipeline_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.data.empty()) cfg.data_dir = f.data;
    cfg.serial = f.serial;
    cam::sync_config(cfg);
    cfg.validate();
    return cfg;
}

void print_config(const std::string& command, const cam::PipelineConfig& cfg) {
    std::cout << "# cam " << command << " (resolved configuration)\n" << cam::format_pipeline_config(cfg) << '\n';
}

int run(int argc, char** argv) {
    CLI::App app{"Masked-autoencoder anomaly detection on icosphere cortical surface features"};
    app.require_subcommand(1);

    int order = 6;
    std::string obj_out;
    CommonFlags gen_flags;
    auto* gen = app.add_subcommand("gen-icosphere", "Build an icosphere and write it as an ICOM mesh file");
    gen->add_option("--order", order, "Subdivision order (0-8)")->capture_default_str();
    gen->add_option("--obj", obj_out, "Also write a Wavefront OBJ file");
    add_common(gen, gen_flags);

    CommonFlags synth_flags, train_flags, score_flags, eval_flags, patch_flags;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort, ROI map and manifest");
    add_common(synth, synth_flags);
    auto* train = app.add_subcommand("train", "Train the masked encoder on the healthy train/val splits");
    add_common(train, train_flags);
    auto* score = app.add_subcommand("score", "Score the test split with iterative masked reconstruction");
    add_common(score, score_flags);
    auto* evaluate = app.add_subcommand("evaluate", "AUC, permutation test, ROI t-tests and baselines");
    add_common(evaluate, eval_flags);

    std::string patch_input;
    auto* patch = app.add_subcommand("patchify", "Write one feature file as a 320 x 153 patch matrix (CSV)");
    patch->add_option("--input", patch_input, "Feature file (.camf)")->required();
    add_common(patch, patch_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*gen) {
        std::cout << "# cam gen-icosphere\norder = " << order << "\nout = " << (gen_flags.out.empty() ? "-" : gen_flags.out)
                  << "\nobj = " << (obj_out.empty() ? "-" : obj_out) << "\n\n";
        if (order < 0) throw cam::BoundsError("order must be nonnegative");
        const auto mesh = cam::build_icosphere(order);
        if (!gen_flags.out.empty()) cam::write_icom(mesh, gen_flags.out);
        if (!obj_out.empty()) cam::write_obj(mesh, obj_out);
        std::cout << mesh.vertex_count() << " vertices, " << mesh.faces.size() << " faces\n";
        return 0;
    }
    if (*patch) {
        std::cout << "# cam patchify\ninput = " << patch_input << "\nout = " << (patch_flags.out.empty() ? "-" : patch_flags.out)
                  << "\n\n";
        const auto geo = cam::build_geometry();
        const auto x = cam::patchify(cam::read_surface_sample(patch_input), geo.layout);
        std::ofstream file;
        if (!patch_flags.out.empty()) {
            file.open(patch_flags.out, std::ios::trunc);
            if (!file) throw cam::IoError("cannot open for writing: " + patch_flags.out);
        }
        std::ostream& os = patch_flags.out.empty() ? std::cout : file;
        os << std::setprecision(9);
        for (Eigen::Index p = 0; p < x.data.rows(); ++p) {
            for (Eigen::Index j = 0; j < x.data.cols(); ++j) os << (j ? "," : "") << x.data(p, j);
            os << '\n';
        }
        return 0;
    }

    if (*synth) {
        const auto cfg = resolve(synth_flags);
        print_config("synth", cfg);
        cam::run_synth(cfg, cam::build_geometry(), std::cout);
    } else if (*train) {
        const auto cfg = resolve(train_flags);
        print_config("train", cfg);
        cam::run_train(cfg, cam::build_geometry(), std::cout);
    } else if (*score) {
        const auto cfg = resolve(score_flags);
        print_config("score", cfg);
        cam::run_score(cfg, cam::build_geometry(), std::cout);
    } else if (*evaluate) {
        const auto cfg = resolve(eval_flags);
        print_config("evaluate", cfg);
        cam::run_evaluate(cfg, std::cout);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const cam::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const cam::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const cam::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
