#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "daf/config.hpp"
#include "daf/dataset.hpp"
#include "daf/error.hpp"
#include "daf/eval.hpp"
#include "daf/image.hpp"
#include "daf/rasterops.hpp"
#include "daf/rng.hpp"
#include "daf/segtrain.hpp"
#include "daf/synth.hpp"
#include "daf/weights_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Args {
    std::string command;
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    bool out_set = false;
    // generator-only knobs
    int n_train = 80;
    int n_test_normal = 20;
    int n_test_anom = 20;
    int donor_count = 12;
};

std::string numbered(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return buf;
}

const char* error_type(const std::exception& e) {
    if (dynamic_cast<const daf::DegenerateBatchError*>(&e)) return "DegenerateBatchError";
    if (dynamic_cast<const daf::TrainError*>(&e)) return "TrainError";
    if (dynamic_cast<const daf::MetricError*>(&e)) return "MetricError";
    if (dynamic_cast<const daf::SchemaError*>(&e)) return "SchemaError";
    if (dynamic_cast<const daf::ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const daf::ShapeError*>(&e)) return "ShapeError";
    if (dynamic_cast<const daf::ParamError*>(&e)) return "ParamError";
    if (dynamic_cast<const daf::FormatError*>(&e)) return "FormatError";
    if (dynamic_cast<const daf::IoError*>(&e)) return "IoError";
    if (dynamic_cast<const daf::Error*>(&e)) return "Error";
    return "InternalError";
}

int fail(const std::exception& e) {
    nlohmann::ordered_json j;
    j["error"]["type"] = error_type(e);
    j["error"]["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw daf::IoError("cannot write " + path.string());
    f << text;
    if (!f) throw daf::IoError("write failed: " + path.string());
}

// Every command leaves the exact configuration it ran with beside its
// outputs, so any artifact can be reproduced from that file alone.
void write_resolved(const daf::config::RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "config.resolved.json", daf::config::to_json(cfg));
}

daf::data::DatasetIndex pick_category(const daf::config::RunConfig& cfg) {
    if (cfg.data_dir.empty())
        throw daf::ConfigError("data_dir is required for this command");
    std::vector<daf::data::DatasetIndex> all = daf::data::ingest_mvtec_dir(cfg.data_dir);
    if (cfg.category.empty()) {
        if (all.size() == 1) return all[0];
        std::string names;
        for (const auto& d : all) names += (names.empty() ? "" : ", ") + d.category;
        throw daf::ConfigError("data_dir holds " + std::to_string(all.size()) +
                               " categories (" + names + "); set \"category\"");
    }
    for (auto& d : all)
        if (d.category == cfg.category) return d;
    throw daf::ConfigError("category \"" + cfg.category + "\" not found under " + cfg.data_dir);
}

std::vector<daf::Image> donors_for(const daf::config::RunConfig& cfg) {
    if (cfg.strategy.texture_source != daf::synth::TextureSource::external_folder) return {};
    if (cfg.donor_dir.empty())
        throw daf::ConfigError("strategy \"" + cfg.strategy.tag +
                               "\" splices donor textures; set \"donor_dir\"");
    return daf::data::load_images_in_dir(cfg.donor_dir);
}

daf::nn::ParamStore load_weights(const std::string& path, const char* field) {
    if (path.empty())
        throw daf::ConfigError(std::string("\"") + field + "\" is required for this command");
    daf::nn::ParamStore ps;
    daf::nn::OptState st;  // ignored: inference never needs optimizer moments
    daf::nn::load_checkpoint(path, ps, st);
    return ps;
}

// The checkpoint records which preset produced it; that recording wins over
// the config so a mismatched "variant" key cannot misread the weights.
void adopt_weight_variant(daf::config::RunConfig& cfg, const daf::nn::ParamStore& ps) {
    const std::string v = daf::nn::get_meta(ps, "meta.variant");
    if (!v.empty()) cfg.variant = daf::nn::variant_from_string(v);
}

daf::Image sized_for_model(const daf::Image& img, int side) {
    return (img.h == side && img.w == side) ? img : daf::resize_bilinear(img, side, side);
}

// --------------------------------------------------------------- commands

int cmd_synth(daf::config::RunConfig cfg) {
    const daf::data::DatasetIndex idx = pick_category(cfg);
    const std::vector<daf::Image> normals = daf::data::load_train_images(idx);
    const std::vector<daf::Image> donors = donors_for(cfg);
    write_resolved(cfg);
    std::vector<std::string> written;
    for (int i = 0; i < cfg.synth_count; ++i) {
        const daf::Image src =
            sized_for_model(normals[size_t(i) % normals.size()], cfg.image_size);
        const daf::synth::SynthSample s = daf::synth::synthesize(
            src, cfg.strategy, donors, daf::Rng::derive(cfg.seed, 91, uint64_t(i)));
        daf::Image strip(src.h, src.w * 3, 3);
        for (int y = 0; y < src.h; ++y)
            for (int x = 0; x < src.w; ++x)
                for (int c = 0; c < 3; ++c) {
                    strip.at(y, x, c) = s.normal.at(y, x, c);
                    strip.at(y, x + src.w, c) = s.corrupted.at(y, x, c);
                    strip.at(y, x + 2 * src.w, c) = s.mask.at(y, x) ? 1.0 : 0.0;
                }
        const fs::path p = fs::path(cfg.out_dir) /
                           ("synth_" + cfg.strategy.tag + "_" + numbered(i) + ".png");
        daf::save_image(strip, p.string());
        written.push_back(p.string());
    }
    nlohmann::ordered_json j;
    j["strategy"] = cfg.strategy.tag;
    j["written"] = written;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_pretrain(daf::config::RunConfig cfg) {
    const daf::data::DatasetIndex idx = pick_category(cfg);
    const std::vector<daf::Image> normals = daf::data::load_train_images(idx);
    write_resolved(cfg);
    const daf::nn::PretrainResult res =
        daf::nn::pretrain_teacher(normals, daf::config::pretrain_config(cfg), &std::cerr);
    const fs::path p = fs::path(cfg.out_dir) / "teacher.dafw";
    daf::nn::save_params(res.params, p.string());
    nlohmann::ordered_json j;
    j["teacher"] = p.string();
    j["holdout_accuracy"] = res.holdout_accuracy;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_train(daf::config::RunConfig cfg) {
    const daf::data::DatasetIndex idx = pick_category(cfg);
    const std::vector<daf::Image> normals = daf::data::load_train_images(idx);
    const std::vector<daf::Image> donors = donors_for(cfg);
    if (cfg.teacher_weights.empty() && cfg.variant != daf::nn::Variant::only_seg)
        throw daf::ConfigError("\"teacher_weights\" is required; run pretrain-teacher first");
    daf::nn::ParamStore teacher;
    if (!cfg.teacher_weights.empty()) teacher = load_weights(cfg.teacher_weights, "teacher_weights");
    write_resolved(cfg);
    const daf::nn::TrainResult res =
        daf::nn::train(normals, donors, teacher, daf::config::train_config(cfg), &std::cerr);
    nlohmann::ordered_json j;
    j["final_checkpoint"] = res.final_checkpoint;
    j["log"] = res.log_path;
    j["epochs"] = int(res.history.size());
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_eval(daf::config::RunConfig cfg) {
    const daf::nn::ParamStore ps = load_weights(cfg.weights, "weights");
    adopt_weight_variant(cfg, ps);
    const daf::data::DatasetIndex idx = pick_category(cfg);
    const std::vector<daf::eval::EvalItem> items = daf::data::load_eval_items(idx);
    write_resolved(cfg);
    const daf::eval::MetricReport rep =
        daf::eval::evaluate_dataset(ps, items, daf::config::eval_config(cfg));
    const std::string text = daf::eval::to_json(rep);
    write_text(fs::path(cfg.out_dir) / "metrics.json", text);
    std::cout << text;
    return 0;
}

// Raw score raster: "DAFR" | u32 version=1 | u32 h | u32 w | h*w f32
// row-major little-endian values. Keeps metric recomputation free of PNG
// quantization.
void write_dafr(const fs::path& path, const std::vector<double>& raster, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw daf::IoError("cannot write " + path.string());
    f.write("DAFR", 4);
    const uint32_t header[3] = {1u, uint32_t(h), uint32_t(w)};
    f.write(reinterpret_cast<const char*>(header), sizeof header);
    std::vector<float> vals(raster.size());
    for (size_t i = 0; i < raster.size(); ++i) vals[i] = float(raster[i]);
    f.write(reinterpret_cast<const char*>(vals.data()), std::streamsize(vals.size() * 4));
    if (!f) throw daf::IoError("write failed: " + path.string());
}

int cmd_infer(daf::config::RunConfig cfg) {
    const daf::nn::ParamStore ps = load_weights(cfg.weights, "weights");
    adopt_weight_variant(cfg, ps);
    if (cfg.input_image.empty())
        throw daf::ConfigError("\"input_image\" is required for this command");
    const daf::Image img = daf::load_image(cfg.input_image, 0);
    write_resolved(cfg);
    const daf::nn::InferResult res =
        daf::nn::infer(ps, sized_for_model(img, cfg.image_size), cfg.variant);
    const std::vector<double> up =
        (img.h == cfg.image_size && img.w == cfg.image_size)
            ? res.score_map.v
            : daf::resize_bilinear(res.score_map.v, cfg.image_size, cfg.image_size, img.h, img.w);
    const std::string stem = fs::path(cfg.input_image).stem().string();
    const fs::path png = fs::path(cfg.out_dir) / (stem + "_heatmap.png");
    const fs::path raw = fs::path(cfg.out_dir) / (stem + "_score.dafr");
    daf::save_heatmap(up, img.h, img.w, png.string());
    write_dafr(raw, up, img.h, img.w);
    nlohmann::ordered_json j;
    j["image_score"] = res.image_score;
    j["heatmap"] = png.string();
    j["score_map"] = raw.string();
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gen_desktex(const Args& a) {
    const daf::data::DatasetIndex idx =
        daf::data::generate_desktex(a.out, a.n_train, a.n_test_normal, a.n_test_anom, a.seed);
    nlohmann::ordered_json j;
    j["root"] = idx.root;
    j["train"] = int(idx.train_normals.size());
    j["test"] = int(idx.test_items.size());
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gen_donors(const Args& a) {
    const std::vector<std::string> paths =
        daf::data::generate_donor_textures(a.out, a.donor_count, a.seed);
    nlohmann::ordered_json j;
    j["out_dir"] = a.out;
    j["written"] = int(paths.size());
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrepancy-aware surface anomaly detection toolkit"};
    app.require_subcommand(1);
    Args a;

    const auto add_core = [&](const char* name, const char* desc) {
        CLI::App* c = app.add_subcommand(name, desc);
        c->add_option("--config", a.config_path, "run configuration JSON file")->required();
        c->add_option("--seed", a.seed, "override the config's seed");
        c->add_option("--out", a.out, "override the config's output directory");
        c->callback([&a, c] {
            a.command = c->get_name();
            a.seed_set = c->count("--seed") > 0;
            a.out_set = c->count("--out") > 0;
        });
        return c;
    };
    add_core("synth", "write strategy preview triptychs (normal | corrupted | mask)");
    add_core("pretrain-teacher", "train the frozen encoder on the rotation pretext task");
    add_core("train", "train student, decoder, and auxiliary heads on synthetic defects");
    add_core("eval", "score a labeled test set and emit a metric report");
    add_core("infer", "score one image: heatmap PNG plus raw score raster");

    CLI::App* gd = app.add_subcommand("gen-desktex", "generate the procedural benchmark corpus");
    gd->add_option("--out", a.out, "output root directory")->required();
    gd->add_option("--seed", a.seed, "generator seed");
    gd->add_option("--n-train", a.n_train, "training normals");
    gd->add_option("--n-test-normal", a.n_test_normal, "normal test images");
    gd->add_option("--n-test-anom", a.n_test_anom, "anomalous test images");
    gd->callback([&a] { a.command = "gen-desktex"; });

    CLI::App* gn = app.add_subcommand("gen-donors", "generate donor textures for splice strategies");
    gn->add_option("--out", a.out, "output directory")->required();
    gn->add_option("--seed", a.seed, "generator seed");
    gn->add_option("--count", a.donor_count, "number of textures");
    gn->callback([&a] { a.command = "gen-donors"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        nlohmann::ordered_json j;
        j["error"]["type"] = "UsageError";
        j["error"]["message"] = e.what();
        std::cerr << j.dump() << "\n";
        return 1;
    }

    try {
        if (a.command == "gen-desktex") return cmd_gen_desktex(a);
        if (a.command == "gen-donors") return cmd_gen_donors(a);

        daf::config::RunConfig cfg = daf::config::load_run_config(a.config_path);
        if (a.seed_set) cfg.seed = a.seed;
        if (a.out_set) cfg.out_dir = a.out;

        if (a.command == "synth") return cmd_synth(std::move(cfg));
        if (a.command == "pretrain-teacher") return cmd_pretrain(std::move(cfg));
        if (a.command == "train") return cmd_train(std::move(cfg));
        if (a.command == "eval") return cmd_eval(std::move(cfg));
        if (a.command == "infer") return cmd_infer(std::move(cfg));
        throw daf::Error("unhandled command " + a.command);
    } catch (const std::exception& e) {
        return fail(e);
    }
}
