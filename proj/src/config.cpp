#include "daf/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "daf/error.hpp"

#include "json.hpp"

namespace daf::config {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw SchemaError(path + ": " + what);
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) bad(path + "." + it.key(), "unknown key");
    }
}

int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) bad(path, "expected an integer");
    return v.get<int>();
}

uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_number_integer() && v.get<int64_t>() >= 0) return uint64_t(v.get<int64_t>());
    bad(path, "expected a non-negative integer");
}

double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) bad(path, "expected a number");
    return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) bad(path, "expected true or false");
    return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
    if (!v.is_string()) bad(path, "expected a string");
    return v.get<std::string>();
}

std::vector<int> as_int_array(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "expected an array of integers");
    std::vector<int> out;
    for (size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

// ----------------------------------------------------- enum <-> string maps

const char* to_string(synth::ShapeSource s) {
    return s == synth::ShapeSource::perlin ? "perlin" : "rectangle";
}

const char* to_string(synth::TextureSource s) {
    switch (s) {
        case synth::TextureSource::external_folder: return "external_folder";
        case synth::TextureSource::random_color: return "random_color";
        default: return "self_patch";
    }
}

const char* to_string(synth::BlendMode b) {
    return b == synth::BlendMode::opacity ? "opacity" : "poisson";
}

synth::ShapeSource shape_from(const std::string& s, const std::string& path) {
    if (s == "perlin") return synth::ShapeSource::perlin;
    if (s == "rectangle") return synth::ShapeSource::rectangle;
    bad(path, "unknown shape source \"" + s + "\" (perlin | rectangle)");
}

synth::TextureSource texture_from(const std::string& s, const std::string& path) {
    if (s == "external_folder") return synth::TextureSource::external_folder;
    if (s == "random_color") return synth::TextureSource::random_color;
    if (s == "self_patch") return synth::TextureSource::self_patch;
    bad(path, "unknown texture source \"" + s + "\" (external_folder | random_color | self_patch)");
}

synth::BlendMode blend_from(const std::string& s, const std::string& path) {
    if (s == "opacity") return synth::BlendMode::opacity;
    if (s == "poisson") return synth::BlendMode::poisson;
    bad(path, "unknown blend mode \"" + s + "\" (opacity | poisson)");
}

void validate(const RunConfig& c) {
    const auto positive_mult16 = [](int v, const char* name) {
        if (v < 16 || v % 16 != 0)
            throw ConfigError(std::string(name) + " must be a positive multiple of 16, got " +
                              std::to_string(v));
    };
    positive_mult16(c.image_size, "image_size");
    positive_mult16(c.pretrain_image_size, "pretrain.image_size");
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    if (c.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (c.warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
    if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (c.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (!(c.base_lr > 0)) throw ConfigError("train.base_lr must be > 0");
    for (size_t i = 1; i < c.decay_epochs.size(); ++i)
        if (c.decay_epochs[i] <= c.decay_epochs[i - 1])
            throw ConfigError("train.decay_epochs must be strictly increasing");
    if (c.pretrain_epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
    if (c.pretrain_batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (!(c.pretrain_lr > 0)) throw ConfigError("pretrain.lr must be > 0");
    if (c.synth_count < 0) throw ConfigError("synth_count must be >= 0");
    if (!(c.strategy.beta > 0) || c.strategy.beta > 1)
        throw ConfigError("strategy.beta must be in (0, 1]");
    if (!(c.strategy.perlin_threshold > 0) || !(c.strategy.perlin_threshold < 1))
        throw ConfigError("strategy.perlin_threshold must be in (0, 1)");
    if (c.strategy.perlin_cells.empty()) throw ConfigError("strategy.perlin_cells must be non-empty");
    for (int cell : c.strategy.perlin_cells)
        if (cell < 2) throw ConfigError("strategy.perlin_cells entries must be >= 2");
    if (c.strategy.rect_side_min < 1 || c.strategy.rect_side_max < c.strategy.rect_side_min)
        throw ConfigError("strategy rect sides must satisfy 1 <= min <= max");
    if (c.strategy.rect_count_min < 1 || c.strategy.rect_count_max < c.strategy.rect_count_min)
        throw ConfigError("strategy rect counts must satisfy 1 <= min <= max");
}

}  // namespace

void apply_profile(RunConfig& cfg, const std::string& name) {
    if (name == "desk") {
        cfg.epochs = 60;
        cfg.warmup_epochs = 5;
        cfg.decay_epochs = {35, 50};
        cfg.base_lr = 2e-4;
        cfg.batch_size = 8;
        cfg.checkpoint_every = 10;
        cfg.image_size = 128;
        cfg.pretrain_epochs = 10;
        cfg.pretrain_batch_size = 8;
        cfg.pretrain_image_size = 128;
        cfg.pretrain_lr = 1e-3;
    } else if (name == "paper") {
        cfg.epochs = 1200;
        cfg.warmup_epochs = 50;
        cfg.decay_epochs = {700, 1000};
        cfg.base_lr = 2e-4;
        cfg.batch_size = 8;
        cfg.checkpoint_every = 10;
        cfg.image_size = 256;
        cfg.pretrain_epochs = 30;
        cfg.pretrain_batch_size = 8;
        cfg.pretrain_image_size = 128;
        cfg.pretrain_lr = 1e-3;
    } else {
        bad("$.profile", "unknown profile \"" + name + "\" (desk | paper)");
    }
    cfg.profile = name;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("$: expected a JSON object");
    check_keys(j, "$",
               {"schema_version", "profile", "seed", "threads", "image_size", "variant",
                "student_copy_teacher", "data_dir", "category", "donor_dir", "out_dir",
                "teacher_weights", "weights", "input_image", "resume", "synth_count", "train",
                "pretrain", "strategy"});
    if (!j.contains("schema_version")) bad("$.schema_version", "missing");
    if (as_int(j.at("schema_version"), "$.schema_version") != 1)
        bad("$.schema_version", "unsupported version (expected 1)");

    RunConfig c;
    if (j.contains("profile")) apply_profile(c, as_str(j.at("profile"), "$.profile"));

    if (j.contains("seed")) c.seed = as_u64(j.at("seed"), "$.seed");
    if (j.contains("threads")) c.threads = as_int(j.at("threads"), "$.threads");
    if (j.contains("image_size")) c.image_size = as_int(j.at("image_size"), "$.image_size");
    if (j.contains("variant")) {
        const std::string v = as_str(j.at("variant"), "$.variant");
        try {
            c.variant = nn::variant_from_string(v);
        } catch (const ConfigError&) {
            bad("$.variant", "unknown variant \"" + v + "\"");
        }
    }
    if (j.contains("student_copy_teacher"))
        c.student_copy_teacher = as_bool(j.at("student_copy_teacher"), "$.student_copy_teacher");
    if (j.contains("data_dir")) c.data_dir = as_str(j.at("data_dir"), "$.data_dir");
    if (j.contains("category")) c.category = as_str(j.at("category"), "$.category");
    if (j.contains("donor_dir")) c.donor_dir = as_str(j.at("donor_dir"), "$.donor_dir");
    if (j.contains("out_dir")) c.out_dir = as_str(j.at("out_dir"), "$.out_dir");
    if (j.contains("teacher_weights"))
        c.teacher_weights = as_str(j.at("teacher_weights"), "$.teacher_weights");
    if (j.contains("weights")) c.weights = as_str(j.at("weights"), "$.weights");
    if (j.contains("input_image")) c.input_image = as_str(j.at("input_image"), "$.input_image");
    if (j.contains("resume")) c.resume = as_str(j.at("resume"), "$.resume");
    if (j.contains("synth_count")) c.synth_count = as_int(j.at("synth_count"), "$.synth_count");

    if (j.contains("train")) {
        const json& t = j.at("train");
        if (!t.is_object()) bad("$.train", "expected an object");
        check_keys(t, "$.train",
                   {"epochs", "warmup_epochs", "decay_epochs", "base_lr", "batch_size",
                    "checkpoint_every"});
        if (t.contains("epochs")) c.epochs = as_int(t.at("epochs"), "$.train.epochs");
        if (t.contains("warmup_epochs"))
            c.warmup_epochs = as_int(t.at("warmup_epochs"), "$.train.warmup_epochs");
        if (t.contains("decay_epochs"))
            c.decay_epochs = as_int_array(t.at("decay_epochs"), "$.train.decay_epochs");
        if (t.contains("base_lr")) c.base_lr = as_double(t.at("base_lr"), "$.train.base_lr");
        if (t.contains("batch_size"))
            c.batch_size = as_int(t.at("batch_size"), "$.train.batch_size");
        if (t.contains("checkpoint_every"))
            c.checkpoint_every = as_int(t.at("checkpoint_every"), "$.train.checkpoint_every");
    }

    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        if (!p.is_object()) bad("$.pretrain", "expected an object");
        check_keys(p, "$.pretrain", {"epochs", "batch_size", "image_size", "lr"});
        if (p.contains("epochs")) c.pretrain_epochs = as_int(p.at("epochs"), "$.pretrain.epochs");
        if (p.contains("batch_size"))
            c.pretrain_batch_size = as_int(p.at("batch_size"), "$.pretrain.batch_size");
        if (p.contains("image_size"))
            c.pretrain_image_size = as_int(p.at("image_size"), "$.pretrain.image_size");
        if (p.contains("lr")) c.pretrain_lr = as_double(p.at("lr"), "$.pretrain.lr");
    }

    if (j.contains("strategy")) {
        const json& s = j.at("strategy");
        if (!s.is_object()) bad("$.strategy", "expected an object");
        check_keys(s, "$.strategy",
                   {"name", "shape_source", "texture_source", "blend", "beta", "beta_sampled",
                    "perlin_cells", "perlin_threshold", "rect_side_min", "rect_side_max",
                    "rect_count_min", "rect_count_max"});
        if (!s.contains("name")) bad("$.strategy.name", "missing");
        const std::string name = as_str(s.at("name"), "$.strategy.name");
        try {
            c.strategy = synth::strategy_preset(name);
        } catch (const ConfigError&) {
            bad("$.strategy.name", "unknown strategy \"" + name + "\"");
        }
        if (s.contains("shape_source"))
            c.strategy.shape_source =
                shape_from(as_str(s.at("shape_source"), "$.strategy.shape_source"),
                           "$.strategy.shape_source");
        if (s.contains("texture_source"))
            c.strategy.texture_source =
                texture_from(as_str(s.at("texture_source"), "$.strategy.texture_source"),
                             "$.strategy.texture_source");
        if (s.contains("blend"))
            c.strategy.blend = blend_from(as_str(s.at("blend"), "$.strategy.blend"), "$.strategy.blend");
        if (s.contains("beta")) c.strategy.beta = as_double(s.at("beta"), "$.strategy.beta");
        if (s.contains("beta_sampled"))
            c.strategy.beta_sampled = as_bool(s.at("beta_sampled"), "$.strategy.beta_sampled");
        if (s.contains("perlin_cells"))
            c.strategy.perlin_cells = as_int_array(s.at("perlin_cells"), "$.strategy.perlin_cells");
        if (s.contains("perlin_threshold"))
            c.strategy.perlin_threshold =
                as_double(s.at("perlin_threshold"), "$.strategy.perlin_threshold");
        if (s.contains("rect_side_min"))
            c.strategy.rect_side_min = as_int(s.at("rect_side_min"), "$.strategy.rect_side_min");
        if (s.contains("rect_side_max"))
            c.strategy.rect_side_max = as_int(s.at("rect_side_max"), "$.strategy.rect_side_max");
        if (s.contains("rect_count_min"))
            c.strategy.rect_count_min = as_int(s.at("rect_count_min"), "$.strategy.rect_count_min");
        if (s.contains("rect_count_max"))
            c.strategy.rect_count_max = as_int(s.at("rect_count_max"), "$.strategy.rect_count_max");
    }

    validate(c);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
    ordered_json j;
    j["schema_version"] = 1;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["image_size"] = c.image_size;
    j["variant"] = nn::to_string(c.variant);
    j["student_copy_teacher"] = c.student_copy_teacher;
    j["data_dir"] = c.data_dir;
    j["category"] = c.category;
    j["donor_dir"] = c.donor_dir;
    j["out_dir"] = c.out_dir;
    j["teacher_weights"] = c.teacher_weights;
    j["weights"] = c.weights;
    j["input_image"] = c.input_image;
    j["resume"] = c.resume;
    j["synth_count"] = c.synth_count;
    ordered_json t;
    t["epochs"] = c.epochs;
    t["warmup_epochs"] = c.warmup_epochs;
    t["decay_epochs"] = c.decay_epochs;
    t["base_lr"] = c.base_lr;
    t["batch_size"] = c.batch_size;
    t["checkpoint_every"] = c.checkpoint_every;
    j["train"] = std::move(t);
    ordered_json p;
    p["epochs"] = c.pretrain_epochs;
    p["batch_size"] = c.pretrain_batch_size;
    p["image_size"] = c.pretrain_image_size;
    p["lr"] = c.pretrain_lr;
    j["pretrain"] = std::move(p);
    ordered_json s;
    s["name"] = c.strategy.tag;
    s["shape_source"] = to_string(c.strategy.shape_source);
    s["texture_source"] = to_string(c.strategy.texture_source);
    s["blend"] = to_string(c.strategy.blend);
    s["beta"] = c.strategy.beta;
    s["beta_sampled"] = c.strategy.beta_sampled;
    s["perlin_cells"] = c.strategy.perlin_cells;
    s["perlin_threshold"] = c.strategy.perlin_threshold;
    s["rect_side_min"] = c.strategy.rect_side_min;
    s["rect_side_max"] = c.strategy.rect_side_max;
    s["rect_count_min"] = c.strategy.rect_count_min;
    s["rect_count_max"] = c.strategy.rect_count_max;
    j["strategy"] = std::move(s);
    return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = to_json(cfg);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char b : text) {
        h ^= b;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nn::TrainConfig train_config(const RunConfig& c) {
    nn::TrainConfig t;
    t.epochs = c.epochs;
    t.warmup_epochs = c.warmup_epochs;
    t.decay_epochs = c.decay_epochs;
    t.base_lr = c.base_lr;
    t.batch_size = c.batch_size;
    t.image_size = c.image_size;
    t.checkpoint_every = c.checkpoint_every;
    t.seed = c.seed;
    t.threads = c.threads;
    t.variant = c.variant;
    t.student_copy_teacher = c.student_copy_teacher;
    t.strategy = c.strategy;
    t.out_dir = c.out_dir;
    t.resume = c.resume;
    return t;
}

nn::PretrainConfig pretrain_config(const RunConfig& c) {
    nn::PretrainConfig p;
    p.epochs = c.pretrain_epochs;
    p.batch_size = c.pretrain_batch_size;
    p.image_size = c.pretrain_image_size;
    p.lr = c.pretrain_lr;
    p.seed = c.seed;
    p.threads = c.threads;
    return p;
}

eval::EvalConfig eval_config(const RunConfig& c) {
    eval::EvalConfig e;
    e.image_size = c.image_size;
    e.variant = c.variant;
    e.threads = c.threads;
    e.config_hash = config_hash(c);
    return e;
}

}  // namespace daf::config
