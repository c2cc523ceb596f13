#include "daf/segtrain.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <thread>
#include <unordered_map>
#include <utility>

#include "daf/distill.hpp"
#include "daf/error.hpp"
#include "daf/parallel.hpp"
#include "daf/rasterops.hpp"
#include "daf/rng.hpp"
#include "daf/weights_io.hpp"

namespace daf::nn {

namespace fs = std::filesystem;
using daf::synth::StrategySpec;
using daf::synth::SynthSample;

// ------------------------------------------------------------------ variants

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "only_ts") return Variant::only_ts;
    if (s == "only_seg") return Variant::only_seg;
    if (s == "wo_aux") return Variant::wo_aux;
    throw ConfigError("unknown variant: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::only_ts: return "only_ts";
        case Variant::only_seg: return "only_seg";
        case Variant::wo_aux: return "wo_aux";
    }
    throw ConfigError("unknown variant value");
}

namespace {

bool uses_teacher(Variant v) { return v != Variant::only_seg; }
bool uses_decoder(Variant v) { return v != Variant::only_ts; }
bool uses_aux(Variant v) { return v == Variant::full || v == Variant::only_seg; }

bool is_trainable_name(const std::string& n) {
    return n.rfind("student.", 0) == 0 || n.rfind("decoder.", 0) == 0 || n.rfind("aux", 0) == 0;
}

Image to_rgb(const Image& img) {
    if (img.c == 3) return img;
    if (img.c != 1) throw ShapeError("images must have 1 or 3 channels");
    Image out(img.h, img.w, 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(y, x, 0);
    return out;
}

Image sized_rgb(const Image& img, int side) {
    Image rgb = to_rgb(img);
    if (rgb.h == side && rgb.w == side) return rgb;
    return resize_bilinear(rgb, side, side);
}

void quantize_opt(OptState& st) {
    for (auto* moments : {&st.m, &st.v})
        for (auto& [name, t] : *moments)
            for (double& x : t.v) x = double(float(x));
}

// Runs fn(0..n-1); with several workers, worker w takes items w, w+T, ...
// Each item's result is independent of which worker ran it.
}  // namespace

// ------------------------------------------------------------------- helpers

Tensor mask_to_raster(const Mask& m) {
    Tensor t({1, m.h, m.w});
    for (size_t i = 0; i < m.data.size(); ++i) t.v[i] = m.data[i] ? 1.0 : 0.0;
    return t;
}

std::vector<int> mine_hard_negatives(const Tensor& pred, const Tensor& target, int ratio) {
    if (pred.size() != target.size())
        throw ShapeError("prediction and target rasters must match in size");
    std::vector<int> pos, neg;
    pos.reserve(64);
    neg.reserve(size_t(target.size()));
    for (long i = 0; i < target.size(); ++i)
        (target.v[size_t(i)] != 0.0 ? pos : neg).push_back(int(i));
    const size_t want =
        std::min(neg.size(), size_t(std::max(ratio, 0)) * std::max(pos.size(), size_t(1)));
    auto harder = [&pred](int a, int b) {
        if (pred.v[size_t(a)] != pred.v[size_t(b)]) return pred.v[size_t(a)] > pred.v[size_t(b)];
        return a < b;
    };
    std::partial_sort(neg.begin(), neg.begin() + long(want), neg.end(), harder);
    pos.insert(pos.end(), neg.begin(), neg.begin() + long(want));
    return pos;
}

Value seg_loss(Tape& t, Value pred, const Tensor& target, int ratio) {
    std::vector<int> sub = mine_hard_negatives(t.val(pred), target, ratio);
    return t.bce_subset(pred, target, std::move(sub));
}

Value aux_loss(Tape& t, Binder& bind, const EncoderFeatures& f, const Mask& mask, int ratio) {
    const std::array<Value, 3> stages{f.s1, f.s2, f.s3};
    Value total;
    for (int i = 0; i < 3; ++i) {
        const auto& sh = t.val(stages[size_t(i)]).shape;
        Value prob = aux_forward(t, bind, "aux" + std::to_string(i + 1), stages[size_t(i)]);
        Tensor target = mask_to_raster(downsample_mask(mask, sh[1], sh[2]));
        Value term = seg_loss(t, prob, target, ratio);
        total = (i == 0) ? term : t.add(total, term);
    }
    return total;
}

Tensor rotate_quarter(const Tensor& chw, int k) {
    if (chw.shape.size() != 3) throw ShapeError("rotate_quarter expects a (C,H,W) tensor");
    k = ((k % 4) + 4) % 4;
    if (k == 0) return chw;
    const int c = chw.shape[0], h = chw.shape[1], w = chw.shape[2];
    const bool swap = (k % 2) == 1;
    Tensor out({c, swap ? w : h, swap ? h : w});
    const int oh = out.shape[1], ow = out.shape[2];
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                int sy = 0, sx = 0;
                if (k == 1) {
                    sy = x, sx = w - 1 - y;  // 90 degrees counterclockwise
                } else if (k == 2) {
                    sy = h - 1 - y, sx = w - 1 - x;
                } else {
                    sy = h - 1 - x, sx = y;  // 270 = 90 clockwise
                }
                out.v[(size_t(ch) * oh + y) * ow + x] = chw.v[(size_t(ch) * h + sy) * w + sx];
            }
    return out;
}

uint64_t prefix_checksum(const ParamStore& ps, const std::string& prefix) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (const auto& name : ps.names()) {
        if (name.rfind(prefix, 0) != 0) continue;
        for (size_t i = prefix.size(); i < name.size(); ++i) mix(uint8_t(name[i]));
        mix(0);
        const Tensor& t = ps.at(name);
        for (long i = 0; i < t.size(); ++i) {
            uint64_t bits = std::bit_cast<uint64_t>(t[i]);
            for (int b = 0; b < 8; ++b) mix(uint8_t(bits >> (8 * b)));
        }
    }
    return h;
}

int thread_cap(int requested) {
    int t = std::max(1, requested);
    if (const char* env = std::getenv("DAF_THREADS"); env && *env) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) t = std::min(t, int(std::min(cap, 256l)));
    }
    return t;
}

double top_k_mean(const std::vector<double>& vals, int k) {
    if (vals.empty()) throw ShapeError("top_k_mean needs at least one value");
    const size_t kk = std::min(vals.size(), size_t(std::max(1, k)));
    std::vector<double> c(vals);
    std::partial_sort(c.begin(), c.begin() + long(kk), c.end(), std::greater<>());
    double s = 0;
    for (size_t i = 0; i < kk; ++i) s += c[i];
    return s / double(kk);
}

// -------------------------------------------------------------- checkpoints

void save_checkpoint(const std::string& path, const ParamStore& ps, const OptState& st,
                     int next_epoch) {
    ParamStore out;
    for (const std::string& name : ps.names()) out.add(name, ps.at(name));
    for (const std::string& name : ps.names()) {
        if (auto it = st.m.find(name); it != st.m.end()) out.add("opt.m." + name, it->second);
        if (auto it = st.v.find(name); it != st.v.end()) out.add("opt.v." + name, it->second);
    }
    Tensor step({1});
    step.v[0] = double(st.step);
    out.add("opt.step", step);
    Tensor ep({1});
    ep.v[0] = double(next_epoch);
    out.add("meta.epoch", ep);
    save_params(out, path);
}

int load_checkpoint(const std::string& path, ParamStore& ps, OptState& st) {
    ParamStore in = load_params(path);
    int next_epoch = 0;
    for (const std::string& name : in.names()) {
        const Tensor& t = in.at(name);
        if (name.rfind("opt.m.", 0) == 0) {
            st.m[name.substr(6)] = t;
        } else if (name.rfind("opt.v.", 0) == 0) {
            st.v[name.substr(6)] = t;
        } else if (name == "opt.step") {
            st.step = long(std::llround(t.v[0]));
        } else if (name == "meta.epoch") {
            next_epoch = int(std::lround(t.v[0]));
        } else {
            ps.add(name, t);
        }
    }
    return next_epoch;
}

// -------------------------------------------------------------- pretraining

namespace {

struct PretrainItem {
    bool finite = true;
    double loss = 0;
    std::vector<std::pair<std::string, Tensor>> grads;
};

PretrainItem run_pretrain_item(const ParamStore& ps, const std::vector<std::string>& trainables,
                               const Image& img, int rot) {
    PretrainItem out;
    Tape t;
    Binder bind(t, ps, [](const std::string&) { return true; });
    Value x = t.leaf(rotate_quarter(image_to_chw(img), rot));
    EncoderFeatures f = encoder_forward(t, bind, "encoder", x);
    Value logits = t.linear(bind("head.fc.w"), t.global_avg_pool(f.s3), bind("head.fc.b"));
    Value loss = t.softmax_cross_entropy(logits, rot);
    out.loss = t.val(loss).v[0];
    if (!std::isfinite(out.loss)) {
        out.finite = false;
        return out;
    }
    t.backward(loss);
    const auto& bound = bind.bound();
    out.grads.reserve(trainables.size());
    for (const std::string& name : trainables) {
        auto it = bound.find(name);
        if (it != bound.end()) out.grads.emplace_back(name, t.grad(it->second));
    }
    return out;
}

int predict_rotation(const ParamStore& ps, const Image& img, int rot) {
    Tape t;
    Binder bind(t, ps);
    Value x = t.leaf(rotate_quarter(image_to_chw(img), rot));
    EncoderFeatures f = encoder_forward(t, bind, "encoder", x);
    Value logits = t.linear(bind("head.fc.w"), t.global_avg_pool(f.s3), bind("head.fc.b"));
    const Tensor& z = t.val(logits);
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (z.v[size_t(i)] > z.v[size_t(best)]) best = i;
    return best;
}

}  // namespace

PretrainResult pretrain_teacher(const std::vector<Image>& normals, const PretrainConfig& cfg,
                                std::ostream* progress) {
    if (normals.size() < 50)
        throw ConfigError("teacher pretraining needs at least 50 normal images, got " +
                          std::to_string(normals.size()));
    if (cfg.image_size < 16 || cfg.image_size % 16 != 0)
        throw ConfigError("image_size must be a positive multiple of 16");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cfg.epochs < 1) throw ConfigError("pretraining needs at least one epoch");

    std::vector<Image> sized;
    sized.reserve(normals.size());
    for (const Image& img : normals) sized.push_back(sized_rgb(img, cfg.image_size));

    std::vector<int> order(sized.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(Rng::derive(cfg.seed, 7)).shuffle(order);
    const size_t n_hold = std::max<size_t>(1, sized.size() / 10);
    const std::vector<int> holdout(order.begin(), order.begin() + long(n_hold));
    const std::vector<int> train_idx(order.begin() + long(n_hold), order.end());

    ParamStore ps;
    init_encoder(ps, "encoder", Rng::derive(cfg.seed, 1));
    init_linear(ps, "head.fc", 4, kStageChannels[2], Rng::derive(cfg.seed, 2));
    std::vector<std::string> trainables(ps.names());
    OptState st;
    const int threads = thread_cap(cfg.threads);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Every image contributes all four rotations, so labels stay balanced.
        std::vector<std::pair<int, int>> items;
        items.reserve(train_idx.size() * 4);
        for (int idx : train_idx)
            for (int rot = 0; rot < 4; ++rot) items.emplace_back(idx, rot);
        Rng(Rng::derive(cfg.seed, 8, uint64_t(epoch))).shuffle(items);

        double epoch_loss = 0;
        for (size_t b0 = 0; b0 < items.size(); b0 += size_t(cfg.batch_size)) {
            const int bn = int(std::min(items.size() - b0, size_t(cfg.batch_size)));
            std::vector<PretrainItem> slots(static_cast<size_t>(bn));
            parallel_items(bn, threads, [&](int j) {
                const auto& [idx, rot] = items[b0 + size_t(j)];
                slots[size_t(j)] = run_pretrain_item(ps, trainables, sized[size_t(idx)], rot);
            });
            std::unordered_map<std::string, Tensor> acc;
            for (int j = 0; j < bn; ++j) {
                PretrainItem& item = slots[size_t(j)];
                if (!item.finite)
                    throw TrainError("pretraining loss is not finite at epoch " +
                                     std::to_string(epoch));
                epoch_loss += item.loss;
                for (auto& [name, g] : item.grads) {
                    Tensor& a = acc[name];
                    if (a.v.empty()) {
                        a = std::move(g);
                    } else {
                        for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += g.v[i];
                    }
                }
            }
            const double inv = 1.0 / double(bn);
            std::vector<std::pair<std::string, const Tensor*>> glist;
            glist.reserve(trainables.size());
            for (const std::string& name : trainables) {
                auto it = acc.find(name);
                if (it == acc.end()) continue;
                for (double& x : it->second.v) x *= inv;
                glist.emplace_back(name, &it->second);
            }
            AdamWConfig ac;
            ac.lr = cfg.lr;
            adamw_step(ps, glist, st, ac);
        }
        if (progress)
            *progress << "pretrain epoch " << epoch << " mean loss "
                      << (items.empty() ? 0.0 : epoch_loss / double(items.size())) << "\n";
    }

    long correct = 0, total = 0;
    for (int idx : holdout)
        for (int rot = 0; rot < 4; ++rot) {
            correct += predict_rotation(ps, sized[size_t(idx)], rot) == rot;
            ++total;
        }

    PretrainResult res;
    for (const std::string& name : ps.names())
        if (name.rfind("encoder.", 0) == 0) res.params.add(name, ps.at(name));
    set_meta(res.params, "meta.role", "teacher");
    res.holdout_accuracy = total == 0 ? 0.0 : double(correct) / double(total);
    if (progress) *progress << "pretrain holdout accuracy " << res.holdout_accuracy << "\n";
    return res;
}

// ----------------------------------------------------------------- training

namespace {

struct TrainItem {
    bool counted = false;
    std::string bad_term;
    double l_cos = 0, l_ssim = 0, l_seg = 0, l_dis = 0, total = 0;
    std::vector<std::pair<std::string, Tensor>> grads;
};

TrainItem run_train_item(const ParamStore& ps, const std::vector<std::string>& trainables,
                         Variant variant, const StrategySpec& strategy,
                         const std::vector<Image>& donors, const Image& base,
                         uint64_t item_seed) {
    TrainItem out;
    const SynthSample sample = daf::synth::synthesize(base, strategy, donors, item_seed);

    Tape t;
    Binder bind(t, ps, is_trainable_name);
    EncoderFeatures sf =
        encoder_forward(t, bind, "student.encoder", t.leaf(image_to_chw(sample.corrupted)));

    struct Term {
        const char* name;
        Value v;
    };
    std::vector<Term> terms;
    Value total;
    bool has_total = false;
    auto add_term = [&](const char* name, Value v) {
        terms.push_back({name, v});
        total = has_total ? t.add(total, v) : v;
        has_total = true;
    };

    EncoderFeatures tf;
    if (uses_teacher(variant)) {
        tf = encoder_forward(t, bind, "teacher.encoder", t.leaf(image_to_chw(sample.normal)));
        KdLosses kd;
        try {
            kd = kd_loss(t, tf, sf, normal_weights_for(t, sample.mask, sf));
        } catch (const DegenerateBatchError&) {
            return out;  // mask leaves no normal positions at some stage: skip
        }
        add_term("L_cos", kd.cos_loss);
        add_term("L_SSIM", kd.ssim_loss);
        out.l_cos = t.val(kd.cos_loss).v[0];
        out.l_ssim = t.val(kd.ssim_loss).v[0];
    }
    if (uses_decoder(variant)) {
        const auto& s3 = t.val(sf.s3).shape;
        Value agg = uses_teacher(variant) ? aggregate_discrepancy(t, tf, sf, s3[1], s3[2])
                                          : t.leaf(Tensor({1, s3[1], s3[2]}));
        Value seg = decoder_forward(t, bind, "decoder", agg, sf);
        Value ls = seg_loss(t, seg, mask_to_raster(sample.mask));
        add_term("L_seg", ls);
        out.l_seg = t.val(ls).v[0];
        if (uses_aux(variant)) {
            Value la = aux_loss(t, bind, sf, sample.mask);
            add_term("L_dis", la);
            out.l_dis = t.val(la).v[0];
        }
    }

    out.total = t.val(total).v[0];
    for (const Term& term : terms)
        if (!std::isfinite(t.val(term.v).v[0])) {
            out.bad_term = term.name;
            out.counted = true;
            return out;
        }

    t.backward(total);
    const auto& bound = bind.bound();
    out.grads.reserve(trainables.size());
    for (const std::string& name : trainables) {
        auto it = bound.find(name);
        if (it != bound.end()) out.grads.emplace_back(name, t.grad(it->second));
    }
    out.counted = true;
    return out;
}

void write_log_line(std::ostream& os, const EpochStats& e) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "{\"epoch\":%d,\"lr\":%.17g,\"L_cos\":%.17g,\"L_SSIM\":%.17g,"
                  "\"L_seg\":%.17g,\"L_dis\":%.17g,\"total\":%.17g,\"wall_ms\":%ld}\n",
                  e.epoch, e.lr, e.l_cos, e.l_ssim, e.l_seg, e.l_dis, e.total, e.wall_ms);
    os << buf;
    os.flush();
}

}  // namespace

TrainResult train(const std::vector<Image>& normals, const std::vector<Image>& donors,
                  const ParamStore& teacher, const TrainConfig& cfg, std::ostream* progress) {
    if (normals.empty()) throw ConfigError("training needs at least one normal image");
    if (cfg.image_size < 16 || cfg.image_size % 16 != 0)
        throw ConfigError("image_size must be a positive multiple of 16");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cfg.epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (cfg.strategy.texture_source == daf::synth::TextureSource::external_folder &&
        donors.empty())
        throw ConfigError("strategy " + cfg.strategy.tag + " needs donor textures");

    ParamStore ps;
    OptState st;
    int start_epoch = 0;
    if (!cfg.resume.empty()) {
        start_epoch = load_checkpoint(cfg.resume, ps, st);
    } else {
        if (uses_teacher(cfg.variant)) {
            bool any = false;
            for (const std::string& name : teacher.names())
                if (name.rfind("encoder.", 0) == 0) {
                    ps.add("teacher." + name, teacher.at(name));
                    any = true;
                }
            if (!any) throw ConfigError("teacher store has no encoder tensors");
            if (cfg.student_copy_teacher) {
                for (const std::string& name : teacher.names())
                    if (name.rfind("encoder.", 0) == 0) ps.add("student." + name, teacher.at(name));
            } else {
                init_encoder(ps, "student.encoder", Rng::derive(cfg.seed, 41));
            }
        } else {
            init_encoder(ps, "student.encoder", Rng::derive(cfg.seed, 41));
        }
        if (uses_decoder(cfg.variant)) init_decoder(ps, "decoder", Rng::derive(cfg.seed, 42));
        if (uses_aux(cfg.variant)) {
            init_aux(ps, "aux1", kStageChannels[0], Rng::derive(cfg.seed, 43));
            init_aux(ps, "aux2", kStageChannels[1], Rng::derive(cfg.seed, 44));
            init_aux(ps, "aux3", kStageChannels[2], Rng::derive(cfg.seed, 45));
        }
        set_meta(ps, "meta.variant", to_string(cfg.variant));
        // Round to f32 up front so a fresh run and a run resumed from its
        // first checkpoint march through identical states.
        quantize_f32(ps);
    }

    std::vector<std::string> trainables;
    for (const std::string& n : ps.names())
        if (is_trainable_name(n)) trainables.push_back(n);
    const uint64_t teacher_sum = prefix_checksum(ps, "teacher.");

    std::string log_path;
    std::ofstream log;
    if (!cfg.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(cfg.out_dir, ec);
        if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
        log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
        log.open(log_path, std::ios::app);
        if (!log) throw IoError("cannot open training log " + log_path);
    }
    std::string last_ckpt = cfg.resume;

    std::vector<Image> sized;
    sized.reserve(normals.size());
    for (const Image& img : normals) sized.push_back(sized_rgb(img, cfg.image_size));

    const int threads = thread_cap(cfg.threads);
    TrainResult res;

    auto checkpoint_now = [&](int next_epoch, const std::string& filename) {
        std::string path;
        if (!cfg.out_dir.empty()) {
            path = (fs::path(cfg.out_dir) / filename).string();
            save_checkpoint(path, ps, st, next_epoch);
        }
        // Keep the live state bitwise equal to what the file restores.
        quantize_f32(ps);
        quantize_opt(st);
        return path;
    };

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg.base_lr, cfg.warmup_epochs, cfg.decay_epochs);

        std::vector<int> order(sized.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(Rng::derive(cfg.seed, 11, uint64_t(epoch))).shuffle(order);

        double acc_cos = 0, acc_ssim = 0, acc_seg = 0, acc_dis = 0, acc_total = 0;
        long counted = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
            const int bn = int(std::min(order.size() - b0, size_t(cfg.batch_size)));
            std::vector<TrainItem> slots(static_cast<size_t>(bn));
            parallel_items(bn, threads, [&](int j) {
                const int idx = order[b0 + size_t(j)];
                slots[size_t(j)] =
                    run_train_item(ps, trainables, cfg.variant, cfg.strategy, donors,
                                   sized[size_t(idx)],
                                   Rng::derive(cfg.seed, 21, uint64_t(epoch), uint64_t(idx)));
            });

            std::unordered_map<std::string, Tensor> acc;
            long batch_counted = 0;
            for (int j = 0; j < bn; ++j) {
                TrainItem& item = slots[size_t(j)];
                if (!item.bad_term.empty())
                    throw TrainError(item.bad_term + " is not finite at epoch " +
                                     std::to_string(epoch) + ", sample " +
                                     std::to_string(order[b0 + size_t(j)]) + "; last checkpoint: " +
                                     (last_ckpt.empty() ? std::string("none") : last_ckpt));
                if (!item.counted) continue;
                ++batch_counted;
                acc_cos += item.l_cos;
                acc_ssim += item.l_ssim;
                acc_seg += item.l_seg;
                acc_dis += item.l_dis;
                acc_total += item.total;
                for (auto& [name, g] : item.grads) {
                    Tensor& a = acc[name];
                    if (a.v.empty()) {
                        a = std::move(g);
                    } else {
                        for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += g.v[i];
                    }
                }
            }
            counted += batch_counted;
            if (batch_counted == 0) continue;

            const double inv = 1.0 / double(batch_counted);
            std::vector<std::pair<std::string, const Tensor*>> glist;
            glist.reserve(trainables.size());
            for (const std::string& name : trainables) {
                auto it = acc.find(name);
                if (it == acc.end()) continue;
                for (double& x : it->second.v) x *= inv;
                glist.emplace_back(name, &it->second);
            }
            AdamWConfig ac;
            ac.lr = lr;
            adamw_step(ps, glist, st, ac);
        }

        if (uses_teacher(cfg.variant) && prefix_checksum(ps, "teacher.") != teacher_sum)
            throw TrainError("teacher weights changed during epoch " + std::to_string(epoch));

        EpochStats e;
        e.epoch = epoch;
        e.lr = lr;
        if (counted > 0) {
            e.l_cos = acc_cos / double(counted);
            e.l_ssim = acc_ssim / double(counted);
            e.l_seg = acc_seg / double(counted);
            e.l_dis = acc_dis / double(counted);
            e.total = acc_total / double(counted);
        }
        e.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        res.history.push_back(e);
        if (log) write_log_line(log, e);
        if (progress)
            *progress << "epoch " << epoch << " lr " << lr << " total " << e.total << "\n";

        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "checkpoint_%04d.dafw", epoch + 1);
            std::string p = checkpoint_now(epoch + 1, buf);
            if (!p.empty()) last_ckpt = p;
        }
    }

    res.final_checkpoint = checkpoint_now(cfg.epochs, "final.dafw");
    res.log_path = log_path;
    res.params = std::move(ps);
    return res;
}

// ---------------------------------------------------------------- inference

InferResult infer(const ParamStore& params, const Image& image, Variant variant) {
    const Image rgb = to_rgb(image);
    const int h = rgb.h, w = rgb.w;

    Tape t;
    Binder bind(t, params);  // read-only: no leaf collects gradients
    Value x = t.leaf(image_to_chw(rgb));
    EncoderFeatures sf = encoder_forward(t, bind, "student.encoder", x);

    InferResult res;
    res.aggregate = Tensor({1, h, w});
    res.seg = Tensor({1, h, w});
    if (variant == Variant::only_seg) {
        const auto& s3 = t.val(sf.s3).shape;
        Value seg = decoder_forward(t, bind, "decoder", t.leaf(Tensor({1, s3[1], s3[2]})), sf);
        res.seg = t.val(seg);
    } else {
        EncoderFeatures tf = encoder_forward(t, bind, "teacher.encoder", x);
        res.aggregate = t.val(aggregate_discrepancy(t, tf, sf, h, w));
        if (variant != Variant::only_ts) {
            const auto& s3 = t.val(sf.s3).shape;
            Value agg = aggregate_discrepancy(t, tf, sf, s3[1], s3[2]);
            res.seg = t.val(decoder_forward(t, bind, "decoder", agg, sf));
        }
    }

    FusedScore fs = fuse_score_map(res.aggregate.v, res.seg.v, h, w);
    res.score_map = Tensor({1, h, w});
    res.score_map.v = std::move(fs.map);
    res.image_score = fs.image_score;
    return res;
}

FusedScore fuse_score_map(const std::vector<double>& aggregate, const std::vector<double>& seg,
                          int h, int w, double lambda, double sigma) {
    const size_t n = size_t(h) * size_t(w);
    if (h <= 0 || w <= 0 || aggregate.size() != n || seg.size() != n)
        throw ShapeError("fuse_score_map: rasters must both be " + std::to_string(h) + "x" +
                         std::to_string(w));
    std::vector<double> fused(n);
    for (size_t i = 0; i < n; ++i) fused[i] = aggregate[i] + lambda * seg[i];
    FusedScore out;
    out.map = gaussian_blur(fused, h, w, sigma);
    out.image_score = top_k_mean(out.map, kScoreTopK);
    return out;
}

}  // namespace daf::nn
