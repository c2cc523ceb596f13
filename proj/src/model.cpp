#include "daf/model.hpp"

#include <atomic>
#include <bit>
#include <cmath>

#include "daf/error.hpp"
#include "daf/rng.hpp"

namespace daf::nn {

// ------------------------------------------------------------------ ParamStore

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (map_.count(name)) throw ParamError("duplicate parameter: " + name);
    names_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ParamError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ParamError("unknown parameter: " + name);
    return it->second;
}

long ParamStore::value_count() const {
    long n = 0;
    for (const auto& name : names_) n += map_.at(name).size();
    return n;
}

uint64_t ParamStore::checksum() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (const auto& name : names_) {
        for (char c : name) mix(uint8_t(c));
        mix(0);
        const Tensor& t = map_.at(name);
        for (long i = 0; i < t.size(); ++i) {
            uint64_t bits = std::bit_cast<uint64_t>(t[i]);
            for (int b = 0; b < 8; ++b) mix(uint8_t(bits >> (8 * b)));
        }
    }
    return h;
}

Value Binder::operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const bool train = trainable_ && trainable_(name);
    Value v = tape_->leaf(store_->at(name), train);
    cache_.emplace(name, v);
    return v;
}

// ---------------------------------------------------------------- initializers

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= uint8_t(c);
        h *= 1099511628211ull;
    }
    return h;
}

Tensor he_normal(std::vector<int> shape, int fan_in, uint64_t stream) {
    Tensor t(std::move(shape));
    Rng rng(stream);
    const double std = std::sqrt(2.0 / double(fan_in));
    for (long i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
    return t;
}

}  // namespace

void init_conv(ParamStore& ps, const std::string& name, int cout, int cin, int k, uint64_t seed) {
    ps.add(name + ".w",
           he_normal({cout, cin, k, k}, cin * k * k, Rng::derive(seed, fnv1a(name + ".w"))));
    ps.add(name + ".b", Tensor({cout}));
}

void init_gn(ParamStore& ps, const std::string& name, int c) {
    Tensor g({c});
    g.fill(1.0);
    ps.add(name + ".g", std::move(g));
    ps.add(name + ".b", Tensor({c}));
}

void init_linear(ParamStore& ps, const std::string& name, int out_n, int in_n, uint64_t seed) {
    ps.add(name + ".w", he_normal({out_n, in_n}, in_n, Rng::derive(seed, fnv1a(name + ".w"))));
    ps.add(name + ".b", Tensor({out_n}));
}

namespace {

void init_block(ParamStore& ps, const std::string& base, int cin, int cout, bool proj,
                uint64_t seed) {
    init_conv(ps, base + ".conv1", cout, cin, 3, seed);
    init_gn(ps, base + ".gn1", cout);
    init_conv(ps, base + ".conv2", cout, cout, 3, seed);
    init_gn(ps, base + ".gn2", cout);
    if (proj) {
        init_conv(ps, base + ".proj", cout, cin, 1, seed);
        init_gn(ps, base + ".projgn", cout);
    }
}

}  // namespace

void init_encoder(ParamStore& ps, const std::string& prefix, uint64_t seed) {
    init_conv(ps, prefix + ".stem.conv", kStageChannels[0], 3, 3, seed);
    init_gn(ps, prefix + ".stem.gn", kStageChannels[0]);
    init_block(ps, prefix + ".s1.b1", kStageChannels[0], kStageChannels[0], false, seed);
    init_block(ps, prefix + ".s1.b2", kStageChannels[0], kStageChannels[0], false, seed);
    init_block(ps, prefix + ".s2.b1", kStageChannels[0], kStageChannels[1], true, seed);
    init_block(ps, prefix + ".s2.b2", kStageChannels[1], kStageChannels[1], false, seed);
    init_block(ps, prefix + ".s3.b1", kStageChannels[1], kStageChannels[2], true, seed);
    init_block(ps, prefix + ".s3.b2", kStageChannels[2], kStageChannels[2], false, seed);
}

void init_decoder(ParamStore& ps, const std::string& prefix, uint64_t seed) {
    const int c1 = kStageChannels[0], c2 = kStageChannels[1], c3 = kStageChannels[2];
    init_conv(ps, prefix + ".seg1.conv1", c3, c3 + 1, 3, seed);
    init_gn(ps, prefix + ".seg1.gn1", c3);
    init_conv(ps, prefix + ".seg1.conv2", c3, c3, 3, seed);
    init_gn(ps, prefix + ".seg1.gn2", c3);
    init_conv(ps, prefix + ".seg2.conv1", c2, c3 + c2, 3, seed);
    init_gn(ps, prefix + ".seg2.gn1", c2);
    init_conv(ps, prefix + ".seg2.conv2", c2, c2, 3, seed);
    init_gn(ps, prefix + ".seg2.gn2", c2);
    init_conv(ps, prefix + ".seg3.conv1", c1, c2 + c1, 3, seed);
    init_gn(ps, prefix + ".seg3.gn1", c1);
    init_conv(ps, prefix + ".seg3.conv2", c1, c1, 3, seed);
    init_gn(ps, prefix + ".seg3.gn2", c1);
    init_conv(ps, prefix + ".out", 1, c1, 3, seed);
}

void init_aux(ParamStore& ps, const std::string& prefix, int channels, uint64_t seed) {
    if (channels < 2 || channels % 2) throw ParamError("aux head needs an even channel count");
    init_conv(ps, prefix + ".conv1", channels / 2, channels, 1, seed);
    init_conv(ps, prefix + ".conv2", 1, channels / 2, 1, seed);
}

// -------------------------------------------------------------------- forward

namespace {

Value res_block(Tape& t, Binder& bind, const std::string& base, Value x, int stride, bool proj) {
    Value h = t.conv2d(x, bind(base + ".conv1.w"), bind(base + ".conv1.b"), stride, 1);
    h = t.group_norm(h, bind(base + ".gn1.g"), bind(base + ".gn1.b"), kGnGroups, kGnEps);
    h = t.relu(h);
    h = t.conv2d(h, bind(base + ".conv2.w"), bind(base + ".conv2.b"), 1, 1);
    h = t.group_norm(h, bind(base + ".gn2.g"), bind(base + ".gn2.b"), kGnGroups, kGnEps);
    Value skip = x;
    if (proj) {
        skip = t.conv2d(x, bind(base + ".proj.w"), bind(base + ".proj.b"), stride, 0);
        skip = t.group_norm(skip, bind(base + ".projgn.g"), bind(base + ".projgn.b"), kGnGroups,
                            kGnEps);
    }
    return t.relu(t.add(h, skip));
}

// Two conv3x3+norm+relu stages at constant width.
Value seg_block(Tape& t, Binder& bind, const std::string& base, Value x) {
    Value h = t.conv2d(x, bind(base + ".conv1.w"), bind(base + ".conv1.b"), 1, 1);
    h = t.group_norm(h, bind(base + ".gn1.g"), bind(base + ".gn1.b"), kGnGroups, kGnEps);
    h = t.relu(h);
    h = t.conv2d(h, bind(base + ".conv2.w"), bind(base + ".conv2.b"), 1, 1);
    h = t.group_norm(h, bind(base + ".gn2.g"), bind(base + ".gn2.b"), kGnGroups, kGnEps);
    return t.relu(h);
}

std::atomic<long> g_aux_evals{0};

}  // namespace

EncoderFeatures encoder_forward(Tape& t, Binder& bind, const std::string& prefix, Value image) {
    const Tensor& img = t.val(image);
    if (img.shape.size() != 3 || img.c() != 3) throw ShapeError("encoder expects a (3,H,W) image");
    if (img.h() % 16 || img.w() % 16)
        throw ShapeError("encoder input extent must be a multiple of 16");
    Value x = t.conv2d(image, bind(prefix + ".stem.conv.w"), bind(prefix + ".stem.conv.b"), 2, 1);
    x = t.group_norm(x, bind(prefix + ".stem.gn.g"), bind(prefix + ".stem.gn.b"), kGnGroups,
                     kGnEps);
    x = t.maxpool2x2(t.relu(x));
    x = res_block(t, bind, prefix + ".s1.b1", x, 1, false);
    Value s1 = res_block(t, bind, prefix + ".s1.b2", x, 1, false);
    x = res_block(t, bind, prefix + ".s2.b1", s1, 2, true);
    Value s2 = res_block(t, bind, prefix + ".s2.b2", x, 1, false);
    x = res_block(t, bind, prefix + ".s3.b1", s2, 2, true);
    Value s3 = res_block(t, bind, prefix + ".s3.b2", x, 1, false);
    return {s1, s2, s3};
}

Value decoder_forward(Tape& t, Binder& bind, const std::string& prefix, Value aggregate,
                      const EncoderFeatures& f) {
    const Tensor& s3 = t.val(f.s3);
    Value agg = aggregate;
    if (t.val(agg).h() != s3.h() || t.val(agg).w() != s3.w())
        agg = t.resize_bl(agg, s3.h(), s3.w());
    Value x = seg_block(t, bind, prefix + ".seg1", t.concat_ch({agg, f.s3}));
    x = t.resize_bl(x, t.val(f.s2).h(), t.val(f.s2).w());
    x = seg_block(t, bind, prefix + ".seg2", t.concat_ch({x, f.s2}));
    x = t.resize_bl(x, t.val(f.s1).h(), t.val(f.s1).w());
    x = seg_block(t, bind, prefix + ".seg3", t.concat_ch({x, f.s1}));
    x = t.resize_bl(x, 2 * t.val(x).h(), 2 * t.val(x).w());
    x = t.resize_bl(x, 2 * t.val(x).h(), 2 * t.val(x).w());
    x = t.conv2d(x, bind(prefix + ".out.w"), bind(prefix + ".out.b"), 1, 1);
    return t.sigmoid(x);
}

Value aux_forward(Tape& t, Binder& bind, const std::string& prefix, Value feature) {
    g_aux_evals.fetch_add(1, std::memory_order_relaxed);
    Value h = t.conv2d(feature, bind(prefix + ".conv1.w"), bind(prefix + ".conv1.b"), 1, 0);
    h = t.relu(h);
    h = t.conv2d(h, bind(prefix + ".conv2.w"), bind(prefix + ".conv2.b"), 1, 0);
    return t.sigmoid(h);
}

long aux_eval_count() { return g_aux_evals.load(std::memory_order_relaxed); }
void reset_aux_eval_count() { g_aux_evals.store(0, std::memory_order_relaxed); }

void copy_prefix(ParamStore& ps, const std::string& from, const std::string& to) {
    const std::string from_dot = from + ".";
    const std::vector<std::string> snapshot = ps.names();
    for (const auto& name : snapshot) {
        if (name.rfind(from_dot, 0) != 0) continue;
        const std::string dest = to + "." + name.substr(from_dot.size());
        if (ps.has(dest))
            ps.at(dest) = ps.at(name);
        else
            ps.add(dest, ps.at(name));
    }
}

// ------------------------------------------------------------------ conversion

Tensor image_to_chw(const Image& img) {
    Tensor t({img.c, img.h, img.w});
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) t.at(ch, y, x) = img.at(y, x, ch);
    return t;
}

Image chw_to_image(const Tensor& t) {
    if (t.shape.size() != 3) throw ShapeError("chw_to_image expects a rank-3 tensor");
    Image img(t.h(), t.w(), t.c());
    for (int ch = 0; ch < t.c(); ++ch)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) img.at(y, x, ch) = t.at(ch, y, x);
    return img;
}

}  // namespace daf::nn
