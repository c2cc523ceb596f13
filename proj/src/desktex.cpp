#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "daf/dataset.hpp"
#include "daf/error.hpp"
#include "daf/perlin.hpp"
#include "daf/rng.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace daf::data {

namespace {

constexpr int kSide = 256;
constexpr double kPi = 3.14159265358979323846;
// mask area bounds: 0.1% .. 20% of the image (min rounded up)
constexpr long kMinArea = (long(kSide) * kSide + 999) / 1000;
constexpr long kMaxArea = long(kSide) * kSide / 5;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double lerp(double a, double b, double t) { return a + (b - a) * t; }

std::string numbered(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return buf;
}

void make_dirs(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

// ------------------------------------------------------------ normal images
//
// Wood-grain look: two octaves of gradient noise blended between a fixed
// dark/light palette, a vertical luminance ramp (brighter toward the
// bottom), and thin grid lines with different horizontal and vertical
// spacing. Ramp and asymmetric spacing make the four image rotations
// mutually distinguishable, which the rotation-pretext pretraining needs.

constexpr double kDark[3] = {0.42, 0.30, 0.20};
constexpr double kLight[3] = {0.79, 0.63, 0.43};

Image normal_base(uint64_t stream) {
    Rng r(Rng::derive(stream, 1));
    const std::vector<double> coarse = synth::perlin_noise(kSide, kSide, 32, Rng::derive(stream, 2));
    const std::vector<double> fine = synth::perlin_noise(kSide, kSide, 8, Rng::derive(stream, 3));
    const int phase_x = int(r.below(24));
    const int phase_y = int(r.below(36));
    double jitter[3];
    for (double& j : jitter) j = r.uniform(-0.02, 0.02);

    Image img(kSide, kSide, 3);
    for (int y = 0; y < kSide; ++y) {
        const double ramp = double(y) / (kSide - 1);
        for (int x = 0; x < kSide; ++x) {
            const size_t p = size_t(y) * kSide + x;
            const double mix = clamp01(0.5 + 0.35 * coarse[p] + 0.15 * fine[p]);
            const double grid = (x % 24 == phase_x || y % 36 == phase_y) ? 0.80 : 1.0;
            for (int c = 0; c < 3; ++c) {
                double v = lerp(kDark[c], kLight[c], mix) + jitter[c];
                v = v * 0.82 + 0.15 * ramp;
                img.at(y, x, c) = clamp01(v * grid);
            }
        }
    }
    return img;
}

// ------------------------------------------------------------- defect family
//
// Held out from every training-time corruption strategy: thin multi-segment
// scratch polylines and irregular blob erasures. Nothing here is an
// axis-aligned rectangle or a constant-color fill.

// Angle at least 10 degrees away from both axes, so a single stroke can
// never trace an axis-aligned bar.
double off_axis_angle(Rng& r) {
    for (;;) {
        const double a = r.uniform(0.0, 2.0 * kPi);
        const double m = std::fmod(a, kPi / 2.0);
        if (std::min(m, kPi / 2.0 - m) > kPi / 18.0) return a;
    }
}

struct Scratch {
    Mask mask{kSide, kSide};
    std::vector<double> arc;  // arc-length position per stamped pixel
};

void stamp(Scratch& s, double cy, double cx, double rad, double arc_pos) {
    const int y0 = std::max(0, int(std::floor(cy - rad)));
    const int y1 = std::min(kSide - 1, int(std::ceil(cy + rad)));
    const int x0 = std::max(0, int(std::floor(cx - rad)));
    const int x1 = std::min(kSide - 1, int(std::ceil(cx + rad)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad) {
                s.mask.at(y, x) = 1;
                s.arc[size_t(y) * kSide + x] = arc_pos;
            }
}

Scratch make_scratch(Rng& r) {
    for (int attempt = 0;; ++attempt) {
        Scratch s;
        s.arc.assign(size_t(kSide) * kSide, 0.0);
        const double rad = 1.1 + 1.3 * r.uniform() + 0.5 * attempt;
        const int n_seg = 2 + int(r.below(3));
        double y = r.uniform(0.18, 0.82) * kSide;
        double x = r.uniform(0.18, 0.82) * kSide;
        double ang = off_axis_angle(r);
        double arc_pos = 0.0;
        for (int seg = 0; seg < n_seg; ++seg) {
            const double len = r.uniform(kSide / 8.0, kSide / 3.0);
            const int steps = std::max(2, int(len * 2));
            bool exited = false;
            for (int t = 0; t <= steps; ++t) {
                const double f = double(t) / steps;
                const double yy = y + std::sin(ang) * len * f;
                const double xx = x + std::cos(ang) * len * f;
                if (yy < 6 || yy > kSide - 7 || xx < 6 || xx > kSide - 7) {
                    exited = true;
                    break;
                }
                stamp(s, yy, xx, rad, arc_pos + len * f);
            }
            if (exited) break;
            y += std::sin(ang) * len;
            x += std::cos(ang) * len;
            arc_pos += len;
            // turn by 15..55 degrees, nudged further if the result hugs an axis
            double turn = r.uniform(kPi / 12.0, kPi / 3.3) * (r.below(2) ? 1.0 : -1.0);
            ang += turn;
            const double m = std::fmod(std::fmod(ang, kPi / 2.0) + kPi / 2.0, kPi / 2.0);
            if (std::min(m, kPi / 2.0 - m) <= kPi / 18.0) ang += kPi / 10.0;
        }
        if (s.mask.area() >= kMinArea / 2 && s.mask.area() <= kMaxArea) return s;
    }
}

void apply_scratch(Image& img, const Scratch& s, Rng& r) {
    const bool dark = r.below(2) == 0;
    const double col[3] = {dark ? 0.07 : 0.95, dark ? 0.06 : 0.93, dark ? 0.05 : 0.88};
    const double freq = r.uniform(0.05, 0.18);
    const double phase = r.uniform(0.0, 2.0 * kPi);
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
            if (!s.mask.at(y, x)) continue;
            // opacity varies along the stroke: never a constant fill
            const double a = 0.5 + 0.3 * std::sin(s.arc[size_t(y) * kSide + x] * freq + phase);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = clamp01(lerp(img.at(y, x, c), col[c], a));
        }
}

Mask make_blob(Rng& r) {
    for (;;) {
        const double cy = r.uniform(0.22, 0.78) * kSide;
        const double cx = r.uniform(0.22, 0.78) * kSide;
        const double rad = r.uniform(12.0, 33.0);
        double amp[3], ph[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = r.uniform(0.4, 1.0);
            ph[k] = r.uniform(0.0, 2.0 * kPi);
        }
        const int harm[3] = {2, 3, 5};
        Mask m(kSide, kSide);
        const int reach = int(rad * 1.6) + 2;
        const int y0 = std::max(0, int(cy) - reach), y1 = std::min(kSide - 1, int(cy) + reach);
        const int x0 = std::max(0, int(cx) - reach), x1 = std::min(kSide - 1, int(cx) + reach);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double phi = std::atan2(dy, dx);
                double rho = 1.0;
                for (int k = 0; k < 3; ++k) rho += 0.18 * amp[k] * std::sin(harm[k] * phi + ph[k]);
                if (dy * dy + dx * dx <= rad * rho * rad * rho) m.at(y, x) = 1;
            }
        if (m.area() >= kMinArea && m.area() <= kMaxArea) return m;
    }
}

void apply_blob(Image& img, const Mask& m, Rng& r, uint64_t noise_seed) {
    double mean[3] = {0, 0, 0};
    long n = 0;
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x)
            if (m.at(y, x)) {
                for (int c = 0; c < 3; ++c) mean[c] += img.at(y, x, c);
                ++n;
            }
    for (double& v : mean) v /= double(n);
    const std::vector<double> mod = synth::perlin_noise(kSide, kSide, 8, noise_seed);
    const double alpha = r.uniform(0.75, 0.92);
    const double level = r.uniform(0.35, 0.60);
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
            if (!m.at(y, x)) continue;
            // texture erased: flattened toward the scaled region mean, with a
            // noise term so the fill is never one constant color
            const double gain = level + 0.25 * mod[size_t(y) * kSide + x];
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = clamp01(lerp(img.at(y, x, c), mean[c] * gain, alpha));
        }
}

void union_into(Mask& acc, const Mask& m) {
    for (size_t i = 0; i < acc.data.size(); ++i)
        if (m.data[i]) acc.data[i] = 1;
}

}  // namespace

DatasetIndex generate_desktex(const std::string& out_dir, int n_train, int n_test_normal,
                              int n_test_anom, uint64_t seed) {
    if (n_train < 1 || n_test_normal < 1 || n_test_anom < 1)
        throw ConfigError("generate_desktex: all counts must be >= 1");

    const fs::path root(out_dir);
    const fs::path cat = root / "desktex";
    make_dirs(cat / "train" / "good");
    make_dirs(cat / "test" / "good");

    DatasetIndex idx;
    idx.category = "desktex";
    idx.root = cat.string();

    for (int i = 0; i < n_train; ++i) {
        const Image img = normal_base(Rng::derive(seed, 11, uint64_t(i)));
        const fs::path p = cat / "train" / "good" / (numbered(i) + ".png");
        save_image(img, p.string());
        idx.train_normals.push_back(p.string());
    }
    for (int i = 0; i < n_test_normal; ++i) {
        const Image img = normal_base(Rng::derive(seed, 12, uint64_t(i)));
        const fs::path p = cat / "test" / "good" / (numbered(i) + ".png");
        save_image(img, p.string());
        idx.test_items.push_back({p.string(), false, "", "good"});
    }
    for (int i = 0; i < n_test_anom; ++i) {
        Image img = normal_base(Rng::derive(seed, 13, uint64_t(i)));
        Rng r(Rng::derive(seed, 14, uint64_t(i)));
        const bool scratchy = i % 2 == 0;
        const std::string defect = scratchy ? "scratch" : "blob";
        Mask mask(kSide, kSide);
        for (;;) {
            mask = Mask(kSide, kSide);
            Image trial = img;
            const int count = 1 + (r.uniform() < 0.35 ? 1 : 0);
            for (int d = 0; d < count; ++d) {
                if (scratchy) {
                    const Scratch s = make_scratch(r);
                    apply_scratch(trial, s, r);
                    union_into(mask, s.mask);
                } else {
                    const Mask b = make_blob(r);
                    apply_blob(trial, b, r, Rng::derive(seed, 15, uint64_t(i), uint64_t(d)));
                    union_into(mask, b);
                }
            }
            if (mask.area() >= kMinArea && mask.area() <= kMaxArea) {
                img = std::move(trial);
                break;
            }
        }
        make_dirs(cat / "test" / defect);
        make_dirs(cat / "ground_truth" / defect);
        const fs::path p = cat / "test" / defect / (numbered(i) + ".png");
        const fs::path mp = cat / "ground_truth" / defect / (numbered(i) + "_mask.png");
        save_image(img, p.string());
        save_mask(mask, mp.string());
        idx.test_items.push_back({p.string(), true, mp.string(), defect});
    }

    // same ordering the directory scan produces: defect name, then file name
    std::sort(idx.test_items.begin(), idx.test_items.end(), [](const TestItem& a, const TestItem& b) {
        return a.defect != b.defect ? a.defect < b.defect : a.image_path < b.image_path;
    });

    nlohmann::ordered_json j;
    j["schema"] = "desktex-v1";
    j["category"] = "desktex";
    j["image_size"] = kSide;
    j["seed"] = seed;
    j["n_train"] = n_train;
    j["n_test_normal"] = n_test_normal;
    j["n_test_anom"] = n_test_anom;
    std::ofstream f(root / "dataset.json");
    if (!f) throw IoError("cannot write " + (root / "dataset.json").string());
    f << j.dump(2) << "\n";
    return idx;
}

std::vector<std::string> generate_donor_textures(const std::string& out_dir, int count,
                                                 uint64_t seed) {
    if (count < 0) throw ConfigError("generate_donor_textures: count must be >= 0");
    make_dirs(out_dir);
    std::vector<std::string> paths;
    for (int i = 0; i < count; ++i) {
        Rng r(Rng::derive(seed, 31, uint64_t(i)));
        Image img(kSide, kSide, 3);
        switch (i % 4) {
            case 0: {  // diagonal stripes, cool palette
                const double th = r.uniform(0.3, 1.2);
                const double period = r.uniform(10.0, 26.0);
                const double c0[3] = {0.12, 0.25, 0.55}, c1[3] = {0.55, 0.80, 0.85};
                for (int y = 0; y < kSide; ++y)
                    for (int x = 0; x < kSide; ++x) {
                        const double s =
                            0.5 + 0.5 * std::sin(2.0 * kPi * (x * std::cos(th) + y * std::sin(th)) /
                                                 period);
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = lerp(c0[c], c1[c], s);
                    }
                break;
            }
            case 1: {  // checkerboard with fine noise
                const int cell = 8 + 4 * int(r.below(4));
                const std::vector<double> n8 =
                    synth::perlin_noise(kSide, kSide, 8, Rng::derive(seed, 32, uint64_t(i)));
                const double c0[3] = {0.10, 0.45, 0.20}, c1[3] = {0.85, 0.90, 0.55};
                for (int y = 0; y < kSide; ++y)
                    for (int x = 0; x < kSide; ++x) {
                        const double base = ((y / cell + x / cell) % 2 == 0) ? 0.0 : 1.0;
                        const double t = clamp01(base + 0.15 * n8[size_t(y) * kSide + x]);
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = lerp(c0[c], c1[c], t);
                    }
                break;
            }
            case 2: {  // marbled noise, magenta/grey
                const std::vector<double> a =
                    synth::perlin_noise(kSide, kSide, 32, Rng::derive(seed, 33, uint64_t(i)));
                const std::vector<double> b =
                    synth::perlin_noise(kSide, kSide, 8, Rng::derive(seed, 34, uint64_t(i)));
                const double c0[3] = {0.55, 0.15, 0.50}, c1[3] = {0.80, 0.78, 0.80};
                for (size_t p = 0; p < a.size(); ++p) {
                    const double t = clamp01(0.5 + 0.4 * a[p] + 0.2 * b[p]);
                    for (int c = 0; c < 3; ++c)
                        img.data[p * 3 + size_t(c)] = lerp(c0[c], c1[c], t);
                }
                break;
            }
            default: {  // concentric rings
                const double cy = r.uniform(0.3, 0.7) * kSide;
                const double cx = r.uniform(0.3, 0.7) * kSide;
                const double period = r.uniform(12.0, 30.0);
                const double c0[3] = {0.90, 0.60, 0.10}, c1[3] = {0.25, 0.10, 0.05};
                for (int y = 0; y < kSide; ++y)
                    for (int x = 0; x < kSide; ++x) {
                        const double d = std::hypot(y - cy, x - cx);
                        const double s = 0.5 + 0.5 * std::sin(2.0 * kPi * d / period);
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = lerp(c0[c], c1[c], s);
                    }
                break;
            }
        }
        const fs::path p = fs::path(out_dir) / ("tex_" + numbered(i) + ".png");
        save_image(img, p.string());
        paths.push_back(p.string());
    }
    std::sort(paths.begin(), paths.end());
    return paths;
}

}  // namespace daf::data
