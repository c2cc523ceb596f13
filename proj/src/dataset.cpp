#include "daf/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <utility>

#include "daf/error.hpp"

namespace fs = std::filesystem;

namespace daf::data {

namespace {

bool image_file(const fs::path& p) {
    const std::string e = p.extension().string();
    return e == ".png" || e == ".ppm";
}

std::vector<std::string> sorted_files(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && image_file(e.path())) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<DatasetIndex> ingest_mvtec_dir(const std::string& root) {
    const fs::path rp(root);
    if (!fs::is_directory(rp)) throw IoError("ingest: not a directory: " + root);
    std::vector<std::string> cats;
    for (const auto& e : fs::directory_iterator(rp))
        if (e.is_directory() && fs::is_directory(e.path() / "train" / "good"))
            cats.push_back(e.path().filename().string());
    std::sort(cats.begin(), cats.end());
    if (cats.empty()) throw IoError("ingest: no category with train/good under " + root);

    std::vector<DatasetIndex> out;
    for (const std::string& cat : cats) {
        DatasetIndex idx;
        idx.category = cat;
        idx.root = (rp / cat).string();
        idx.train_normals = sorted_files(rp / cat / "train" / "good");
        if (idx.train_normals.empty())
            throw IoError("ingest: empty train/good in category " + cat);

        std::vector<std::string> defects;
        const fs::path tdir = rp / cat / "test";
        if (fs::is_directory(tdir))
            for (const auto& e : fs::directory_iterator(tdir))
                if (e.is_directory()) defects.push_back(e.path().filename().string());
        std::sort(defects.begin(), defects.end());

        std::vector<std::string> missing;
        for (const std::string& d : defects) {
            for (const std::string& img : sorted_files(tdir / d)) {
                TestItem item;
                item.image_path = img;
                item.defect = d;
                if (d != "good") {
                    item.anomalous = true;
                    const fs::path mp =
                        rp / cat / "ground_truth" / d / (fs::path(img).stem().string() + "_mask.png");
                    if (!fs::is_regular_file(mp)) {
                        missing.push_back(img);
                        continue;
                    }
                    item.mask_path = mp.string();
                }
                idx.test_items.push_back(std::move(item));
            }
        }
        if (!missing.empty()) {
            std::string msg = "ingest: anomalous images without a mask:";
            for (const std::string& m : missing) msg += " " + m;
            throw IoError(msg);
        }
        out.push_back(std::move(idx));
    }
    return out;
}

std::vector<Image> load_images_in_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("load_images_in_dir: not a directory: " + dir);
    std::vector<Image> out;
    for (const std::string& p : sorted_files(dir)) out.push_back(load_image(p, 0));
    return out;
}

std::vector<Image> load_train_images(const DatasetIndex& idx) {
    std::vector<Image> out;
    out.reserve(idx.train_normals.size());
    for (const std::string& p : idx.train_normals) out.push_back(load_image(p, 0));
    return out;
}

std::vector<eval::EvalItem> load_eval_items(const DatasetIndex& idx) {
    std::vector<eval::EvalItem> out;
    out.reserve(idx.test_items.size());
    for (const TestItem& t : idx.test_items) {
        eval::EvalItem item;
        item.image = load_image(t.image_path, 0);
        if (t.anomalous) {
            item.mask = load_mask(t.mask_path, 0);
            if (item.mask.h != item.image.h || item.mask.w != item.image.w)
                throw ShapeError("mask " + t.mask_path + " is " + std::to_string(item.mask.h) +
                                 "x" + std::to_string(item.mask.w) + " but " + t.image_path +
                                 " is " + std::to_string(item.image.h) + "x" +
                                 std::to_string(item.image.w));
        } else {
            item.mask = Mask(item.image.h, item.image.w);
        }
        item.category = idx.category;
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace daf::data
