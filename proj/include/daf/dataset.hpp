#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daf/eval.hpp"
#include "daf/image.hpp"

namespace daf::data {

// One labeled test entry of a category. Normal items ("good") have no mask
// file; their ground truth is implicitly all-zero at the image's size.
struct TestItem {
    std::string image_path;
    bool anomalous = false;
    std::string mask_path;  // "" for normal items
    std::string defect;     // test subfolder name ("good", "scratch", ...)

    bool operator==(const TestItem&) const = default;
};

struct DatasetIndex {
    std::string category;
    std::string root;                        // the category directory
    std::vector<std::string> train_normals;  // sorted by file name
    std::vector<TestItem> test_items;        // sorted by (defect, file name)
};

// Scans a tree of the layout
//   <root>/<category>/train/good/*.png
//   <root>/<category>/test/<defect>/*.png
//   <root>/<category>/ground_truth/<defect>/<stem>_mask.png
// and returns one index per category, sorted by category name. Directories
// without train/good are skipped. Throws IoError when no category is found,
// when a category's train/good is empty, or when an anomalous test image
// has no matching mask file (the message names every offender).
std::vector<DatasetIndex> ingest_mvtec_dir(const std::string& root);

// Procedural desk-scale benchmark: one category "desktex" of 256x256 wood-
// grain PNGs (layered gradient noise + fixed palette + asymmetric grid
// lines + a vertical luminance ramp, so normality has learnable structure
// and the four rotations are distinguishable). Anomalous test images take a
// fresh normal base and corrupt it with a dedicated defect family — thin
// multi-segment scratch polylines and irregular blob erasures — that never
// produces axis-aligned rectangles or constant-color fills; masks mark the
// corrupted pixels exactly, with area between 0.1% and 20% of the image.
// Writes the layout above plus a <out_dir>/dataset.json manifest and
// returns the index. Byte-identical across runs with the same arguments.
DatasetIndex generate_desktex(const std::string& out_dir, int n_train, int n_test_normal,
                              int n_test_anom, uint64_t seed);

// Writes `count` 256x256 donor texture PNGs (stripes, checkers, off-palette
// noise, rings) under out_dir for the splice-based corruption strategies,
// deterministically in seed, and returns the sorted file paths.
std::vector<std::string> generate_donor_textures(const std::string& out_dir, int count,
                                                 uint64_t seed);

// Loads every *.png / *.ppm in a directory, sorted by name.
std::vector<Image> load_images_in_dir(const std::string& dir);

// Bridges an index to the in-memory training / evaluation types. Masks are
// checked against their image's size after loading (mismatch -> ShapeError
// naming the file); normal items get all-zero masks. category is copied
// from the index.
std::vector<Image> load_train_images(const DatasetIndex& idx);
std::vector<eval::EvalItem> load_eval_items(const DatasetIndex& idx);

}  // namespace daf::data
